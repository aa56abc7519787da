#pragma once

// Subcommand implementations for the `tiler` executable. Each command takes a
// validated RunConfig plus its own options and writes files under cfg.out.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tiler/tiler.hpp"

namespace tiler::cli {

namespace fs = std::filesystem;

/// Errors in user input (bad flags or config); mapped to exit code 1.
struct UsageError : Error {
    using Error::Error;
};

inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kEstimateFile = "estimate.csv";
inline constexpr const char* kBoxFile = "boxes.bin";

inline void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw Error("cannot write " + p.string());
    out << text;
    if (!out)
        throw Error("write failed: " + p.string());
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline Network require_network(const RunConfig& cfg)
{
    if (cfg.network_path.empty())
        throw UsageError("no network given (use --network or the config's \"network\" field)");
    return load_weights(cfg.network_path);
}

// ---------------------------------------------------------------------------
// gen-dataset

/// Uniform double in [0, 1) from the top 53 bits, identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Draws `cfg.count` states uniformly from the sample space and writes
/// images/NNNNNN.pgm plus labels.csv (file,delta,theta).
inline void cmd_gen_dataset(const RunConfig& cfg)
{
    const fs::path out = cfg.out;
    fs::create_directories(out / "images");
    std::mt19937_64 rng(cfg.seed);
    std::string labels = "file,delta,theta\n";
    const auto& sd = cfg.sample_space.delta;
    const auto& st = cfg.sample_space.theta;
    for (std::size_t k = 0; k < cfg.count; ++k) {
        const double d = sd.lo + unit_uniform(rng) * (sd.hi - sd.lo);
        const double t = st.lo + unit_uniform(rng) * (st.hi - st.lo);
        const std::string name = fmt::format("images/{:06}.pgm", k);
        write_pgm((out / name).string(), render({d, t}, cfg.scene));
        labels += fmt::format("{},{},{}\n", name, d, t);
    }
    write_text(out / "labels.csv", labels);
    write_json(out / "dataset.json", {{"config", config_snapshot(cfg)}, {"images", cfg.count}});
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
    bool resume = false;
    bool boxes = false;     // also write the box sidecar for fast queries
    bool timings = false;   // adds a solve_seconds column (not reproducible)
    bool quiet = false;
};

struct VerifyOutcome {
    std::size_t tiles = 0;
    std::size_t resumed = 0;
    std::vector<double> global;
};

inline nlohmann::json summary_json(const RunConfig& cfg, const Grid& grid, const VerifyOutcome& o,
                                   double wall, double solve)
{
    const auto names = RoadSceneProblem::quantity_names();
    const double ranges[2] = {cfg.space.delta.width(), cfg.space.theta.width()};
    nlohmann::json global = nlohmann::json::object();
    nlohmann::json relative = nlohmann::json::object();
    for (std::size_t q = 0; q < names.size() && q < o.global.size(); ++q) {
        global[names[q]] = o.global[q];
        if (ranges[q] > 0.0)
            relative[names[q]] = o.global[q] / ranges[q];
    }
    return {{"config", config_snapshot(cfg)},
            {"cell_delta", cfg.cell_delta},
            {"cell_theta", cfg.cell_theta},
            {"method", to_string(cfg.method)},
            {"grid", {{"delta_cells", grid.delta_axis().count()}, {"theta_cells", grid.theta_axis().count()}}},
            {"tiles", o.tiles},
            {"resumed_tiles", o.resumed},
            {"global_bound", global},
            {"global_bound_relative_to_range", relative},
            {"wall_seconds", wall},
            {"solve_seconds", solve},
            {"report", kReportFile}};
}

inline VerifyOutcome cmd_verify(const RunConfig& cfg, const VerifyOptions& opt = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    const Network net = require_network(cfg);
    const RoadSceneProblem problem(cfg.scene, cfg.space, cfg.cell_delta, cfg.cell_theta);
    const auto names = RoadSceneProblem::quantity_names();
    const fs::path out = cfg.out;
    fs::create_directories(out);
    const fs::path csv_path = out / kReportFile;
    const std::string header = report_csv_header(names, opt.timings);

    VerifyOutcome outcome;
    std::vector<TileResult> previous;
    if (opt.resume && fs::exists(csv_path)) {
        auto table = read_report_csv(csv_path.string());
        std::string got;
        for (std::size_t i = 0; i < table.header.size(); ++i)
            got += (i ? "," : "") + table.header[i];
        if (got != header)
            throw Error("cannot resume: " + csv_path.string() + " has a different header");
        for (std::size_t k = 0; k < table.rows.size(); ++k) {
            if (k >= problem.size() || problem.cell_index(k) != table.rows[k].index)
                throw Error("cannot resume: row " + std::to_string(k + 1) + " does not match the grid");
        }
        fs::resize_file(csv_path, table.bytes_of_complete_rows);
        previous = std::move(table.rows);
    } else {
        write_text(csv_path, header + "\n");
    }
    outcome.resumed = previous.size();

    std::ofstream csv(csv_path, std::ios::binary | std::ios::app);
    if (!csv)
        throw Error("cannot append to " + csv_path.string());
    TilerOptions topt;
    topt.method = cfg.method;
    topt.workers = cfg.workers;
    topt.start = previous.size();
    topt.keep_results = false;
    std::size_t done = previous.size();
    const TileSink sink = [&](std::span<const TileResult> batch) {
        std::string text;
        for (const auto& r : batch)
            text += report_csv_row(r, opt.timings) + "\n";
        csv << text;
        csv.flush();
        if (!csv)
            throw Error("write failed: " + csv_path.string());
        done += batch.size();
        if (!opt.quiet)
            std::cerr << fmt::format("\rverified {}/{} tiles", done, problem.size()) << std::flush;
    };
    const auto report = run_tiler(problem, net, topt, sink);
    csv.close();
    if (!opt.quiet && report.tiles > 0)
        std::cerr << '\n';

    outcome.tiles = previous.size() + report.tiles;
    outcome.global = report.global;
    double solve = report.solve_seconds;
    for (const auto& r : previous) {
        if (outcome.global.empty())
            outcome.global = r.errors;
        for (std::size_t q = 0; q < r.errors.size(); ++q)
            outcome.global[q] = std::max(outcome.global[q], r.errors[q]);
        solve += r.solve_seconds;
    }

    if (opt.boxes) {
        BoxFileWriter writer((out / kBoxFile).string(), cfg.scene.pixel_count);
        constexpr std::size_t chunk = 4096;
        std::vector<PixelBox> boxes;
        for (std::size_t b0 = 0; b0 < problem.size(); b0 += chunk) {
            const std::size_t b1 = std::min(problem.size(), b0 + chunk);
            boxes.assign(b1 - b0, PixelBox{});
            parallel_for(b1 - b0, cfg.workers, [&](std::size_t k) { boxes[k] = problem.pixel_box(b0 + k); });
            for (std::size_t k = b0; k < b1; ++k)
                writer.append(problem.cell_index(k), boxes[k - b0]);
        }
        writer.close();
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out / kSummaryFile, summary_json(cfg, problem.grid(), outcome, wall, solve));
    return outcome;
}

// ---------------------------------------------------------------------------
// Loading a finished verification run.

struct VerifiedRun {
    RunConfig config;
    std::vector<TileResult> results;
};

inline VerifiedRun load_run(const fs::path& dir)
{
    const auto summary_path = dir / kSummaryFile;
    if (!fs::exists(summary_path))
        throw Error("no " + std::string(kSummaryFile) + " in " + dir.string() + " (run `tiler verify` first)");
    const auto summary = detail::read_json_file(summary_path);
    if (!summary.contains("config"))
        throw FormatError(summary_path.string() + ": missing config snapshot");
    VerifiedRun run;
    run.config = apply_config(summary["config"], RunConfig{});
    run.config.validate();
    run.results = read_report_csv((dir / kReportFile).string()).rows;
    return run;
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateOutcome {
    std::size_t tiles = 0;
    std::size_t negative_gaps = 0;
    std::vector<double> global_estimate;
};

/// Sub-grid estimates for every tile of the run in `cfg.out`, written next to
/// the verifier report. `spacing` overrides the snapshot when given.
inline EstimateOutcome cmd_estimate(const fs::path& dir, std::optional<double> spacing,
                                    std::optional<unsigned> workers)
{
    auto run = load_run(dir);
    if (spacing)
        run.config.spacing = *spacing;
    if (workers)
        run.config.workers = *workers;
    run.config.validate();
    const RunConfig& cfg = run.config;
    const Network net = require_network(cfg);
    const Grid grid(cfg.space, cfg.cell_delta, cfg.cell_theta);
    const ErrorField field = build_error_field(std::span(&grid, 1), cfg.scene, net, cfg.spacing, cfg.workers);

    const auto names = RoadSceneProblem::quantity_names();
    std::string text = estimate_csv_header(names) + "\n";
    EstimateOutcome o;
    o.global_estimate.assign(names.size(), 0.0);
    for (const auto& r : run.results) {
        const auto est = field.estimate(grid.region(r.index), cfg.spacing);
        text += estimate_csv_row(r, est) + "\n";
        for (std::size_t q = 0; q < names.size(); ++q) {
            o.global_estimate[q] = std::max(o.global_estimate[q], est.max_errors[q]);
            if (gap(r.errors[q], est.max_errors[q]) < 0.0)
                ++o.negative_gaps;
        }
        ++o.tiles;
    }
    write_text(dir / kEstimateFile, text);
    nlohmann::json global;
    for (std::size_t q = 0; q < names.size(); ++q)
        global[names[q]] = o.global_estimate[q];
    write_json(dir / "estimate.json", {{"config", config_snapshot(cfg)},
                                       {"spacing", cfg.spacing},
                                       {"samples", field.samples()},
                                       {"tiles", o.tiles},
                                       {"global_estimate", global},
                                       {"negative_gaps", o.negative_gaps}});
    return o;
}

// ---------------------------------------------------------------------------
// report

inline constexpr double kTrustedFractionOfRange = 0.03;

/// Heatmaps, cumulative distributions, percentiles and trusted fractions for
/// the run in `dir`; gap heatmaps too when estimate.csv is present.
inline nlohmann::json cmd_report(const fs::path& dir)
{
    const auto run = load_run(dir);
    const RunConfig& cfg = run.config;
    const Grid grid(cfg.space, cfg.cell_delta, cfg.cell_theta);
    if (run.results.size() != grid.size())
        throw Error(fmt::format("report needs the full grid: {} of {} tiles present", run.results.size(),
                                grid.size()));
    const fs::path out = dir / "report";
    fs::create_directories(out);
    const auto names = RoadSceneProblem::quantity_names();
    const double ranges[2] = {cfg.space.delta.width(), cfg.space.theta.width()};

    std::vector<double> area(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k)
        area[k] = grid.region(k).area();

    auto by_cell = [&](auto&& value) {
        std::vector<std::optional<double>> v(grid.size());
        for (std::size_t k = 0; k < run.results.size(); ++k)
            v[grid.flat_index(run.results[k].index)] = value(k);
        return v;
    };
    auto dense = [](const std::vector<std::optional<double>>& v) {
        std::vector<double> d;
        d.reserve(v.size());
        for (const auto& x : v)
            d.push_back(x.value());
        return d;
    };

    std::optional<CsvTable> est;
    if (fs::exists(dir / kEstimateFile))
        est = CsvTable::read((dir / kEstimateFile).string());
    if (est && est->rows() != run.results.size())
        throw Error("estimate.csv does not match report.csv; rerun `tiler estimate`");

    nlohmann::json summary = {{"config", config_snapshot(cfg)}, {"tiles", grid.size()}};
    for (std::size_t q = 0; q < names.size(); ++q) {
        const auto& name = names[q];
        const auto values = by_cell([&](std::size_t k) { return run.results[k].errors[q]; });
        write_heatmap((out / ("e_" + name)).string(), heatmap(grid, values), grid, "e_" + name);
        const Distribution dist(dense(values), area);
        write_text(out / ("distribution_e_" + name + ".csv"), distribution_csv(dist));
        const double tol = kTrustedFractionOfRange * ranges[q];
        nlohmann::json qj = {{"global_bound", dist.max()},
                             {"p50", dist.percentile(50)},
                             {"p90", dist.percentile(90)},
                             {"p99", dist.percentile(99)},
                             {"trusted_tolerance", tol},
                             {"trusted_fraction", trusted_fraction(dist, tol)}};
        if (est) {
            const auto ev = est->numbers("est_" + name);
            const auto gv = est->numbers("gap_" + name);
            const auto gaps = by_cell([&](std::size_t k) { return gv[k]; });
            write_heatmap((out / ("gap_" + name)).string(), heatmap(grid, gaps), grid, "gap_" + name);
            const auto ests = by_cell([&](std::size_t k) { return ev[k]; });
            write_heatmap((out / ("est_" + name)).string(), heatmap(grid, ests), grid, "est_" + name);
            const Distribution gd(dense(gaps), area);
            qj["global_estimate"] = *std::max_element(ev.begin(), ev.end());
            qj["gap_min"] = gd.min();
            qj["gap_p99"] = gd.percentile(99);
            qj["gap_max"] = gd.max();
        }
        summary[name] = qj;
    }
    write_json(out / "summary.json", summary);
    return summary;
}

// ---------------------------------------------------------------------------
// sweep: verification and estimation over a sequence of cell sizes.

struct SweepRow {
    double cell = 0.0;
    std::size_t tiles = 0;
    std::vector<double> p99;
    std::vector<double> global;
    std::vector<double> trusted;
    std::vector<double> min_gap;
    double wall_seconds = 0.0;
};

inline std::vector<SweepRow> run_sweep(const RunConfig& cfg, const Network& net, std::span<const double> cells,
                                       bool with_estimates)
{
    std::vector<Grid> grids;
    for (double c : cells)
        grids.emplace_back(cfg.space, c, c);
    std::optional<ErrorField> field;
    if (with_estimates)
        field.emplace(build_error_field(grids, cfg.scene, net, cfg.spacing, cfg.workers));
    const double ranges[2] = {cfg.space.delta.width(), cfg.space.theta.width()};
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const RoadSceneProblem problem(cfg.scene, cfg.space, cells[i], cells[i]);
        TilerOptions topt;
        topt.method = cfg.method;
        topt.workers = cfg.workers;
        const auto rep = run_tiler(problem, net, topt);
        SweepRow row;
        row.cell = cells[i];
        row.tiles = rep.tiles;
        row.global = rep.global;
        row.wall_seconds = rep.wall_seconds;
        std::vector<double> area(rep.results.size());
        for (std::size_t k = 0; k < rep.results.size(); ++k)
            area[k] = problem.region(k).area();
        for (std::size_t q = 0; q < 2; ++q) {
            std::vector<double> e(rep.results.size());
            for (std::size_t k = 0; k < e.size(); ++k)
                e[k] = rep.results[k].errors[q];
            const Distribution d(e, area);
            row.p99.push_back(d.percentile(99));
            row.trusted.push_back(trusted_fraction(d, kTrustedFractionOfRange * ranges[q]));
            if (field) {
                double g = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < e.size(); ++k)
                    g = std::min(g, gap(e[k], field->estimate(problem.region(k), cfg.spacing).max_errors[q]));
                row.min_gap.push_back(g);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows)
{
    const bool gaps = !rows.empty() && !rows.front().min_gap.empty();
    std::string s = "cell,tiles,p99_e_delta,p99_e_theta,global_e_delta,global_e_theta,"
                    "trusted_delta,trusted_theta";
    s += gaps ? ",min_gap_delta,min_gap_theta,wall_seconds\n" : ",wall_seconds\n";
    for (const auto& r : rows) {
        s += fmt::format("{},{},{},{},{},{},{},{}", r.cell, r.tiles, r.p99[0], r.p99[1], r.global[0], r.global[1],
                         r.trusted[0], r.trusted[1]);
        if (gaps)
            s += fmt::format(",{},{}", r.min_gap[0], r.min_gap[1]);
        s += fmt::format(",{:.3f}\n", r.wall_seconds);
    }
    return s;
}

// ---------------------------------------------------------------------------
// query

/// Boxes with their tile errors for the run in `dir`, from the sidecar when
/// present and recomputed otherwise.
inline std::vector<BoxedBound> load_boxed_bounds(const fs::path& dir, unsigned workers)
{
    auto run = load_run(dir);
    const RoadSceneProblem problem(run.config.scene, run.config.space, run.config.cell_delta,
                                   run.config.cell_theta);
    if (!fs::exists(dir / kBoxFile))
        return attach_boxes(problem, run.results, workers);
    auto boxes = read_box_file((dir / kBoxFile).string());
    if (boxes.size() != run.results.size())
        throw Error("boxes.bin does not match report.csv");
    std::vector<BoxedBound> out(boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (boxes[k].index != run.results[k].index)
            throw Error("boxes.bin does not match report.csv at record " + std::to_string(k));
        out[k] = {boxes[k].index, std::move(boxes[k].box), run.results[k].errors};
    }
    return out;
}

inline std::string format_local_bound(const LocalBound& b)
{
    if (!b.covered)
        return "NOT_COVERED";
    return fmt::format("delta {} theta {} boxes {}", b.errors[0], b.errors[1], b.containing_boxes);
}

// ---------------------------------------------------------------------------
// classify: the synthetic sign-of-offset classification problem.

inline ClassificationReport cmd_classify(const RunConfig& cfg)
{
    const Network net = with_sign_head(require_network(cfg));
    const SignClassificationProblem problem(RoadSceneProblem(cfg.scene, cfg.space, cfg.cell_delta, cfg.cell_theta));
    TilerOptions topt;
    topt.method = cfg.method;
    topt.workers = cfg.workers;
    auto rep = run_tiler_classification(problem, net, topt);
    const fs::path out = cfg.out;
    fs::create_directories(out);
    std::string text = "delta_index,theta_index,classes,score0_lo,score0_hi,score1_lo,score1_hi,e\n";
    for (const auto& r : rep.results) {
        std::string cls;
        for (int c : r.truth.classes)
            cls += (cls.empty() ? "" : " ") + std::to_string(c);
        text += fmt::format("{},{},{},{},{},{},{},{}\n", r.index.delta, r.index.theta, cls, r.scores[0].lo,
                            r.scores[0].hi, r.scores[1].lo, r.scores[1].hi, r.error);
    }
    write_text(out / "classify.csv", text);
    write_json(out / "classify.json", {{"config", config_snapshot(cfg)},
                                       {"tiles", rep.tiles},
                                       {"certified_tiles", rep.certified},
                                       {"global_bound", rep.global}});
    return rep;
}

} // namespace tiler::cli
