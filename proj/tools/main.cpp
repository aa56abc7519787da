// tiler: dataset generation, tile verification, estimation, reporting and
// local-bound queries for the road-camera case study.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"

namespace {

using namespace tiler;
using namespace tiler::cli;

/// Flags shared by the commands that build a RunConfig.
struct ConfigFlags {
    std::string config;
    std::string network;
    std::optional<double> cell_delta, cell_theta, spacing;
    std::optional<std::string> method, out;
    std::optional<unsigned> workers;
    std::optional<std::uint64_t> seed;
    std::vector<double> delta_range, theta_range;

    void add_to(CLI::App& app, bool tiling)
    {
        app.add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
        app.add_option("--out", out, "Output directory");
        app.add_option("--seed", seed, "Random seed");
        app.add_option("--workers", workers, "Worker threads (default: available cores)")
            ->check(CLI::PositiveNumber);
        if (!tiling)
            return;
        app.add_option("--network", network, "Weight file (JSON)");
        app.add_option("--cell-delta", cell_delta, "Cell size along the offset axis");
        app.add_option("--cell-theta", cell_theta, "Cell size along the angle axis (degrees)");
        app.add_option("--method", method, "Bound method")->check(CLI::IsMember({"ibp", "linrelax"}));
        app.add_option("--spacing", spacing, "Estimator sample spacing");
        app.add_option("--delta-range", delta_range, "Verified offset range LO HI")->expected(2);
        app.add_option("--theta-range", theta_range, "Verified angle range LO HI (degrees)")->expected(2);
    }

    RunConfig resolve() const
    {
        RunConfig c;
        try {
            if (!config.empty())
                c = load_run_config(config);
            if (!network.empty())
                c.network_path = network;
            if (cell_delta)
                c.cell_delta = *cell_delta;
            if (cell_theta)
                c.cell_theta = *cell_theta;
            if (spacing)
                c.spacing = *spacing;
            if (method)
                c.method = parse_bound_method(*method);
            if (out)
                c.out = *out;
            if (workers)
                c.workers = *workers;
            if (seed)
                c.seed = *seed;
            if (delta_range.size() == 2)
                c.space.delta = {delta_range[0], delta_range[1]};
            if (theta_range.size() == 2)
                c.space.theta = {theta_range[0], theta_range[1]};
            c.validate();
        } catch (const FormatError& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

std::vector<double> parse_cells(const std::string& list)
{
    std::vector<double> cells;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto item = list.substr(start, comma - start);
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size() || !(v > 0.0))
                throw std::invalid_argument(item);
            cells.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("--cells: bad cell size '" + item + "'");
        }
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return cells;
}

int run(int argc, char** argv)
{
    CLI::App app{"Tile-based verification of a perception network over camera states"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "tiler 1.0");

    ConfigFlags gen_flags, verify_flags, sweep_flags, classify_flags;
    auto* gen = app.add_subcommand("gen-dataset", "Render a labelled dataset of uniformly sampled states");
    gen_flags.add_to(*gen, false);
    std::optional<std::size_t> count;
    gen->add_option("--count", count, "Number of images");
    std::vector<double> sample_delta, sample_theta;
    gen->add_option("--delta-range", sample_delta, "Offset sampling range LO HI")->expected(2);
    gen->add_option("--theta-range", sample_theta, "Angle sampling range LO HI (degrees)")->expected(2);

    auto* verify = app.add_subcommand("verify", "Compute per-tile error bounds");
    verify_flags.add_to(*verify, true);
    VerifyOptions vopt;
    verify->add_flag("--resume", vopt.resume, "Continue an interrupted run in the same output directory");
    verify->add_flag("--boxes", vopt.boxes, "Also write the bounding-box sidecar for queries");
    verify->add_flag("--timings", vopt.timings, "Add a per-tile solve_seconds column");
    verify->add_flag("--quiet", vopt.quiet, "No progress output");

    auto* estimate = app.add_subcommand("estimate", "Sub-grid empirical error estimates for a verified run");
    std::string est_dir = "out";
    std::optional<double> est_spacing;
    std::optional<unsigned> est_workers;
    estimate->add_option("--out", est_dir, "Directory of the verified run")->check(CLI::ExistingDirectory);
    estimate->add_option("--spacing", est_spacing, "Sample spacing (default: from the run)");
    estimate->add_option("--workers", est_workers, "Worker threads")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "Heatmaps, distributions and percentiles for a verified run");
    std::string rep_dir = "out";
    report->add_option("--out", rep_dir, "Directory of the verified run")->check(CLI::ExistingDirectory);

    auto* sweep = app.add_subcommand("sweep", "Verify at several cell sizes and tabulate the trend");
    sweep_flags.add_to(*sweep, true);
    std::string cells_arg = "0.8,0.4,0.2";
    bool sweep_estimates = false;
    sweep->add_option("--cells", cells_arg, "Comma-separated cell sizes (both axes)");
    sweep->add_flag("--estimates", sweep_estimates, "Also compute the minimum gap per cell size");

    auto* query = app.add_subcommand("query", "Local error bound for images (PGM)");
    std::string query_dir = "out";
    std::vector<std::string> images;
    std::optional<unsigned> query_workers;
    query->add_option("--out", query_dir, "Directory of the verified run")->check(CLI::ExistingDirectory);
    query->add_option("--workers", query_workers, "Worker threads for recomputing boxes")
        ->check(CLI::PositiveNumber);
    query->add_option("images", images, "PGM images")->required()->check(CLI::ExistingFile);

    auto* classify = app.add_subcommand("classify", "Verify the synthetic sign-of-offset classifier");
    classify_flags.add_to(*classify, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        RunConfig c = gen_flags.resolve();
        if (count)
            c.count = *count;
        if (sample_delta.size() == 2)
            c.sample_space.delta = {sample_delta[0], sample_delta[1]};
        if (sample_theta.size() == 2)
            c.sample_space.theta = {sample_theta[0], sample_theta[1]};
        try {
            c.validate();
        } catch (const FormatError& e) {
            throw UsageError(e.what());
        }
        cmd_gen_dataset(c);
        std::cout << fmt::format("wrote {} images to {}\n", c.count, c.out);
    } else if (verify->parsed()) {
        const RunConfig c = verify_flags.resolve();
        const auto o = cmd_verify(c, vopt);
        std::cout << fmt::format("{} tiles ({} resumed); global bound delta {} theta {}\n", o.tiles, o.resumed,
                                 o.global.empty() ? 0.0 : o.global[0], o.global.empty() ? 0.0 : o.global[1]);
    } else if (estimate->parsed()) {
        const auto o = cmd_estimate(est_dir, est_spacing, est_workers);
        std::cout << fmt::format("{} tiles; empirical max error delta {} theta {}\n", o.tiles,
                                 o.global_estimate[0], o.global_estimate[1]);
        if (o.negative_gaps > 0) {
            std::cerr << fmt::format("error: {} estimates exceed their verified bound\n", o.negative_gaps);
            return 2;
        }
    } else if (report->parsed()) {
        const auto s = cmd_report(rep_dir);
        std::cout << s.dump(2) << '\n';
    } else if (sweep->parsed()) {
        const RunConfig c = sweep_flags.resolve();
        const auto cells = parse_cells(cells_arg);
        const Network net = require_network(c);
        const auto rows = run_sweep(c, net, cells, sweep_estimates);
        const std::string table = sweep_csv(rows);
        fs::create_directories(c.out);
        write_text(fs::path(c.out) / "sweep.csv", table);
        std::cout << table;
    } else if (query->parsed()) {
        const auto boxes = load_boxed_bounds(query_dir, query_workers.value_or(default_workers()));
        for (const auto& path : images)
            std::cout << path << ' ' << format_local_bound(local_bound(read_pgm(path), boxes)) << '\n';
    } else if (classify->parsed()) {
        const RunConfig c = classify_flags.resolve();
        const auto rep = cmd_classify(c);
        std::cout << fmt::format("{} tiles; {} certified; global error {}\n", rep.tiles, rep.certified,
                                 rep.global);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const tiler::cli::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
