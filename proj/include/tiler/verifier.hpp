#pragma once

// The tiling verifier: per-tile ground-truth bounds, bounding boxes, output
// bounds and error bounds; global and local error bounds; regression and
// classification variants.
//
// A problem supplies the problem-dependent steps through a small concept;
// RoadSceneProblem is the camera-position instance.

#include <algorithm>
#include <chrono>
#include <concepts>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "tiler/bounds.hpp"
#include "tiler/error.hpp"
#include "tiler/interval.hpp"
#include "tiler/network.hpp"
#include "tiler/parallel.hpp"
#include "tiler/scene.hpp"
#include "tiler/tiling.hpp"

namespace tiler {

// ---------------------------------------------------------------------------
// Error formulas.

/// Regression tile error: max(u' - l, u - l').
inline double tile_error_regression(const Interval& truth, const Interval& output)
{
    return std::max(output.hi - truth.lo, truth.hi - output.lo);
}

/// Classification tile error: 0 iff the truth set is a single class y whose
/// lower score bound beats every other class's upper score bound.
inline int tile_error_classification(const ClassSet& truth, const OutputIntervals& scores)
{
    if (truth.classes.empty())
        throw Error("tile_error_classification: empty ground-truth class set");
    if (scores.size() < 2)
        throw Error("tile_error_classification: need at least two class scores");
    if (!truth.singleton())
        return 1;
    const int y = truth.classes.front();
    if (y < 0 || static_cast<std::size_t>(y) >= scores.size())
        throw Error("tile_error_classification: class index out of range");
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (static_cast<int>(k) != y && !(scores[y].lo > scores[k].hi))
            return 1;
    }
    return 0;
}

inline int argmax(std::span<const double> scores)
{
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

// ---------------------------------------------------------------------------
// Problems.

template <class P>
concept TilingProblem = requires(const P& p, std::size_t i) {
    { p.size() } -> std::convertible_to<std::size_t>;
    { p.cell_index(i) } -> std::same_as<CellIndex>;
    { p.input_box(i) } -> std::same_as<InputBox>;
};

template <class P>
concept RegressionProblem = TilingProblem<P> && requires(const P& p, std::size_t i) {
    { p.ground_truth(i) } -> std::same_as<std::vector<Interval>>;
};

template <class P>
concept ClassificationProblem = TilingProblem<P> && requires(const P& p, std::size_t i) {
    { p.class_set(i) } -> std::same_as<ClassSet>;
};

/// Camera-position regression over a gridded state space. Outputs are
/// (delta, theta), and the ground truth of a cell is the cell itself.
class RoadSceneProblem {
public:
    RoadSceneProblem(const SceneConfig& cfg, const StateSpace& space, double cell_delta, double cell_theta)
        : cfg_(cfg), grid_(space, cell_delta, cell_theta)
    {
        cfg_.validate();
    }

    std::size_t size() const { return grid_.size(); }
    const Grid& grid() const { return grid_; }
    const SceneConfig& scene() const { return cfg_; }

    StateRegion region(std::size_t i) const { return grid_.region(i); }
    CellIndex cell_index(std::size_t i) const { return grid_.region(i).index; }

    std::vector<Interval> ground_truth(std::size_t i) const
    {
        const auto [d, t] = ground_truth_intervals(region(i));
        return {d, t};
    }

    PixelBox pixel_box(std::size_t i) const { return bounding_box(region(i), cfg_); }
    InputBox input_box(std::size_t i) const { return InputBox::from_pixels(pixel_box(i)); }

    static std::vector<std::string> quantity_names() { return {"delta", "theta"}; }

private:
    SceneConfig cfg_;
    Grid grid_;
};

/// Sign-of-offset classification on the road scene: class 1 for
/// delta >= 0, class 0 otherwise.
class SignClassificationProblem {
public:
    explicit SignClassificationProblem(RoadSceneProblem base) : base_(std::move(base)) {}

    static int label(const CameraState& s) { return s.offset_delta >= 0.0 ? 1 : 0; }

    std::size_t size() const { return base_.size(); }
    CellIndex cell_index(std::size_t i) const { return base_.cell_index(i); }
    InputBox input_box(std::size_t i) const { return base_.input_box(i); }
    PixelBox pixel_box(std::size_t i) const { return base_.pixel_box(i); }
    StateRegion region(std::size_t i) const { return base_.region(i); }
    const RoadSceneProblem& base() const { return base_; }

    ClassSet class_set(std::size_t i) const
    {
        const auto r = base_.region(i);
        std::vector<int> classes;
        if (r.delta.lo < 0.0)
            classes.push_back(0);
        if (r.delta.hi >= 0.0)
            classes.push_back(1);
        return ClassSet(std::move(classes));
    }

private:
    RoadSceneProblem base_;
};

/// Appends a linear head mapping the offset output o to scores (-o, o),
/// turning a (delta, theta) regressor into a sign-of-offset classifier.
inline Network with_sign_head(const Network& regressor)
{
    std::vector<Layer> layers = regressor.layers();
    Dense head;
    head.in_features = static_cast<int>(regressor.output_size());
    head.out_features = 2;
    head.weights.assign(static_cast<std::size_t>(2) * head.in_features, 0.0);
    head.weights[0] = -1.0;
    head.weights[static_cast<std::size_t>(head.in_features)] = 1.0;
    head.bias = {0.0, 0.0};
    head.is_output = true;
    layers.emplace_back(std::move(head));
    return Network(regressor.input_spec(), std::move(layers));
}

// ---------------------------------------------------------------------------
// Results.

struct TileResult {
    CellIndex index;
    std::vector<Interval> truth;
    OutputIntervals outputs;
    std::vector<double> errors;
    double solve_seconds = 0.0;
};

struct ClassTileResult {
    CellIndex index;
    ClassSet truth;
    OutputIntervals scores;
    int error = 1;
    double solve_seconds = 0.0;
};

/// Per-quantity maximum of the tile errors.
inline std::vector<double> global_bound(std::span<const TileResult> results)
{
    if (results.empty())
        throw Error("global_bound: no tile results");
    std::vector<double> g = results.front().errors;
    for (const auto& r : results)
        for (std::size_t q = 0; q < g.size(); ++q)
            g[q] = std::max(g[q], r.errors[q]);
    return g;
}

inline int global_bound(std::span<const ClassTileResult> results)
{
    if (results.empty())
        throw Error("global_bound: no tile results");
    int g = 0;
    for (const auto& r : results)
        g = std::max(g, r.error);
    return g;
}

struct TilerOptions {
    BoundMethod method = BoundMethod::ibp;
    unsigned workers = 1;
    std::size_t batch = 2048;     // tiles computed between ordered flushes
    std::size_t start = 0;        // first tile index (resume)
    bool keep_results = true;
};

struct VerificationReport {
    std::vector<TileResult> results;   // empty unless keep_results
    std::vector<double> global;        // max over all computed tiles
    std::size_t tiles = 0;
    double wall_seconds = 0.0;
    double solve_seconds = 0.0;
};

struct ClassificationReport {
    std::vector<ClassTileResult> results;
    int global = 0;
    std::size_t tiles = 0;
    std::size_t certified = 0;
    double wall_seconds = 0.0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Computes tiles [start, size) in batches; each batch runs in parallel and is
// handed to `flush` in index order.
template <class Result, class ComputeFn, class FlushFn>
void batched_sweep(std::size_t start, std::size_t size, const TilerOptions& opt, ComputeFn&& compute,
                   FlushFn&& flush)
{
    const std::size_t batch = std::max<std::size_t>(1, opt.batch);
    std::vector<Result> buf;
    for (std::size_t b0 = start; b0 < size; b0 += batch) {
        const std::size_t b1 = std::min(size, b0 + batch);
        buf.assign(b1 - b0, Result{});
        parallel_for(b1 - b0, opt.workers, [&](std::size_t k) {
            try {
                buf[k] = compute(b0 + k);
            } catch (const std::exception& e) {
                throw Error("tile " + std::to_string(b0 + k) + ": " + e.what());
            }
        });
        flush(std::span<const Result>(buf));
    }
}

} // namespace detail

/// Sink receiving tile results in index order, one batch at a time.
using TileSink = std::function<void(std::span<const TileResult>)>;

/// Regression verifier: for every tile, ground-truth intervals, bounding
/// box, sound output intervals, and the tile error per output. The result
/// does not depend on the worker count.
template <RegressionProblem P>
VerificationReport run_tiler(const P& problem, const Network& net, const TilerOptions& opt = {},
                             const TileSink& sink = {})
{
    const auto t0 = detail::Clock::now();
    VerificationReport report;
    auto compute = [&](std::size_t i) {
        const auto ts = detail::Clock::now();
        TileResult r;
        r.index = problem.cell_index(i);
        r.truth = problem.ground_truth(i);
        r.outputs = compute_bounds(opt.method, net, problem.input_box(i));
        if (r.outputs.size() != r.truth.size())
            throw Error("network has " + std::to_string(r.outputs.size()) + " outputs but the problem has " +
                        std::to_string(r.truth.size()) + " quantities");
        r.errors.resize(r.truth.size());
        for (std::size_t q = 0; q < r.truth.size(); ++q)
            r.errors[q] = tile_error_regression(r.truth[q], r.outputs[q]);
        r.solve_seconds = detail::seconds_since(ts);
        return r;
    };
    auto flush = [&](std::span<const TileResult> batch) {
        for (const auto& r : batch) {
            if (report.global.empty())
                report.global = r.errors;
            for (std::size_t q = 0; q < r.errors.size(); ++q)
                report.global[q] = std::max(report.global[q], r.errors[q]);
            report.solve_seconds += r.solve_seconds;
        }
        report.tiles += batch.size();
        if (sink)
            sink(batch);
        if (opt.keep_results)
            report.results.insert(report.results.end(), batch.begin(), batch.end());
    };
    detail::batched_sweep<TileResult>(opt.start, problem.size(), opt, compute, flush);
    report.wall_seconds = detail::seconds_since(t0);
    return report;
}

/// Classification verifier.
template <ClassificationProblem P>
ClassificationReport run_tiler_classification(const P& problem, const Network& net, const TilerOptions& opt = {})
{
    const auto t0 = detail::Clock::now();
    ClassificationReport report;
    auto compute = [&](std::size_t i) {
        const auto ts = detail::Clock::now();
        ClassTileResult r;
        r.index = problem.cell_index(i);
        r.truth = problem.class_set(i);
        r.scores = compute_bounds(opt.method, net, problem.input_box(i));
        r.error = tile_error_classification(r.truth, r.scores);
        r.solve_seconds = detail::seconds_since(ts);
        return r;
    };
    auto flush = [&](std::span<const ClassTileResult> batch) {
        for (const auto& r : batch) {
            report.global = std::max(report.global, r.error);
            report.certified += r.error == 0 ? 1 : 0;
        }
        report.tiles += batch.size();
        if (opt.keep_results)
            report.results.insert(report.results.end(), batch.begin(), batch.end());
    };
    detail::batched_sweep<ClassTileResult>(opt.start, problem.size(), opt, compute, flush);
    report.wall_seconds = detail::seconds_since(t0);
    return report;
}

// ---------------------------------------------------------------------------
// Local bounds: max tile error over all boxes containing an input.

struct BoxedBound {
    CellIndex index;
    PixelBox box;
    std::vector<double> errors;
};

struct LocalBound {
    bool covered = false;
    std::vector<double> errors;       // meaningful only when covered
    std::size_t containing_boxes = 0;
};

inline LocalBound local_bound(const Image& img, std::span<const BoxedBound> boxes)
{
    LocalBound out;
    for (const auto& b : boxes) {
        if (!b.box.contains(img))
            continue;
        if (!out.covered) {
            out.covered = true;
            out.errors = b.errors;
        } else {
            for (std::size_t q = 0; q < out.errors.size(); ++q)
                out.errors[q] = std::max(out.errors[q], b.errors[q]);
        }
        ++out.containing_boxes;
    }
    return out;
}

/// Pairs regression results with their recomputed bounding boxes.
template <class P>
std::vector<BoxedBound> attach_boxes(const P& problem, std::span<const TileResult> results, unsigned workers = 1)
{
    std::vector<BoxedBound> out(results.size());
    parallel_for(results.size(), workers, [&](std::size_t k) {
        const auto& r = results[k];
        out[k] = {r.index, bounding_box(problem.grid().region(r.index), problem.scene()), r.errors};
    });
    return out;
}

// ---------------------------------------------------------------------------
// CSV report. One row per tile in cell order; numbers use the shortest
// representation that round-trips, so identical results give identical bytes.

inline std::string report_csv_header(std::span<const std::string> names, bool timings)
{
    std::string h = "delta_index,theta_index,delta_lo,delta_hi,theta_lo,theta_hi";
    for (const auto& n : names)
        h += ",out_" + n + "_lo,out_" + n + "_hi";
    for (const auto& n : names)
        h += ",e_" + n;
    if (timings)
        h += ",solve_seconds";
    return h;
}

inline std::string report_csv_row(const TileResult& r, bool timings)
{
    std::string s = fmt::format("{},{}", r.index.delta, r.index.theta);
    for (std::size_t q = 0; q < 2 && q < r.truth.size(); ++q)
        s += fmt::format(",{},{}", r.truth[q].lo, r.truth[q].hi);
    for (const auto& o : r.outputs)
        s += fmt::format(",{},{}", o.lo, o.hi);
    for (double e : r.errors)
        s += fmt::format(",{}", e);
    if (timings)
        s += fmt::format(",{:.6f}", r.solve_seconds);
    return s;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ','))
        out.push_back(cur);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, std::size_t line)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("report line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

} // namespace detail

struct ReportTable {
    std::vector<std::string> header;
    std::vector<TileResult> rows;
    std::size_t bytes_of_complete_rows = 0;   // offset just past the last full row
};

/// Parses a report CSV written by report_csv_row. A trailing partial line is
/// ignored (its offset is recorded so a resumed run can truncate it).
inline ReportTable read_report_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open report " + path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ReportTable t;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    std::size_t quantities = 0;
    bool timings = false;
    while (pos < text.size()) {
        const std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos)
            break;
        const std::string line = text.substr(pos, eol - pos);
        ++line_no;
        if (line_no == 1) {
            t.header = detail::split_csv(line);
            timings = !t.header.empty() && t.header.back() == "solve_seconds";
            const std::size_t cols = t.header.size() - (timings ? 1 : 0);
            if (cols < 6 || (cols - 6) % 3 != 0 || t.header[0] != "delta_index")
                throw FormatError("report " + path + ": unrecognized header");
            quantities = (cols - 6) / 3;
        } else {
            const auto f = detail::split_csv(line);
            if (f.size() != t.header.size())
                throw FormatError("report line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(t.header.size()) + " fields, got " + std::to_string(f.size()));
            TileResult r;
            r.index = {static_cast<int>(detail::parse_double(f[0], line_no)),
                       static_cast<int>(detail::parse_double(f[1], line_no))};
            r.truth = {{detail::parse_double(f[2], line_no), detail::parse_double(f[3], line_no)},
                       {detail::parse_double(f[4], line_no), detail::parse_double(f[5], line_no)}};
            std::size_t c = 6;
            for (std::size_t q = 0; q < quantities; ++q, c += 2)
                r.outputs.push_back({detail::parse_double(f[c], line_no), detail::parse_double(f[c + 1], line_no)});
            for (std::size_t q = 0; q < quantities; ++q, ++c)
                r.errors.push_back(detail::parse_double(f[c], line_no));
            if (timings)
                r.solve_seconds = detail::parse_double(f[c], line_no);
            t.rows.push_back(std::move(r));
        }
        pos = eol + 1;
        t.bytes_of_complete_rows = pos;
    }
    if (t.header.empty())
        throw FormatError("report " + path + ": missing header");
    return t;
}

} // namespace tiler
