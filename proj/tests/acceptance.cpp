// Acceptance run: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "commands.hpp"
#include "tiler/tiler.hpp"

using namespace tiler;
namespace fs = std::filesystem;

namespace {

const Network& fixture_net()
{
    static const Network net = load_weights(std::string(TILER_FIXTURE_DIR) + "/fixture_net.json");
    return net;
}

bool within(const Interval& inner, const Interval& outer) { return outer.lo <= inner.lo && inner.hi <= outer.hi; }

// Tolerances, fixed before the first run.
constexpr double kDegenerateWidth = 1e-9;
constexpr std::size_t kAllowedViolations = 0;

const StateSpace kSweepSpace{{-10.0, 10.0}, {-15.0, 15.0}};
const StateSpace kTrendSpace{{-2.0, 2.0}, {-3.0, 3.0}};

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void run(const char* name, const std::function<Outcome()>& check)
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
}

std::vector<double> three_points(const Interval& i) { return {i.lo, i.mid(), i.hi}; }

Outcome soundness_sweep()
{
    const SceneConfig cfg;
    const RoadSceneProblem problem(cfg, kSweepSpace, 0.4, 0.4);
    TilerOptions opt;
    opt.workers = default_workers();
    const auto rep = run_tiler(problem, fixture_net(), opt);
    std::vector<std::size_t> bad(rep.results.size(), 0);
    parallel_for(rep.results.size(), opt.workers, [&](std::size_t k) {
        const auto& r = rep.results[k];
        const auto reg = problem.region(k);
        for (double d : three_points(reg.delta)) {
            for (double t : three_points(reg.theta)) {
                const auto y = forward(fixture_net(), render({d, t}, cfg));
                bad[k] += std::fabs(y[0] - d) > r.errors[0];
                bad[k] += std::fabs(y[1] - t) > r.errors[1];
            }
        }
    });
    std::size_t violations = 0;
    for (auto b : bad)
        violations += b;
    return {rep.tiles == 3750 && violations <= kAllowedViolations,
            fmt::format("tiles={} samples={} violations={} global_e=({:.4g}, {:.4g})", rep.tiles,
                        9 * rep.results.size(), violations, rep.global[0], rep.global[1])};
}

Outcome containment()
{
    const SceneConfig cfg;
    const RoadSceneProblem problem(cfg, kSweepSpace, 0.4, 0.4);
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> pick(0, problem.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t violations = 0, checked = 0;
    for (int t = 0; t < 200; ++t) {
        const auto i = pick(rng);
        const auto reg = problem.region(i);
        const PixelBox box = problem.pixel_box(i);
        for (int s = 0; s < 5; ++s) {
            const CameraState st{reg.delta.lo + u(rng) * reg.delta.width(), reg.theta.lo + u(rng) * reg.theta.width()};
            violations += !box.contains(render(st, cfg));
            ++checked;
        }
    }
    return {violations <= kAllowedViolations, fmt::format("tiles=200 states={} violations={}", checked, violations)};
}

Network tiny_net(std::mt19937_64& rng, int inputs, const std::vector<int>& hidden)
{
    std::normal_distribution<double> w(0.0, 1.0);
    std::vector<Layer> layers;
    int in = inputs;
    auto dense = [&](int out, bool last) {
        Dense d;
        d.in_features = in;
        d.out_features = out;
        d.is_output = last;
        for (int k = 0; k < in * out; ++k)
            d.weights.push_back(w(rng) / std::sqrt(static_cast<double>(in)));
        for (int k = 0; k < out; ++k)
            d.bias.push_back(0.5 * w(rng));
        layers.emplace_back(std::move(d));
        in = out;
    };
    for (int h : hidden) {
        dense(h, false);
        layers.emplace_back(ReLU{});
    }
    dense(2, true);
    return Network(InputSpec{1, 1, inputs, 1.0}, std::move(layers));
}

InputBox tiny_box(std::mt19937_64& rng, int n, double max_width)
{
    std::uniform_real_distribution<double> c(-1.0, 1.0), w(0.0, max_width);
    InputBox b;
    for (int i = 0; i < n; ++i) {
        b.lo.push_back(c(rng));
        b.hi.push_back(b.lo.back() + w(rng));
    }
    return b;
}

Outcome bound_oracle()
{
    std::mt19937_64 rng(99);
    int ibp_ok = 0, lin_ok = 0;
    double worst_point = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 3;
        const Network net = tiny_net(rng, n, {3 + trial % 5, 2 + trial % 4});
        const auto box = tiny_box(rng, n, 1.0);
        const auto oracle = grid_oracle(net, box, 25);
        const auto ibp = ibp_bounds(net, box);
        const auto lin = linear_relaxation_bounds(net, box);
        bool a = true, b = true;
        for (std::size_t j = 0; j < oracle.size(); ++j) {
            a = a && within(oracle[j], ibp[j]);
            b = b && within(oracle[j], lin[j]);
        }
        ibp_ok += a;
        lin_ok += b;

        InputBox point = box;
        point.hi = point.lo;
        for (auto method : {BoundMethod::ibp, BoundMethod::linear_relaxation})
            for (const auto& o : compute_bounds(method, net, point))
                worst_point = std::max(worst_point, o.width());
    }
    return {ibp_ok == 50 && lin_ok == 50 && worst_point <= kDegenerateWidth,
            fmt::format("oracle within ibp {}/50, within linrelax {}/50, max degenerate width {:.3g} (limit {:g})",
                        ibp_ok, lin_ok, worst_point, kDegenerateWidth)};
}

Outcome isotonicity()
{
    std::mt19937_64 rng(100);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 4;
        const Network net = tiny_net(rng, n, {6, 6});
        const auto outer = tiny_box(rng, n, 1.0);
        InputBox inner = outer;
        for (std::size_t i = 0; i < outer.lo.size(); ++i) {
            inner.lo[i] = outer.lo[i] + u(rng) * (outer.hi[i] - outer.lo[i]);
            inner.hi[i] = inner.lo[i] + u(rng) * (outer.hi[i] - inner.lo[i]);
        }
        const auto a = ibp_bounds(net, inner), b = ibp_bounds(net, outer);
        for (std::size_t j = 0; j < a.size(); ++j)
            violations += !within(a[j], b[j]);
    }
    return {violations == 0, fmt::format("pairs=100 violations={}", violations)};
}

Outcome tile_size_trend()
{
    RunConfig cfg;
    cfg.space = kTrendSpace;
    cfg.spacing = 0.05;
    cfg.workers = default_workers();
    const std::vector<double> cells{0.8, 0.4, 0.2};
    const auto rows = cli::run_sweep(cfg, fixture_net(), cells, true);
    bool ok = true;
    std::string detail = "p99 e_delta:";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail += fmt::format(" {}->{:.4g}", rows[i].cell, rows[i].p99[0]);
        if (i > 0 && rows[i].p99[0] > rows[i - 1].p99[0])
            ok = false;
    }
    double min_gap = std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
        for (double g : r.min_gap)
            min_gap = std::min(min_gap, g);
    ok = ok && min_gap >= 0.0;
    detail += fmt::format("; min gap {:.4g} over all tiles and cell sizes", min_gap);
    return {ok, detail};
}

Outcome formulas()
{
    int wrong = 0;
    wrong += tile_error_regression({0.0, 1.0}, {0.0, 1.0}) != 1.0;
    wrong += tile_error_regression({5.0, 6.0}, {5.5, 5.5}) != 0.5;
    wrong += tile_error_regression({0.0, 0.1}, {-2.0, 3.0}) != 3.0;

    std::vector<TileResult> r(3);
    r[0].errors = {0.5, 1.0};
    r[1].errors = {12.66, 0.5};
    r[2].errors = {3.2, 2.0};
    wrong += global_bound(std::span<const TileResult>(r)) != std::vector<double>{12.66, 2.0};

    const SceneConfig cfg;
    const RoadSceneProblem problem(cfg, {{0.0, 2.0}, {0.0, 2.0}}, 1.0, 1.0);
    std::vector<TileResult> res(problem.size());
    for (std::size_t k = 0; k < problem.size(); ++k) {
        res[k].index = problem.cell_index(k);
        res[k].errors = {1.0 + static_cast<double>(k), 10.0 - static_cast<double>(k)};
    }
    const auto boxes = attach_boxes(problem, res);
    wrong += local_bound(Image(32, 255), boxes).covered;
    const auto corner = local_bound(render({1.0, 1.0}, cfg), boxes);
    wrong += !corner.covered || corner.errors != std::vector<double>{4.0, 10.0};

    wrong += tile_error_classification({0}, {{2.0, 3.0}, {0.0, 1.0}}) != 0;
    wrong += tile_error_classification({0, 1}, {{2.0, 3.0}, {0.0, 1.0}}) != 1;
    wrong += tile_error_classification({0}, {{0.0, 2.0}, {1.0, 3.0}}) != 1;
    return {wrong == 0, fmt::format("examples=10 mismatches={}", wrong)};
}

Outcome classification()
{
    const SceneConfig cfg;
    const Network net = with_sign_head(fixture_net());
    // Small cells on either side of delta = 0; ten certified tiles from each.
    const StateSpace patches[2] = {{{-2.2, -2.0}, {0.0, 0.05}}, {{2.0, 2.2}, {0.0, 0.05}}};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t available = 0;
    int tiles = 0, sampled = 0, wrong = 0;
    for (const auto& space : patches) {
        const SignClassificationProblem problem(RoadSceneProblem(cfg, space, 0.01, 0.01));
        const auto rep = run_tiler_classification(problem, net);
        available += rep.certified;
        int used = 0;
        for (std::size_t k = 0; k < rep.results.size() && used < 10; ++k) {
            const auto& r = rep.results[k];
            if (r.error != 0 || r.truth.classes.size() != 1)
                continue;
            ++used;
            const PixelBox box = problem.pixel_box(k);
            const auto reg = problem.region(k);
            for (int s = 0; s < 100; ++s) {
                // Half rendered states, half arbitrary images inside the box.
                Image img;
                if (s % 2 == 0) {
                    img = render(
                        {reg.delta.lo + u(rng) * reg.delta.width(), reg.theta.lo + u(rng) * reg.theta.width()}, cfg);
                } else {
                    img = Image(box.size);
                    for (std::size_t p = 0; p < img.pixels.size(); ++p) {
                        std::uniform_int_distribution<int> v(box.low[p], box.high[p]);
                        img.pixels[p] = static_cast<std::uint8_t>(v(rng));
                    }
                }
                wrong += argmax(forward(net, img)) != r.truth.classes[0];
                ++sampled;
            }
        }
        tiles += used;
    }
    return {tiles == 20 && wrong == 0,
            fmt::format("certified tiles available={} used={} inputs={} misclassified={}", available, tiles, sampled,
                        wrong)};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism()
{
    const fs::path root = fs::temp_directory_path() / "tiler_acceptance_determinism";
    fs::remove_all(root);
    RunConfig cfg;
    cfg.network_path = std::string(TILER_FIXTURE_DIR) + "/fixture_net.json";
    cfg.space = kTrendSpace;
    cfg.cell_delta = 0.4;
    cfg.cell_theta = 0.4;
    cli::VerifyOptions opt;
    opt.quiet = true;
    std::string csv[2];
    const unsigned workers[2] = {1, 4};
    for (int i = 0; i < 2; ++i) {
        cfg.workers = workers[i];
        cfg.out = (root / fmt::format("w{}", workers[i])).string();
        cli::cmd_verify(cfg, opt);
        csv[i] = slurp(fs::path(cfg.out) / cli::kReportFile);
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    fs::remove_all(root);
    return {same, fmt::format("workers 1 vs 4: {} bytes, {}", csv[0].size(), same ? "identical" : "different")};
}

} // namespace

int main()
{
    run("soundness_sweep", soundness_sweep);
    run("containment", containment);
    run("bound_oracle", bound_oracle);
    run("inclusion_isotonicity", isotonicity);
    run("tile_size_trend", tile_size_trend);
    run("formula_examples", formulas);
    run("classification_soundness", classification);
    run("determinism", determinism);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
