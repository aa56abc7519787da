#pragma once

// Empirical per-tile maximum error by sub-grid sampling. The result is a
// lower bound on the true worst-case error of a tile and is compared with
// the verified upper bound to measure tightness.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "tiler/error.hpp"
#include "tiler/network.hpp"
#include "tiler/parallel.hpp"
#include "tiler/scene.hpp"
#include "tiler/tiling.hpp"
#include "tiler/verifier.hpp"

namespace tiler {

inline constexpr double kDefaultSpacing = 0.05;

struct TileEstimate {
    CellIndex index;
    std::vector<double> max_errors;   // per quantity: delta, theta
    double spacing = kDefaultSpacing;
};

/// Sample positions along one cell axis: both cell edges plus every lattice
/// point anchor + k * spacing strictly inside. Halving the spacing keeps every
/// previous lattice point bit-for-bit (k * s == 2k * (s / 2) exactly).
inline std::vector<double> sample_axis(Interval cell, double anchor, double spacing)
{
    if (!(spacing > 0.0))
        throw Error("sample spacing must be positive");
    std::vector<double> out{cell.lo};
    if (cell.hi > cell.lo) {
        const auto k0 = static_cast<long long>(std::floor((cell.lo - anchor) / spacing)) - 1;
        const auto k1 = static_cast<long long>(std::ceil((cell.hi - anchor) / spacing)) + 1;
        for (long long k = k0; k <= k1; ++k) {
            const double v = anchor + static_cast<double>(k) * spacing;
            if (v > cell.lo && v < cell.hi)
                out.push_back(v);
        }
        out.push_back(cell.hi);
    }
    return out;
}

/// |forward(render(s)) - (delta, theta)| per quantity.
inline std::vector<double> sample_errors(const CameraState& s, const SceneConfig& cfg, const Network& net)
{
    const auto y = net.forward(render(s, cfg));
    if (y.size() < 2)
        throw Error("estimator: network must output (delta, theta)");
    return {std::fabs(y[0] - s.offset_delta), std::fabs(y[1] - s.angle_theta)};
}

/// Maximum sampled error over a region's sub-grid (corners included). The
/// lattice is anchored at the region's low corner unless `anchor` is given.
inline TileEstimate empirical_max_error(const StateRegion& region, const SceneConfig& cfg, const Network& net,
                                        double spacing = kDefaultSpacing,
                                        std::optional<CameraState> anchor = std::nullopt)
{
    const CameraState a = anchor.value_or(CameraState{region.delta.lo, region.theta.lo});
    const auto ds = sample_axis(region.delta, a.offset_delta, spacing);
    const auto ts = sample_axis(region.theta, a.angle_theta, spacing);
    TileEstimate est{region.index, {0.0, 0.0}, spacing};
    for (double d : ds) {
        for (double t : ts) {
            const auto e = sample_errors({d, t}, cfg, net);
            for (std::size_t q = 0; q < 2; ++q)
                est.max_errors[q] = std::max(est.max_errors[q], e[q]);
        }
    }
    return est;
}

/// Tightness gap between a verified bound and its empirical estimate.
inline double gap(double bound, double estimate) { return bound - estimate; }

/// Sampled errors on the product of two sorted axes. Built once per state
/// space and reused by every grid whose cell edges it contains.
class ErrorField {
public:
    ErrorField(std::vector<double> delta_axis, std::vector<double> theta_axis, const SceneConfig& cfg,
               const Network& net, unsigned workers)
        : delta_(std::move(delta_axis)), theta_(std::move(theta_axis))
    {
        const std::size_t nt = theta_.size();
        err_.assign(delta_.size() * nt * 2, 0.0);
        parallel_for(delta_.size() * nt, workers, [&](std::size_t k) {
            const auto e = sample_errors({delta_[k / nt], theta_[k % nt]}, cfg, net);
            err_[2 * k] = e[0];
            err_[2 * k + 1] = e[1];
        });
    }

    std::size_t samples() const { return delta_.size() * theta_.size(); }

    /// Max error over all axis points inside the region.
    TileEstimate estimate(const StateRegion& region, double spacing) const
    {
        const auto d0 = std::lower_bound(delta_.begin(), delta_.end(), region.delta.lo) - delta_.begin();
        const auto d1 = std::upper_bound(delta_.begin(), delta_.end(), region.delta.hi) - delta_.begin();
        const auto t0 = std::lower_bound(theta_.begin(), theta_.end(), region.theta.lo) - theta_.begin();
        const auto t1 = std::upper_bound(theta_.begin(), theta_.end(), region.theta.hi) - theta_.begin();
        if (d0 >= d1 || t0 >= t1)
            throw Error("error field does not cover the region");
        TileEstimate est{region.index, {0.0, 0.0}, spacing};
        for (auto i = d0; i < d1; ++i) {
            for (auto j = t0; j < t1; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * theta_.size() + static_cast<std::size_t>(j);
                est.max_errors[0] = std::max(est.max_errors[0], err_[2 * k]);
                est.max_errors[1] = std::max(est.max_errors[1], err_[2 * k + 1]);
            }
        }
        return est;
    }

private:
    std::vector<double> delta_;
    std::vector<double> theta_;
    std::vector<double> err_;
};

namespace detail {

inline std::vector<double> union_axis(const std::vector<GridAxis>& axes, double spacing)
{
    std::vector<double> v;
    for (const auto& ax : axes) {
        const double anchor = ax.range().lo;
        for (int k = 0; k < ax.count(); ++k) {
            const auto s = sample_axis(ax.cell_interval(k), anchor, spacing);
            v.insert(v.end(), s.begin(), s.end());
        }
    }
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace detail

/// Sample field for one or more grids over the same state space, with the
/// lattice anchored at the state-space origin. Each cell's samples are its
/// edges plus the lattice points inside it.
inline ErrorField build_error_field(std::span<const Grid> grids, const SceneConfig& cfg, const Network& net,
                                    double spacing, unsigned workers)
{
    std::vector<GridAxis> da, ta;
    for (const auto& g : grids) {
        da.push_back(g.delta_axis());
        ta.push_back(g.theta_axis());
    }
    return ErrorField(detail::union_axis(da, spacing), detail::union_axis(ta, spacing), cfg, net, workers);
}

/// Per-tile estimates for every cell of a grid, in cell order.
inline std::vector<TileEstimate> estimate_grid(const Grid& grid, const SceneConfig& cfg, const Network& net,
                                               double spacing, unsigned workers)
{
    const ErrorField field = build_error_field(std::span(&grid, 1), cfg, net, spacing, workers);
    std::vector<TileEstimate> out(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k)
        out[k] = field.estimate(grid.region(k), spacing);
    return out;
}

inline std::vector<TileEstimate> estimate_grid(const ErrorField& field, const Grid& grid, double spacing)
{
    std::vector<TileEstimate> out(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k)
        out[k] = field.estimate(grid.region(k), spacing);
    return out;
}

// Estimator CSV: the verifier columns followed by the estimates and gaps.

inline std::string estimate_csv_header(std::span<const std::string> names)
{
    std::string h = report_csv_header(names, false);
    for (const auto& n : names)
        h += ",est_" + n;
    for (const auto& n : names)
        h += ",gap_" + n;
    return h;
}

inline std::string estimate_csv_row(const TileResult& r, const TileEstimate& e)
{
    std::string s = report_csv_row(r, false);
    for (double v : e.max_errors)
        s += fmt::format(",{}", v);
    for (std::size_t q = 0; q < e.max_errors.size(); ++q)
        s += fmt::format(",{}", gap(r.errors[q], e.max_errors[q]));
    return s;
}

} // namespace tiler
