#pragma once

// Sound output ranges of a Network over an input box.
//
// Both engines bound the network as evaluated in double precision by
// Network::forward, not only its exact-arithmetic counterpart: interval
// radii carry a rounding term proportional to the magnitudes involved
// (Higham's gamma_n bound for dot products), and endpoints are stepped one
// ulp outward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tiler/error.hpp"
#include "tiler/interval.hpp"
#include "tiler/network.hpp"
#include "tiler/tiling.hpp"

namespace tiler {

using OutputIntervals = std::vector<Interval>;

/// Real-valued input box in raw (pre-scaling) input units.
struct InputBox {
    std::vector<double> lo;
    std::vector<double> hi;

    std::size_t size() const { return lo.size(); }

    static InputBox from_pixels(const PixelBox& b)
    {
        return {std::vector<double>(b.low.begin(), b.low.end()),
                std::vector<double>(b.high.begin(), b.high.end())};
    }
    static InputBox point(std::span<const double> x)
    {
        return {std::vector<double>(x.begin(), x.end()), std::vector<double>(x.begin(), x.end())};
    }
    bool contains(const InputBox& o) const
    {
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (o.lo[i] < lo[i] || o.hi[i] > hi[i])
                return false;
        return true;
    }
};

enum class BoundMethod { ibp, linear_relaxation };

inline const char* to_string(BoundMethod m)
{
    return m == BoundMethod::ibp ? "ibp" : "linrelax";
}

inline BoundMethod parse_bound_method(const std::string& s)
{
    if (s == "ibp")
        return BoundMethod::ibp;
    if (s == "linrelax" || s == "linear_relaxation" || s == "crown")
        return BoundMethod::linear_relaxation;
    throw Error("unknown bound method '" + s + "' (expected ibp or linrelax)");
}

namespace detail {

inline constexpr double kUnitRoundoff = std::numeric_limits<double>::epsilon() / 2.0;

/// gamma_n = n u / (1 - n u), bound on relative error of an n-term dot product.
inline double gamma(std::size_t n)
{
    const double nu = static_cast<double>(n) * kUnitRoundoff;
    if (nu >= 0.5)
        throw NumericError("rounding bound: layer too wide");
    return nu / (1.0 - nu);
}

inline double down(double v) { return std::nextafter(v, -std::numeric_limits<double>::infinity()); }
inline double up(double v) { return std::nextafter(v, std::numeric_limits<double>::infinity()); }

inline void check_box(const Network& net, const InputBox& box)
{
    if (box.lo.size() != net.input_size() || box.hi.size() != net.input_size())
        throw Error("bounds: box has " + std::to_string(box.lo.size()) + " entries, network expects " +
                    std::to_string(net.input_size()));
    for (std::size_t i = 0; i < box.lo.size(); ++i) {
        if (!std::isfinite(box.lo[i]) || !std::isfinite(box.hi[i]) || box.lo[i] > box.hi[i])
            throw Error("bounds: invalid input box entry " + std::to_string(i));
    }
}

} // namespace detail

/// Activation intervals entering every layer of one IBP sweep; the last
/// entry is the output. Shared by the relaxation pass.
struct IbpTrace {
    std::vector<std::vector<double>> lo;
    std::vector<std::vector<double>> hi;

    OutputIntervals output() const
    {
        OutputIntervals out(lo.back().size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = {lo.back()[i], hi.back()[i]};
        return out;
    }
};

inline IbpTrace ibp_trace(const Network& net, const InputBox& box)
{
    detail::check_box(net, box);
    const auto& layers = net.layers();
    IbpTrace t;
    t.lo.reserve(layers.size() + 1);
    t.hi.reserve(layers.size() + 1);
    t.lo.push_back(net.scale_input(box.lo));
    t.hi.push_back(net.scale_input(box.hi));

    std::vector<double> c, r, abs_c, mid, rad_part, mag_part;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& lo = t.lo.back();
        const auto& hi = t.hi.back();
        const Layer& layer = layers[k];
        if (is_affine(layer)) {
            const std::size_t m = lo.size();
            c.resize(m);
            r.resize(m);
            abs_c.resize(m);
            for (std::size_t i = 0; i < m; ++i) {
                if (lo[i] == hi[i]) {
                    c[i] = lo[i];
                    r[i] = 0.0;
                } else {
                    c[i] = lo[i] + (hi[i] - lo[i]) * 0.5;
                    r[i] = detail::up(std::max(hi[i] - c[i], c[i] - lo[i]));
                }
                abs_c[i] = std::fabs(c[i]);
            }
            const std::size_t n_out = net.shapes()[k + 1].size();
            mid.assign(n_out, 0.0);
            rad_part.assign(n_out, 0.0);
            mag_part.assign(n_out, 0.0);
            affine_apply(layer, c, mid);
            affine_abs_apply(layer, r, rad_part);
            affine_abs_apply(layer, abs_c, mag_part);
            const auto& bias = affine_bias(layer);
            const std::size_t per_channel = n_out / bias.size();
            const double g = 2.0 * detail::gamma(affine_fan_in(layer) + 2);
            std::vector<double> nlo(n_out), nhi(n_out);
            for (std::size_t i = 0; i < n_out; ++i) {
                const double b = std::fabs(bias[i / per_channel]);
                const double slack = g * (2.0 * rad_part[i] + 2.0 * mag_part[i] + 2.0 * b);
                const double rad = rad_part[i] + slack;
                nlo[i] = detail::down(mid[i] - rad);
                nhi[i] = detail::up(mid[i] + rad);
                if (!std::isfinite(nlo[i]) || !std::isfinite(nhi[i]))
                    throw NumericError("ibp: non-finite bound at layer " + std::to_string(k));
            }
            t.lo.push_back(std::move(nlo));
            t.hi.push_back(std::move(nhi));
        } else if (std::holds_alternative<ReLU>(layer)) {
            std::vector<double> nlo(lo.size()), nhi(hi.size());
            for (std::size_t i = 0; i < lo.size(); ++i) {
                nlo[i] = std::max(lo[i], 0.0);
                nhi[i] = std::max(hi[i], 0.0);
            }
            t.lo.push_back(std::move(nlo));
            t.hi.push_back(std::move(nhi));
        } else {
            t.lo.push_back(lo);
            t.hi.push_back(hi);
        }
    }
    return t;
}

/// Interval bound propagation: contains forward(x) for every x in the box.
inline OutputIntervals ibp_bounds(const Network& net, const InputBox& box)
{
    return ibp_trace(net, box).output();
}

inline OutputIntervals ibp_bounds(const Network& net, const PixelBox& box)
{
    return ibp_bounds(net, InputBox::from_pixels(box));
}

namespace detail {

// Upper bound of lambda . output over the box, by propagating a linear
// bounding function backward. ReLUs with mixed-sign pre-activation intervals
// are replaced by the chord (upper side) or by 0 / identity (lower side,
// whichever is closer to the ReLU over the interval).
inline double backward_upper(const Network& net, const IbpTrace& trace, std::vector<double> lambda,
                             const InputBox& box)
{
    const auto& layers = net.layers();
    std::vector<double> mag(lambda.size());
    for (std::size_t i = 0; i < lambda.size(); ++i)
        mag[i] = std::fabs(lambda[i]);
    double acc = 0.0;
    double mag_acc = 0.0;
    std::size_t ops = 8;
    std::vector<double> next, next_mag;

    for (std::size_t k = layers.size(); k-- > 0;) {
        const Layer& layer = layers[k];
        if (is_affine(layer)) {
            const auto& bias = affine_bias(layer);
            const std::size_t per_channel = lambda.size() / bias.size();
            for (std::size_t i = 0; i < lambda.size(); ++i) {
                acc += lambda[i] * bias[i / per_channel];
                mag_acc += mag[i] * std::fabs(bias[i / per_channel]);
            }
            const std::size_t n_in = net.shapes()[k].size();
            next.assign(n_in, 0.0);
            next_mag.assign(n_in, 0.0);
            affine_transpose<false>(layer, lambda, next);
            affine_transpose<true>(layer, mag, next_mag);
            lambda.swap(next);
            mag.swap(next_mag);
            ops += affine_fan_in(layer) + net.shapes()[k + 1].size() + 4;
        } else if (std::holds_alternative<ReLU>(layer)) {
            const auto& lo = trace.lo[k];
            const auto& hi = trace.hi[k];
            for (std::size_t i = 0; i < lambda.size(); ++i) {
                const double l = lo[i];
                const double u = hi[i];
                if (u <= 0.0) {
                    lambda[i] = 0.0;
                    mag[i] = 0.0;
                } else if (l >= 0.0) {
                    // identity
                } else if (lambda[i] >= 0.0) {
                    const double slope = u / (u - l);
                    const double intercept = -l * slope;
                    acc += lambda[i] * intercept;
                    mag_acc += mag[i] * intercept;
                    lambda[i] *= slope;
                    mag[i] *= slope;
                } else if (u < -l) {
                    lambda[i] = 0.0;
                    mag[i] = 0.0;
                }
            }
            ops += 4;
        }
    }

    std::vector<double> c = net.scale_input(box.lo);
    std::vector<double> hi = net.scale_input(box.hi);
    double bound = acc;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        const double r = (hi[i] - c[i]) * 0.5;
        const double center = c[i] + r;
        bound += lambda[i] * center + std::fabs(lambda[i]) * r;
        mag_acc += mag[i] * (std::fabs(center) + r);
    }
    ops += lambda.size();
    const double slack = 4.0 * gamma(ops) * (mag_acc + std::fabs(bound));
    if (!std::isfinite(bound) || !std::isfinite(slack))
        throw NumericError("linear relaxation: non-finite bound");
    return up(bound + slack);
}

} // namespace detail

/// Backward linear-relaxation bounds, using one IBP sweep for the
/// pre-activation intervals; intersected with the IBP result.
inline OutputIntervals linear_relaxation_bounds(const Network& net, const InputBox& box)
{
    const IbpTrace trace = ibp_trace(net, box);
    OutputIntervals out = trace.output();
    const std::size_t m = out.size();
    std::vector<double> lambda(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        lambda.assign(m, 0.0);
        lambda[j] = 1.0;
        const double upper = detail::backward_upper(net, trace, lambda, box);
        lambda[j] = -1.0;
        const double lower = -detail::backward_upper(net, trace, lambda, box);
        out[j].lo = std::max(out[j].lo, lower);
        out[j].hi = std::min(out[j].hi, upper);
        // Both are sound, so an empty intersection can only come from
        // rounding at a point input; keep the IBP interval then.
        if (out[j].lo > out[j].hi)
            out[j] = trace.output()[j];
    }
    return out;
}

inline OutputIntervals linear_relaxation_bounds(const Network& net, const PixelBox& box)
{
    return linear_relaxation_bounds(net, InputBox::from_pixels(box));
}

inline OutputIntervals compute_bounds(BoundMethod method, const Network& net, const InputBox& box)
{
    return method == BoundMethod::ibp ? ibp_bounds(net, box) : linear_relaxation_bounds(net, box);
}

inline OutputIntervals compute_bounds(BoundMethod method, const Network& net, const PixelBox& box)
{
    return compute_bounds(method, net, InputBox::from_pixels(box));
}

/// Empirical inner approximation of the output range: min/max of forward
/// over a Cartesian grid with `resolution` points per input (low-dimensional
/// boxes) or over `resolution` uniform random points plus both corners.
/// Any sound bound must contain the result.
inline constexpr std::size_t kOracleBudget = 1'000'000;
inline constexpr std::size_t kOracleMaxGridDims = 8;

inline OutputIntervals grid_oracle(const Network& net, const InputBox& box, std::size_t resolution,
                                   std::uint64_t seed = 0)
{
    detail::check_box(net, box);
    if (resolution == 0)
        throw Error("grid_oracle: resolution must be positive");
    const std::size_t dims = box.size();
    OutputIntervals out(net.output_size(),
                        Interval{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
    auto absorb = [&](std::span<const double> x) {
        const auto y = net.forward(x);
        for (std::size_t j = 0; j < y.size(); ++j) {
            out[j].lo = std::min(out[j].lo, y[j]);
            out[j].hi = std::max(out[j].hi, y[j]);
        }
    };

    if (dims <= kOracleMaxGridDims) {
        std::vector<std::size_t> steps(dims);
        std::size_t total = 1;
        for (std::size_t i = 0; i < dims; ++i) {
            steps[i] = box.lo[i] == box.hi[i] ? 1 : std::max<std::size_t>(resolution, 2);
            if (total > kOracleBudget / steps[i])
                throw Error("grid_oracle: grid exceeds the sample budget");
            total *= steps[i];
        }
        std::vector<std::size_t> counter(dims, 0);
        std::vector<double> x(dims);
        for (std::size_t n = 0; n < total; ++n) {
            for (std::size_t i = 0; i < dims; ++i) {
                if (steps[i] == 1 || counter[i] == 0)
                    x[i] = box.lo[i];
                else if (counter[i] + 1 == steps[i])
                    x[i] = box.hi[i];
                else {
                    const double frac = static_cast<double>(counter[i]) / static_cast<double>(steps[i] - 1);
                    x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * frac;
                }
            }
            absorb(x);
            for (std::size_t i = 0; i < dims; ++i) {
                if (++counter[i] < steps[i])
                    break;
                counter[i] = 0;
            }
        }
        return out;
    }

    if (resolution > kOracleBudget)
        throw Error("grid_oracle: sample count exceeds the budget");
    absorb(box.lo);
    absorb(box.hi);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> x(dims);
    for (std::size_t n = 0; n < resolution; ++n) {
        for (std::size_t i = 0; i < dims; ++i)
            x[i] = std::clamp(box.lo[i] + (box.hi[i] - box.lo[i]) * unit(rng), box.lo[i], box.hi[i]);
        absorb(x);
    }
    return out;
}

inline OutputIntervals grid_oracle(const Network& net, const PixelBox& box, std::size_t resolution,
                                   std::uint64_t seed = 0)
{
    return grid_oracle(net, InputBox::from_pixels(box), resolution, seed);
}

} // namespace tiler
