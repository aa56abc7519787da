#pragma once

// Summaries of tile results: area-weighted distributions, percentiles,
// trusted-region fractions, heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "tiler/error.hpp"
#include "tiler/pgm.hpp"
#include "tiler/tiling.hpp"

namespace tiler {

/// Values with nonnegative weights (state-space area), sorted by value.
class Distribution {
public:
    Distribution() = default;

    Distribution(std::span<const double> values, std::span<const double> weights)
    {
        if (values.size() != weights.size())
            throw Error("distribution: values and weights differ in length");
        std::vector<std::size_t> order(values.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0))
                throw Error("distribution: negative weight");
            total += w;
        }
        // All-degenerate cells carry no area; fall back to counting them.
        const bool by_count = !(total > 0.0);
        for (auto i : order) {
            values_.push_back(values[i]);
            weights_.push_back(by_count ? 1.0 : weights[i]);
        }
        cumulative_.resize(values_.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            acc += weights_[i];
            cumulative_[i] = acc;
        }
        total_ = acc;
    }

    /// Equal weights.
    static Distribution uniform(std::span<const double> values)
    {
        const std::vector<double> w(values.size(), 1.0);
        return Distribution(values, w);
    }

    bool empty() const { return values_.empty(); }
    double total_weight() const { return total_; }
    std::span<const double> values() const { return values_; }
    double min() const { return values_.front(); }
    double max() const { return values_.back(); }

    /// Weighted fraction of entries with value <= threshold.
    double cumulative_fraction(double threshold) const
    {
        require_nonempty();
        const auto it = std::upper_bound(values_.begin(), values_.end(), threshold);
        if (it == values_.begin())
            return 0.0;
        if (it == values_.end())
            return 1.0;
        return cumulative_[static_cast<std::size_t>(it - values_.begin()) - 1] / total_;
    }

    /// Smallest value whose cumulative fraction reaches p / 100.
    double percentile(double p) const
    {
        require_nonempty();
        if (!(p >= 0.0 && p <= 100.0))
            throw Error("percentile: p must lie in [0, 100]");
        const double target = p / 100.0 * total_;
        const double tol = 1e-12 * total_;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            // Skip to the last entry of a run of equal values.
            if (i + 1 < values_.size() && values_[i + 1] == values_[i])
                continue;
            if (cumulative_[i] + tol >= target)
                return values_[i];
        }
        return values_.back();
    }

private:
    void require_nonempty() const
    {
        if (values_.empty())
            throw Error("distribution is empty");
    }

    std::vector<double> values_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
    double total_ = 0.0;
};

inline double cumulative_fraction(const Distribution& d, double threshold) { return d.cumulative_fraction(threshold); }
inline double percentile(const Distribution& d, double p) { return d.percentile(p); }

/// Fraction of the state space whose bound is within the tolerance.
inline double trusted_fraction(const Distribution& d, double tolerance) { return d.cumulative_fraction(tolerance); }

/// One value per grid cell, laid out for display: columns follow the delta
/// index, rows follow the theta index with the largest theta on top.
struct Heatmap {
    GrayRaster raster;
    double min = 0.0;
    double max = 0.0;
};

inline Heatmap heatmap(const Grid& grid, std::span<const std::optional<double>> values)
{
    if (values.size() != grid.size())
        throw Error("heatmap: expected " + std::to_string(grid.size()) + " cells, got " +
                    std::to_string(values.size()));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (!values[k])
            throw Error("heatmap: missing cell " + std::to_string(k));
        lo = std::min(lo, *values[k]);
        hi = std::max(hi, *values[k]);
    }
    const int w = grid.delta_axis().count();
    const int h = grid.theta_axis().count();
    Heatmap out;
    out.min = lo;
    out.max = hi;
    out.raster.width = w;
    out.raster.height = h;
    out.raster.pixels.assign(static_cast<std::size_t>(w) * h, 0);
    for (std::size_t k = 0; k < values.size(); ++k) {
        const auto r = grid.region(k);
        const double v = *values[k];
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        const int row = h - 1 - r.index.theta;
        out.raster.pixels[static_cast<std::size_t>(row) * w + r.index.delta] =
            static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
    return out;
}

inline Heatmap heatmap(const Grid& grid, std::span<const double> values)
{
    std::vector<std::optional<double>> v(values.begin(), values.end());
    return heatmap(grid, std::span<const std::optional<double>>(v));
}

/// Writes `<stem>.pgm` and a `<stem>.txt` legend.
inline void write_heatmap(const std::string& stem, const Heatmap& hm, const Grid& grid, const std::string& quantity)
{
    write_pgm(stem + ".pgm", hm.raster.width, hm.raster.height, hm.raster.pixels);
    std::ofstream legend(stem + ".txt");
    if (!legend)
        throw Error("cannot write " + stem + ".txt");
    legend << "quantity: " << quantity << '\n'
           << fmt::format("value_at_black: {}\nvalue_at_white: {}\n", hm.min, hm.max)
           << "scale: linear\n"
           << fmt::format("columns: delta index 0..{} covering [{}, {}]\n", grid.delta_axis().count() - 1,
                          grid.space().delta.lo, grid.space().delta.hi)
           << fmt::format("rows: theta index {}..0 top to bottom covering [{}, {}] degrees\n",
                          grid.theta_axis().count() - 1, grid.space().theta.lo, grid.space().theta.hi);
}

/// Cumulative-distribution table: `steps + 1` evenly spaced thresholds from
/// 0 (or the minimum, if negative) to the maximum.
inline std::string distribution_csv(const Distribution& d, int steps = 100)
{
    std::string s = "threshold,fraction\n";
    const double lo = std::min(0.0, d.min());
    const double hi = d.max();
    for (int i = 0; i <= steps; ++i) {
        const double t = i == steps ? hi : lo + (hi - lo) * i / steps;
        s += fmt::format("{},{}\n", t, d.cumulative_fraction(t));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Generic column-addressed CSV for reading verifier and estimator outputs.

class CsvTable {
public:
    static CsvTable read(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw Error("cannot open " + path);
        CsvTable t;
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            std::vector<std::string> f;
            std::size_t start = 0;
            for (;;) {
                const auto comma = line.find(',', start);
                f.push_back(line.substr(start, comma - start));
                if (comma == std::string::npos)
                    break;
                start = comma + 1;
            }
            if (first) {
                t.header_ = std::move(f);
                first = false;
            } else {
                if (f.size() != t.header_.size())
                    throw FormatError(path + ": row " + std::to_string(t.rows_.size() + 1) + " has " +
                                      std::to_string(f.size()) + " fields, header has " +
                                      std::to_string(t.header_.size()));
                t.rows_.push_back(std::move(f));
            }
        }
        if (first)
            throw FormatError(path + ": empty file");
        return t;
    }

    std::size_t rows() const { return rows_.size(); }
    bool has(const std::string& col) const
    {
        return std::find(header_.begin(), header_.end(), col) != header_.end();
    }
    std::size_t column(const std::string& col) const
    {
        const auto it = std::find(header_.begin(), header_.end(), col);
        if (it == header_.end())
            throw FormatError("missing column '" + col + "'");
        return static_cast<std::size_t>(it - header_.begin());
    }
    double number(std::size_t row, std::size_t col) const
    {
        const auto& s = rows_.at(row).at(col);
        try {
            return std::stod(s);
        } catch (const std::exception&) {
            throw FormatError("bad number '" + s + "' in column " + header_[col]);
        }
    }
    std::vector<double> numbers(const std::string& col) const
    {
        const auto c = column(col);
        std::vector<double> v(rows_.size());
        for (std::size_t r = 0; r < rows_.size(); ++r)
            v[r] = number(r, c);
        return v;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

} // namespace tiler
