#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tiler/tiler.hpp"

namespace tiler::test {

inline std::string fixture(const std::string& name) { return std::string(TILER_FIXTURE_DIR) + "/" + name; }

inline const Network& fixture_net()
{
    static const Network net = load_weights(fixture("fixture_net.json"));
    return net;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("tiler_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Random fully connected ReLU net: `inputs` -> hidden... -> `outputs`.
inline Network random_dense_net(std::mt19937_64& rng, int inputs, const std::vector<int>& hidden, int outputs,
                                double scale = 1.0)
{
    std::normal_distribution<double> w(0.0, scale);
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
    dense(outputs, true);
    return Network(InputSpec{1, 1, inputs, 1.0}, std::move(layers));
}

/// Random box inside [-1, 1]^n with widths up to `max_width`.
inline InputBox random_box(std::mt19937_64& rng, std::size_t n, double max_width)
{
    std::uniform_real_distribution<double> c(-1.0, 1.0), w(0.0, max_width);
    InputBox b;
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = c(rng);
        b.lo.push_back(lo);
        b.hi.push_back(lo + w(rng));
    }
    return b;
}

inline bool within(const Interval& inner, const Interval& outer)
{
    return outer.lo <= inner.lo && inner.hi <= outer.hi;
}

} // namespace tiler::test
