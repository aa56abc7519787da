#pragma once

// Feedforward ReLU network: conv2d / dense / relu / flatten layers over a
// flat channel-major (C, H, W) activation buffer.
//
// Weight-file format (JSON):
//
//   {
//     "format_version": 1,
//     "input_spec": {"height": 32, "width": 32, "channels": 1, "scale": 255.0},
//     "layers": [
//       {"type": "conv2d", "in_channels": 1, "out_channels": 16, "kernel": 4,
//        "stride": 2, "padding": 1, "weights": [...], "bias": [...]},
//       {"type": "relu"},
//       {"type": "flatten"},
//       {"type": "dense", "in_features": 2048, "out_features": 100,
//        "weights": [...], "bias": [...]},
//       {"type": "linear", ...}          // same fields as "dense"
//     ]
//   }
//
// Network input is pixel / scale. Conv weights are ordered (out, in, ky, kx);
// dense weights are row-major (out, in). Flatten is channel-major, then
// row-major, i.e. the activation buffer order.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiler/error.hpp"
#include "tiler/scene.hpp"

namespace tiler {

struct Shape {
    int channels = 1;
    int height = 1;
    int width = 1;

    std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

struct InputSpec {
    int height = 32;
    int width = 32;
    int channels = 1;
    double scale = 255.0;

    Shape shape() const { return {channels, height, width}; }
};

struct Conv2D {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 4;
    int stride = 2;
    int padding = 1;
    std::vector<double> weights;   // (out, in, ky, kx)
    std::vector<double> bias;      // (out)

    // Filled in by Network from the incoming activation shape.
    Shape in_shape{};
    Shape out_shape{};

    double w(int oc, int ic, int ky, int kx) const
    {
        return weights[((static_cast<std::size_t>(oc) * in_channels + ic) * kernel + ky) * kernel + kx];
    }
};

struct Dense {
    int in_features = 1;
    int out_features = 1;
    std::vector<double> weights;   // (out, in) row-major
    std::vector<double> bias;
    bool is_output = false;        // serialized as "linear" rather than "dense"
};

struct ReLU {};
struct Flatten {};

using Layer = std::variant<Conv2D, Dense, ReLU, Flatten>;

inline bool is_affine(const Layer& l)
{
    return std::holds_alternative<Conv2D>(l) || std::holds_alternative<Dense>(l);
}

// ---------------------------------------------------------------------------
// Affine kernels. `Abs` selects |W| in place of W; the transpose variants
// compute lambda^T W (or lambda^T |W|) for backward bound propagation.

namespace detail {

template <bool Abs>
inline double weight_value(double w)
{
    if constexpr (Abs)
        return std::fabs(w);
    else
        return w;
}

template <bool Abs, bool AddBias>
void conv_apply(const Conv2D& L, std::span<const double> in, std::span<double> out)
{
    const int ih = L.in_shape.height, iw = L.in_shape.width;
    const int oh = L.out_shape.height, ow = L.out_shape.width;
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    const std::size_t iplane = static_cast<std::size_t>(ih) * iw;
    for (int oc = 0; oc < L.out_channels; ++oc) {
        double* o = out.data() + oc * oplane;
        const double b = AddBias ? L.bias[oc] : 0.0;
        std::fill(o, o + oplane, b);
        for (int ic = 0; ic < L.in_channels; ++ic) {
            const double* x = in.data() + ic * iplane;
            for (int ky = 0; ky < L.kernel; ++ky) {
                for (int kx = 0; kx < L.kernel; ++kx) {
                    const double wv = weight_value<Abs>(L.w(oc, ic, ky, kx));
                    for (int oy = 0; oy < oh; ++oy) {
                        const int y = oy * L.stride - L.padding + ky;
                        if (y < 0 || y >= ih)
                            continue;
                        double* orow = o + static_cast<std::size_t>(oy) * ow;
                        const double* xrow = x + static_cast<std::size_t>(y) * iw;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int xx = ox * L.stride - L.padding + kx;
                            if (xx < 0 || xx >= iw)
                                continue;
                            orow[ox] += wv * xrow[xx];
                        }
                    }
                }
            }
        }
    }
}

template <bool Abs>
void conv_transpose(const Conv2D& L, std::span<const double> lam_out, std::span<double> lam_in)
{
    const int ih = L.in_shape.height, iw = L.in_shape.width;
    const int oh = L.out_shape.height, ow = L.out_shape.width;
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    const std::size_t iplane = static_cast<std::size_t>(ih) * iw;
    std::fill(lam_in.begin(), lam_in.end(), 0.0);
    for (int oc = 0; oc < L.out_channels; ++oc) {
        const double* g = lam_out.data() + oc * oplane;
        for (int ic = 0; ic < L.in_channels; ++ic) {
            double* x = lam_in.data() + ic * iplane;
            for (int ky = 0; ky < L.kernel; ++ky) {
                for (int kx = 0; kx < L.kernel; ++kx) {
                    const double wv = weight_value<Abs>(L.w(oc, ic, ky, kx));
                    for (int oy = 0; oy < oh; ++oy) {
                        const int y = oy * L.stride - L.padding + ky;
                        if (y < 0 || y >= ih)
                            continue;
                        const double* grow = g + static_cast<std::size_t>(oy) * ow;
                        double* xrow = x + static_cast<std::size_t>(y) * iw;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int xx = ox * L.stride - L.padding + kx;
                            if (xx < 0 || xx >= iw)
                                continue;
                            xrow[xx] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <bool Abs, bool AddBias>
void dense_apply(const Dense& L, std::span<const double> in, std::span<double> out)
{
    for (int o = 0; o < L.out_features; ++o) {
        const double* row = L.weights.data() + static_cast<std::size_t>(o) * L.in_features;
        double acc = AddBias ? L.bias[o] : 0.0;
        for (int i = 0; i < L.in_features; ++i)
            acc += weight_value<Abs>(row[i]) * in[i];
        out[o] = acc;
    }
}

template <bool Abs>
void dense_transpose(const Dense& L, std::span<const double> lam_out, std::span<double> lam_in)
{
    std::fill(lam_in.begin(), lam_in.end(), 0.0);
    for (int o = 0; o < L.out_features; ++o) {
        const double g = lam_out[o];
        if (g == 0.0)
            continue;
        const double* row = L.weights.data() + static_cast<std::size_t>(o) * L.in_features;
        for (int i = 0; i < L.in_features; ++i)
            lam_in[i] += weight_value<Abs>(row[i]) * g;
    }
}

} // namespace detail

/// out = W in + b
inline void affine_apply(const Layer& l, std::span<const double> in, std::span<double> out)
{
    if (const auto* c = std::get_if<Conv2D>(&l))
        detail::conv_apply<false, true>(*c, in, out);
    else
        detail::dense_apply<false, true>(std::get<Dense>(l), in, out);
}

/// out = |W| in
inline void affine_abs_apply(const Layer& l, std::span<const double> in, std::span<double> out)
{
    if (const auto* c = std::get_if<Conv2D>(&l))
        detail::conv_apply<true, false>(*c, in, out);
    else
        detail::dense_apply<true, false>(std::get<Dense>(l), in, out);
}

/// lam_in = W^T lam_out (or |W|^T lam_out)
template <bool Abs = false>
void affine_transpose(const Layer& l, std::span<const double> lam_out, std::span<double> lam_in)
{
    if (const auto* c = std::get_if<Conv2D>(&l))
        detail::conv_transpose<Abs>(*c, lam_out, lam_in);
    else
        detail::dense_transpose<Abs>(std::get<Dense>(l), lam_out, lam_in);
}

inline const std::vector<double>& affine_bias(const Layer& l)
{
    if (const auto* c = std::get_if<Conv2D>(&l))
        return c->bias;
    return std::get<Dense>(l).bias;
}

/// Number of products summed per output entry (for rounding-error bounds).
inline std::size_t affine_fan_in(const Layer& l)
{
    if (const auto* c = std::get_if<Conv2D>(&l))
        return static_cast<std::size_t>(c->in_channels) * c->kernel * c->kernel;
    return static_cast<std::size_t>(std::get<Dense>(l).in_features);
}

using OutputVector = std::vector<double>;

/// Immutable after construction; safe to share across threads.
class Network {
public:
    Network(InputSpec spec, std::vector<Layer> layers) : spec_(spec), layers_(std::move(layers))
    {
        if (spec_.height <= 0 || spec_.width <= 0 || spec_.channels <= 0)
            throw FormatError("network: input_spec dimensions must be positive");
        if (!(spec_.scale > 0.0) || !std::isfinite(spec_.scale))
            throw FormatError("network: input_spec.scale must be positive");
        if (layers_.empty())
            throw FormatError("network: no layers");

        Shape cur = spec_.shape();
        shapes_.push_back(cur);
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const std::string where = "layers[" + std::to_string(k) + "]";
            if (auto* c = std::get_if<Conv2D>(&layers_[k])) {
                if (c->kernel <= 0 || c->stride <= 0 || c->padding < 0 || c->in_channels <= 0 ||
                    c->out_channels <= 0)
                    throw FormatError(where + ": invalid conv2d hyper-parameters");
                if (cur.channels != c->in_channels)
                    throw FormatError(where + ": conv2d expects " + std::to_string(c->in_channels) +
                                      " input channels, got " + std::to_string(cur.channels));
                const int oh_num = cur.height + 2 * c->padding - c->kernel;
                const int ow_num = cur.width + 2 * c->padding - c->kernel;
                if (oh_num < 0 || ow_num < 0 || oh_num % c->stride != 0 || ow_num % c->stride != 0)
                    throw FormatError(where + ": conv2d does not tile a " + std::to_string(cur.height) + "x" +
                                      std::to_string(cur.width) + " input exactly");
                c->in_shape = cur;
                c->out_shape = {c->out_channels, oh_num / c->stride + 1, ow_num / c->stride + 1};
                check_params(where, c->weights,
                             static_cast<std::size_t>(c->out_channels) * c->in_channels * c->kernel * c->kernel,
                             c->bias, static_cast<std::size_t>(c->out_channels));
                cur = c->out_shape;
            } else if (auto* d = std::get_if<Dense>(&layers_[k])) {
                if (cur.size() != static_cast<std::size_t>(d->in_features))
                    throw FormatError(where + ": dense expects " + std::to_string(d->in_features) +
                                      " inputs, got " + std::to_string(cur.size()));
                if (cur.height * cur.width != 1 && !flattened(k))
                    throw FormatError(where + ": dense layer follows a spatial activation without flatten");
                check_params(where, d->weights,
                             static_cast<std::size_t>(d->out_features) * d->in_features, d->bias,
                             static_cast<std::size_t>(d->out_features));
                cur = {d->out_features, 1, 1};
            } else if (std::holds_alternative<Flatten>(layers_[k])) {
                cur = {static_cast<int>(cur.size()), 1, 1};
            }
            shapes_.push_back(cur);
        }
    }

    const InputSpec& input_spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }
    /// shapes()[k] is the activation shape entering layer k; back() is the output.
    const std::vector<Shape>& shapes() const { return shapes_; }
    std::size_t input_size() const { return shapes_.front().size(); }
    std::size_t output_size() const { return shapes_.back().size(); }
    std::size_t max_width() const
    {
        std::size_t m = 0;
        for (const auto& s : shapes_)
            m = std::max(m, s.size());
        return m;
    }

    /// Network input from raw pixel values.
    std::vector<double> scale_input(std::span<const double> raw) const
    {
        std::vector<double> x(raw.begin(), raw.end());
        for (auto& v : x)
            v = v / spec_.scale;
        return x;
    }

    /// Evaluates the network on raw (unscaled) input values.
    OutputVector forward(std::span<const double> raw) const
    {
        if (raw.size() != input_size())
            throw Error("forward: expected " + std::to_string(input_size()) + " inputs, got " +
                        std::to_string(raw.size()));
        std::vector<double> cur = scale_input(raw);
        std::vector<double> next;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const Layer& l = layers_[k];
            if (is_affine(l)) {
                next.assign(shapes_[k + 1].size(), 0.0);
                affine_apply(l, cur, next);
                cur.swap(next);
            } else if (std::holds_alternative<ReLU>(l)) {
                for (auto& v : cur)
                    v = std::max(v, 0.0);
            }
        }
        return cur;
    }

    OutputVector forward(const Image& img) const
    {
        if (spec_.channels != 1 || img.size != spec_.height || img.size != spec_.width)
            throw Error("forward: image size does not match the network input");
        std::vector<double> raw(img.pixels.begin(), img.pixels.end());
        return forward(raw);
    }

private:
    bool flattened(std::size_t k) const
    {
        // True if a Flatten sits between the last spatial layer and layer k.
        for (std::size_t j = k; j-- > 0;) {
            if (std::holds_alternative<Flatten>(layers_[j]))
                return true;
            if (is_affine(layers_[j]))
                return false;
        }
        return false;
    }

    static void check_params(const std::string& where, const std::vector<double>& w, std::size_t nw,
                             const std::vector<double>& b, std::size_t nb)
    {
        if (w.size() != nw)
            throw FormatError(where + ".weights: expected " + std::to_string(nw) + " values, got " +
                              std::to_string(w.size()));
        if (b.size() != nb)
            throw FormatError(where + ".bias: expected " + std::to_string(nb) + " values, got " +
                              std::to_string(b.size()));
        for (double v : w)
            if (!std::isfinite(v))
                throw FormatError(where + ".weights: non-finite value");
        for (double v : b)
            if (!std::isfinite(v))
                throw FormatError(where + ".bias: non-finite value");
    }

    InputSpec spec_;
    std::vector<Layer> layers_;
    std::vector<Shape> shapes_;
};

inline OutputVector forward(const Network& net, const Image& img) { return net.forward(img); }

// ---------------------------------------------------------------------------
// JSON (de)serialization.

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& where)
{
    if (!obj.is_object())
        throw FormatError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end())
        throw FormatError(where + "." + key + ": missing");
    return *it;
}

inline int int_field(const nlohmann::json& obj, const char* key, const std::string& where)
{
    const auto& v = field(obj, key, where);
    if (!v.is_number_integer())
        throw FormatError(where + "." + key + ": expected an integer");
    return v.get<int>();
}

inline double num_field(const nlohmann::json& obj, const char* key, const std::string& where)
{
    const auto& v = field(obj, key, where);
    if (!v.is_number())
        throw FormatError(where + "." + key + ": expected a number");
    return v.get<double>();
}

inline std::vector<double> array_field(const nlohmann::json& obj, const char* key, const std::string& where)
{
    const auto& v = field(obj, key, where);
    if (!v.is_array())
        throw FormatError(where + "." + key + ": expected an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number())
            throw FormatError(where + "." + key + "[" + std::to_string(i) + "]: expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

} // namespace detail

inline Network network_from_json(const nlohmann::json& doc)
{
    using namespace detail;
    if (!doc.is_object())
        throw FormatError("weights: top level must be an object");
    if (int_field(doc, "format_version", "weights") != 1)
        throw FormatError("weights.format_version: unsupported version");
    const auto& spec_j = field(doc, "input_spec", "weights");
    InputSpec spec;
    spec.height = int_field(spec_j, "height", "input_spec");
    spec.width = int_field(spec_j, "width", "input_spec");
    spec.channels = int_field(spec_j, "channels", "input_spec");
    spec.scale = num_field(spec_j, "scale", "input_spec");

    const auto& layers_j = field(doc, "layers", "weights");
    if (!layers_j.is_array())
        throw FormatError("weights.layers: expected an array");
    std::vector<Layer> layers;
    for (std::size_t k = 0; k < layers_j.size(); ++k) {
        const auto& lj = layers_j[k];
        const std::string where = "layers[" + std::to_string(k) + "]";
        const auto& type_j = field(lj, "type", where);
        if (!type_j.is_string())
            throw FormatError(where + ".type: expected a string");
        const auto type = type_j.get<std::string>();
        if (type == "conv2d") {
            Conv2D c;
            c.in_channels = int_field(lj, "in_channels", where);
            c.out_channels = int_field(lj, "out_channels", where);
            c.kernel = int_field(lj, "kernel", where);
            c.stride = int_field(lj, "stride", where);
            c.padding = int_field(lj, "padding", where);
            c.weights = array_field(lj, "weights", where);
            c.bias = array_field(lj, "bias", where);
            layers.emplace_back(std::move(c));
        } else if (type == "dense" || type == "linear") {
            Dense d;
            d.in_features = int_field(lj, "in_features", where);
            d.out_features = int_field(lj, "out_features", where);
            d.weights = array_field(lj, "weights", where);
            d.bias = array_field(lj, "bias", where);
            d.is_output = type == "linear";
            layers.emplace_back(std::move(d));
        } else if (type == "relu") {
            layers.emplace_back(ReLU{});
        } else if (type == "flatten") {
            layers.emplace_back(Flatten{});
        } else {
            throw FormatError(where + ".type: unknown layer type '" + type + "'");
        }
    }
    return Network(spec, std::move(layers));
}

inline nlohmann::json network_to_json(const Network& net)
{
    nlohmann::json doc;
    doc["format_version"] = 1;
    const auto& s = net.input_spec();
    doc["input_spec"] = {{"height", s.height}, {"width", s.width}, {"channels", s.channels}, {"scale", s.scale}};
    auto layers = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        std::visit(
            [&](const auto& L) {
                using T = std::decay_t<decltype(L)>;
                if constexpr (std::is_same_v<T, Conv2D>) {
                    layers.push_back({{"type", "conv2d"},
                                      {"in_channels", L.in_channels},
                                      {"out_channels", L.out_channels},
                                      {"kernel", L.kernel},
                                      {"stride", L.stride},
                                      {"padding", L.padding},
                                      {"weights", L.weights},
                                      {"bias", L.bias}});
                } else if constexpr (std::is_same_v<T, Dense>) {
                    layers.push_back({{"type", L.is_output ? "linear" : "dense"},
                                      {"in_features", L.in_features},
                                      {"out_features", L.out_features},
                                      {"weights", L.weights},
                                      {"bias", L.bias}});
                } else if constexpr (std::is_same_v<T, ReLU>) {
                    layers.push_back({{"type", "relu"}});
                } else {
                    layers.push_back({{"type", "flatten"}});
                }
            },
            l);
    }
    doc["layers"] = std::move(layers);
    return doc;
}

inline Network load_weights(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("load_weights: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("load_weights: " + path + " is not valid JSON (" + e.what() + ")");
    }
    return network_from_json(doc);
}

inline void save_weights(const Network& net, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error("save_weights: cannot open " + path);
    out << network_to_json(net).dump() << '\n';
}

} // namespace tiler
