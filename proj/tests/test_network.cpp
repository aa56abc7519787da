#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace tiler;

namespace {

// Layer-by-layer evaluation over nested loops, kept independent of the
// kernels in network.hpp.
struct RefConv {
    int in_c, out_c, k, stride, pad;
    std::vector<double> w, b;
};
struct RefDense {
    int in, out;
    std::vector<double> w, b;
};

using Tensor = std::vector<std::vector<std::vector<double>>>;   // [c][y][x]

Tensor ref_conv(const Tensor& x, const RefConv& L)
{
    const int h = static_cast<int>(x[0].size());
    const int w = static_cast<int>(x[0][0].size());
    const int oh = (h + 2 * L.pad - L.k) / L.stride + 1;
    const int ow = (w + 2 * L.pad - L.k) / L.stride + 1;
    Tensor y(L.out_c, std::vector<std::vector<double>>(oh, std::vector<double>(ow)));
    for (int o = 0; o < L.out_c; ++o)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double s = L.b[o];
                for (int c = 0; c < L.in_c; ++c)
                    for (int ky = 0; ky < L.k; ++ky)
                        for (int kx = 0; kx < L.k; ++kx) {
                            const int yy = i * L.stride - L.pad + ky;
                            const int xx = j * L.stride - L.pad + kx;
                            if (yy < 0 || xx < 0 || yy >= h || xx >= w)
                                continue;
                            s += L.w[((o * L.in_c + c) * L.k + ky) * L.k + kx] * x[c][yy][xx];
                        }
                y[o][i][j] = s;
            }
    return y;
}

std::vector<double> ref_dense(const std::vector<double>& x, const RefDense& L)
{
    std::vector<double> y(L.out);
    for (int o = 0; o < L.out; ++o) {
        double s = L.b[o];
        for (int i = 0; i < L.in; ++i)
            s += L.w[o * L.in + i] * x[i];
        y[o] = s;
    }
    return y;
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n)
{
    std::normal_distribution<double> g(0.0, 0.5);
    std::vector<double> v(n);
    for (auto& x : v)
        x = g(rng);
    return v;
}

} // namespace

TEST(Network, IdentityDenseNetReturnsItsInput)
{
    Dense d;
    d.weights = {1.0};
    d.bias = {0.0};
    const Network net(InputSpec{1, 1, 1, 1.0}, {d});
    for (double x : {-3.5, 0.0, 2.25})
        EXPECT_EQ(net.forward(std::vector<double>{x})[0], x);
}

TEST(Network, IdentityDenseNetFromJson)
{
    const auto doc = nlohmann::json::parse(R"({
        "format_version": 1,
        "input_spec": {"height": 1, "width": 1, "channels": 1, "scale": 1},
        "layers": [{"type": "linear", "in_features": 1, "out_features": 1, "weights": [1], "bias": [0]}]
    })");
    const Network net = network_from_json(doc);
    EXPECT_EQ(net.forward(std::vector<double>{0.375})[0], 0.375);
}

TEST(Network, ZeroWeightsGiveTheBias)
{
    Conv2D c{1, 2, 4, 2, 1, std::vector<double>(32, 0.0), {0.5, -0.5}};
    Dense d;
    d.in_features = 2 * 16 * 16;
    d.out_features = 2;
    d.weights.assign(static_cast<std::size_t>(d.in_features) * 2, 0.0);
    d.bias = {3.0, -7.0};
    const Network net(InputSpec{}, {c, ReLU{}, Flatten{}, d});
    const auto y = net.forward(Image(32, 0));
    EXPECT_EQ(y, (std::vector<double>{3.0, -7.0}));
}

TEST(Network, MatchesStraightLineEvaluation)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int c1 = 1 + trial % 3, c2 = 2 + trial % 2, hid = 5 + trial % 4;
        RefConv a{1, c1, 4, 2, 1, random_vec(rng, c1 * 16), random_vec(rng, c1)};
        RefConv b{c1, c2, 4, 2, 1, random_vec(rng, c2 * c1 * 16), random_vec(rng, c2)};
        RefDense d1{c2 * 2 * 2, hid, random_vec(rng, c2 * 4 * hid), random_vec(rng, hid)};
        RefDense d2{hid, 2, random_vec(rng, hid * 2), random_vec(rng, 2)};

        const Network net(InputSpec{8, 8, 1, 255.0},
                          {Conv2D{1, c1, 4, 2, 1, a.w, a.b}, ReLU{}, Conv2D{c1, c2, 4, 2, 1, b.w, b.b}, ReLU{},
                           Flatten{}, Dense{d1.in, d1.out, d1.w, d1.b}, ReLU{},
                           Dense{d2.in, d2.out, d2.w, d2.b, true}});

        std::uniform_int_distribution<int> px(0, 255);
        std::vector<double> raw(64);
        Tensor x(1, std::vector<std::vector<double>>(8, std::vector<double>(8)));
        for (int i = 0; i < 64; ++i) {
            raw[i] = px(rng);
            x[0][i / 8][i % 8] = raw[i] / 255.0;
        }
        auto relu = [](Tensor t) {
            for (auto& ch : t)
                for (auto& row : ch)
                    for (auto& v : row)
                        v = std::max(v, 0.0);
            return t;
        };
        const Tensor h2 = relu(ref_conv(relu(ref_conv(x, a)), b));
        std::vector<double> flat;
        for (const auto& ch : h2)
            for (const auto& row : ch)
                flat.insert(flat.end(), row.begin(), row.end());
        auto h3 = ref_dense(flat, d1);
        for (auto& v : h3)
            v = std::max(v, 0.0);
        const auto ref = ref_dense(h3, d2);

        const auto y = net.forward(raw);
        ASSERT_EQ(y.size(), 2u);
        for (int o = 0; o < 2; ++o)
            EXPECT_NEAR(y[o], ref[o], 1e-12 * (1.0 + std::fabs(ref[o])));
    }
}

TEST(Network, FixtureHasCaseStudyArchitecture)
{
    const Network& net = test::fixture_net();
    const auto& s = net.shapes();
    ASSERT_EQ(net.layers().size(), 8u);
    EXPECT_EQ(s[0], (Shape{1, 32, 32}));
    EXPECT_EQ(s[1], (Shape{16, 16, 16}));
    EXPECT_EQ(s[3], (Shape{32, 8, 8}));
    EXPECT_EQ(s[6], (Shape{100, 1, 1}));
    EXPECT_EQ(net.output_size(), 2u);
    EXPECT_EQ(net.input_spec().scale, 255.0);
}

TEST(Network, FixtureMatchesGoldenOutput)
{
    std::ifstream in(test::fixture("golden_net_output.json"));
    const auto golden = nlohmann::json::parse(in);
    const Image img = read_pgm(test::fixture(golden["image"].get<std::string>()));
    const auto y = forward(test::fixture_net(), img);
    ASSERT_EQ(y.size(), 2u);
    EXPECT_NEAR(y[0], golden["output"][0].get<double>(), 1e-5);
    EXPECT_NEAR(y[1], golden["output"][1].get<double>(), 1e-5);
}

TEST(Network, SaveLoadRoundTrip)
{
    std::mt19937_64 rng(1);
    const Network net = test::random_dense_net(rng, 3, {4}, 2);
    const auto dir = test::temp_dir("net_roundtrip");
    save_weights(net, (dir / "n.json").string());
    const Network back = load_weights((dir / "n.json").string());
    const std::vector<double> x{0.1, -0.2, 0.3};
    EXPECT_EQ(back.forward(x), net.forward(x));
}

TEST(Network, TruncatedFilesAreReported)
{
    const auto dir = test::temp_dir("net_trunc");
    std::ifstream in(test::fixture("fixture_net.json"));
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    {
        std::ofstream out(dir / "cut.json");
        out << text.substr(0, text.size() / 2);
    }
    EXPECT_THROW(load_weights((dir / "cut.json").string()), FormatError);

    auto doc = nlohmann::json::parse(text);
    doc["layers"][2]["weights"].erase(doc["layers"][2]["weights"].size() - 1);
    try {
        network_from_json(doc);
        FAIL() << "expected a shape error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("layers[2].weights"), std::string::npos) << e.what();
    }
}

TEST(Network, RejectsBadDefinitions)
{
    const auto base = nlohmann::json::parse(R"({
        "format_version": 1,
        "input_spec": {"height": 1, "width": 1, "channels": 2, "scale": 1},
        "layers": [{"type": "dense", "in_features": 2, "out_features": 1, "weights": [1, 2], "bias": [0]}]
    })");
    EXPECT_NO_THROW(network_from_json(base));

    auto unknown = base;
    unknown["layers"][0]["type"] = "maxpool";
    EXPECT_THROW(network_from_json(unknown), FormatError);

    auto mismatch = base;
    mismatch["layers"][0]["in_features"] = 3;
    EXPECT_THROW(network_from_json(mismatch), FormatError);

    auto missing = base;
    missing["layers"][0].erase("bias");
    EXPECT_THROW(network_from_json(missing), FormatError);

    auto version = base;
    version["format_version"] = 2;
    EXPECT_THROW(network_from_json(version), FormatError);

    Dense d{2, 1, {1.0, std::nan("")}, {0.0}};
    EXPECT_THROW(Network(InputSpec{1, 1, 2, 1.0}, {d}), FormatError);

    Dense spatial{4, 1, {1, 1, 1, 1}, {0}};
    EXPECT_THROW(Network(InputSpec{2, 2, 1, 1.0}, {spatial}), FormatError);

    Conv2D odd{1, 1, 4, 2, 1, std::vector<double>(16, 0.0), {0.0}};
    EXPECT_THROW(Network(InputSpec{7, 7, 1, 1.0}, {odd}), FormatError);
}

TEST(Network, ForwardRejectsWrongInputSize)
{
    EXPECT_THROW(test::fixture_net().forward(Image(16, 0)), Error);
    EXPECT_THROW(test::fixture_net().forward(std::vector<double>(10, 0.0)), Error);
}
