#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace tiler;

namespace {

// Ray/ground-plane intersection written directly in world coordinates.
struct RayHit {
    bool sky;
    double x;
    double y;
};

RayHit ray_oracle(double delta, double theta_deg, int row, int col, const SceneConfig& cfg)
{
    const double half = cfg.pixel_count * cfg.pixel_side / 2.0;
    const double u = cfg.pixel_side * (col + 0.5) - half;   // right on the image plane
    const double v = half - cfg.pixel_side * (row + 0.5);   // up on the image plane
    const double th = theta_deg * std::numbers::pi / 180.0;
    const double dx = std::cos(th) * u - std::sin(th) * cfg.focal_length;
    const double dy = std::sin(th) * u + std::cos(th) * cfg.focal_length;
    const double dz = v;
    if (dz >= 0.0)
        return {true, 0.0, 0.0};
    const double t = -cfg.camera_height / dz;
    return {false, delta + t * dx, t * dy};
}

} // namespace

TEST(IntensityProfile, MatchesPlateausAndRampMidpoint)
{
    const SceneConfig cfg;
    EXPECT_DOUBLE_EQ(intensity_profile(0.0, cfg), 0.7);
    EXPECT_DOUBLE_EQ(intensity_profile(25.0, cfg), 0.3);
    EXPECT_DOUBLE_EQ(intensity_profile(2.0, cfg), 0.5);
    EXPECT_DOUBLE_EQ(intensity_profile(-2.0, cfg), 0.5);
    EXPECT_DOUBLE_EQ(intensity_profile(50.0, cfg), 1.0);
    EXPECT_DOUBLE_EQ(intensity_profile(500.0, cfg), 0.3);
}

TEST(IntensityProfile, RangeMatchesDenseSampling)
{
    const SceneConfig cfg;
    const IntensityProfile p(cfg);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(-60.0, 60.0), len(0.0, 8.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double lo = pos(rng);
        const double hi = lo + len(rng);
        const auto [vmin, vmax] = p.range(lo, hi);
        for (int k = 0; k <= 400; ++k) {
            const double x = k == 400 ? hi : lo + (hi - lo) * k / 400.0;
            ASSERT_LE(vmin, p(x));
            ASSERT_GE(vmax, p(x));
        }
    }
}

TEST(Quantize, RoundsToNearestLevel)
{
    EXPECT_EQ(quantize(0.0), 0);
    EXPECT_EQ(quantize(1.0), 255);
    EXPECT_EQ(quantize(0.3), 77);
    EXPECT_EQ(quantize(-0.5), 0);
    EXPECT_EQ(quantize(1.5), 255);
}

TEST(Render, TopHalfIsSky)
{
    const SceneConfig cfg;
    for (double d : {-30.0, 0.0, 12.5}) {
        for (double t : {-50.0, 0.0, 33.0}) {
            const Image img = render({d, t}, cfg);
            for (int r = 0; r < cfg.pixel_count / 2; ++r)
                for (int c = 0; c < cfg.pixel_count; ++c)
                    ASSERT_EQ(img.at(r, c), 0) << r << "," << c;
            for (int c = 0; c < cfg.pixel_count; ++c)
                ASSERT_GT(img.at(cfg.pixel_count / 2, c), 0);
        }
    }
}

TEST(Render, CenteredCameraIsMirrorSymmetric)
{
    const SceneConfig cfg;
    const Image img = render({0.0, 0.0}, cfg);
    const int n = cfg.pixel_count;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            ASSERT_EQ(img.at(r, c), img.at(r, n - 1 - c));
}

TEST(Render, MatchesGoldenImage)
{
    const Image golden = read_pgm(test::fixture("golden_d5_t10.pgm"));
    const Image img = render({5.0, 10.0}, SceneConfig{});
    ASSERT_EQ(golden.size, img.size);
    for (int r = 0; r < img.size; ++r)
        for (int c = 0; c < img.size; ++c)
            EXPECT_EQ(img.at(r, c), golden.at(r, c)) << "pixel " << r << "," << c;
}

TEST(ProjectPixel, MatchesRayOracleAtReferencePixel)
{
    const SceneConfig cfg;
    const auto hit = project_pixel({5.0, 10.0}, 24, 8, cfg);
    const auto ref = ray_oracle(5.0, 10.0, 24, 8, cfg);
    ASSERT_TRUE(hit.has_value());
    ASSERT_FALSE(ref.sky);
    EXPECT_NEAR(hit->x, ref.x, 1e-9);
    EXPECT_NEAR(hit->y, ref.y, 1e-9);
}

TEST(ProjectPixel, MatchesRayOracleOnRandomStates)
{
    const SceneConfig cfg;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-50.0, 50.0), t(-70.0, 70.0);
    std::uniform_int_distribution<int> px(0, cfg.pixel_count - 1);
    for (int k = 0; k < 10000; ++k) {
        const double delta = d(rng), theta = t(rng);
        const int row = px(rng), col = px(rng);
        const auto hit = project_pixel({delta, theta}, row, col, cfg);
        const auto ref = ray_oracle(delta, theta, row, col, cfg);
        ASSERT_EQ(hit.has_value(), !ref.sky);
        if (hit) {
            const double scale = std::max({1.0, std::fabs(ref.x), std::fabs(ref.y)});
            ASSERT_NEAR(hit->x, ref.x, 1e-9 * scale);
            ASSERT_NEAR(hit->y, ref.y, 1e-9 * scale);
        }
    }
}

TEST(ProjectPixel, RejectsOutOfRangePixels)
{
    EXPECT_THROW(project_pixel({}, -1, 0, SceneConfig{}), Error);
    EXPECT_THROW(project_pixel({}, 0, 32, SceneConfig{}), Error);
}

TEST(SceneConfig, JsonRoundTripAndValidation)
{
    SceneConfig cfg;
    cfg.camera_height = 15.0;
    const nlohmann::json j = cfg;
    SceneConfig back;
    from_json(j, back);
    EXPECT_EQ(back, cfg);

    SceneConfig bad;
    EXPECT_THROW(from_json(nlohmann::json{{"camera_hieght", 3.0}}, bad), FormatError);
    bad.pixel_side = -1.0;
    EXPECT_THROW(bad.validate(), FormatError);
}

TEST(Pgm, RoundTripsAndSkipsComments)
{
    const auto dir = test::temp_dir("pgm");
    const Image img = render({-3.0, 4.0}, SceneConfig{});
    write_pgm((dir / "a.pgm").string(), img);
    EXPECT_EQ(read_pgm((dir / "a.pgm").string()), img);

    {
        std::ofstream out(dir / "c.pgm", std::ios::binary);
        out << "P5\n# comment\n2 1\n255\n";
        out.put(static_cast<char>(7)).put(static_cast<char>(200));
    }
    const auto r = read_pgm_raster((dir / "c.pgm").string());
    EXPECT_EQ(r.width, 2);
    EXPECT_EQ(r.height, 1);
    EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{7, 200}));
}

TEST(Pgm, RejectsMalformedFiles)
{
    const auto dir = test::temp_dir("pgm_bad");
    {
        std::ofstream out(dir / "p2.pgm");
        out << "P2\n2 2\n255\n0 0 0 0\n";
    }
    {
        std::ofstream out(dir / "short.pgm", std::ios::binary);
        out << "P5\n4 4\n255\nabc";
    }
    {
        std::ofstream out(dir / "deep.pgm", std::ios::binary);
        out << "P5\n1 1\n65535\n\x01\x02";
    }
    EXPECT_THROW(read_pgm_raster((dir / "p2.pgm").string()), Error);
    EXPECT_THROW(read_pgm_raster((dir / "short.pgm").string()), Error);
    EXPECT_THROW(read_pgm_raster((dir / "deep.pgm").string()), Error);
    EXPECT_THROW(read_pgm_raster((dir / "missing.pgm").string()), Error);
}
