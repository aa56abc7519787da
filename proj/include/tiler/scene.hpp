#pragma once

// Road-scene world model and the camera observation process.
//
// The world is a road in the xy-plane running along y. Intensity varies with
// x only: a centerline at x = 0, side lines at x = +-road_width, flat road in
// between and beyond. A pinhole camera at height camera_height, offset
// delta along x and rotated by theta about the vertical axis, renders an
// n x n grayscale image by shooting one ray per pixel center.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tiler/error.hpp"

namespace tiler {

struct SceneConfig {
    double road_width = 50.0;       // x1, centerline center to side-line center
    double line_width = 4.0;        // x2
    double ramp_half_width = 1.0;   // x3
    double camera_height = 20.0;    // zc
    double focal_length = 1.0;      // f
    double pixel_side = 0.16;       // d
    int pixel_count = 32;           // n
    double intensity_sideline = 1.0;
    double intensity_centerline = 0.7;
    double intensity_road = 0.3;
    double intensity_sky = 0.0;

    /// Throws FormatError describing the first violated constraint.
    void validate() const
    {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw FormatError(std::string("scene: ") + name + " must be a positive finite number");
        };
        positive(road_width, "road_width");
        positive(line_width, "line_width");
        positive(ramp_half_width, "ramp_half_width");
        positive(camera_height, "camera_height");
        positive(focal_length, "focal_length");
        positive(pixel_side, "pixel_side");
        if (pixel_count <= 0 || pixel_count % 2 != 0)
            throw FormatError("scene: pixel_count must be positive and even");
        for (auto [v, name] : {std::pair{intensity_sideline, "intensity_sideline"},
                               std::pair{intensity_centerline, "intensity_centerline"},
                               std::pair{intensity_road, "intensity_road"},
                               std::pair{intensity_sky, "intensity_sky"}}) {
            if (!(v >= 0.0 && v <= 1.0))
                throw FormatError(std::string("scene: ") + name + " must lie in [0, 1]");
        }
        // Ramps must not overlap each other or swallow a plateau entirely.
        const double half_line = line_width / 2.0;
        if (ramp_half_width > half_line)
            throw FormatError("scene: ramp_half_width exceeds half the line width");
        if (half_line + ramp_half_width > road_width - half_line - ramp_half_width)
            throw FormatError("scene: centerline and side-line ramps overlap");
    }

    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

inline void to_json(nlohmann::json& j, const SceneConfig& c)
{
    j = nlohmann::json{{"road_width", c.road_width},
                       {"line_width", c.line_width},
                       {"ramp_half_width", c.ramp_half_width},
                       {"camera_height", c.camera_height},
                       {"focal_length", c.focal_length},
                       {"pixel_side", c.pixel_side},
                       {"pixel_count", c.pixel_count},
                       {"intensity_sideline", c.intensity_sideline},
                       {"intensity_centerline", c.intensity_centerline},
                       {"intensity_road", c.intensity_road},
                       {"intensity_sky", c.intensity_sky}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, SceneConfig& c)
{
    if (!j.is_object())
        throw FormatError("scene: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        auto number = [&]() {
            if (!value.is_number())
                throw FormatError("scene: field '" + key + "' must be a number");
            return value.get<double>();
        };
        if (key == "road_width") c.road_width = number();
        else if (key == "line_width") c.line_width = number();
        else if (key == "ramp_half_width") c.ramp_half_width = number();
        else if (key == "camera_height") c.camera_height = number();
        else if (key == "focal_length") c.focal_length = number();
        else if (key == "pixel_side") c.pixel_side = number();
        else if (key == "pixel_count") {
            if (!value.is_number_integer())
                throw FormatError("scene: field 'pixel_count' must be an integer");
            c.pixel_count = value.get<int>();
        }
        else if (key == "intensity_sideline") c.intensity_sideline = number();
        else if (key == "intensity_centerline") c.intensity_centerline = number();
        else if (key == "intensity_road") c.intensity_road = number();
        else if (key == "intensity_sky") c.intensity_sky = number();
        else throw FormatError("scene: unknown field '" + key + "'");
    }
}

/// Camera pose: lateral offset from the centerline and yaw in degrees.
struct CameraState {
    double offset_delta = 0.0;
    double angle_theta = 0.0;
};

/// Row-major 8-bit grayscale raster, row 0 at the top.
struct Image {
    int size = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    explicit Image(int n, std::uint8_t fill = 0)
        : size(n), pixels(static_cast<std::size_t>(n) * n, fill) {}

    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * size + col]; }
    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * size + col]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Piecewise-linear intensity as a function of |x|.
///
/// Knots on |x| >= 0 are the plateau and ramp edges; the last segment is an
/// unbounded road plateau. Each segment is monotone in floating point (its
/// value is clamped to the segment's endpoint values), so the extrema over
/// any closed span lie at the span ends or at knots.
class IntensityProfile {
public:
    struct Segment {
        double x0;
        double x1;   // +inf for the outer plateau
        double v0;
        double v1;

        double value(double ax) const
        {
            if (v0 == v1)
                return v0;
            const double s = (ax - x0) / (x1 - x0);
            const double v = v0 + (v1 - v0) * s;
            return std::clamp(v, std::min(v0, v1), std::max(v0, v1));
        }
    };

    explicit IntensityProfile(const SceneConfig& cfg)
    {
        const double half_line = cfg.line_width / 2.0;
        const double r = cfg.ramp_half_width;
        const double inner = cfg.road_width - half_line;
        const double outer = cfg.road_width + half_line;
        const std::array<double, 7> knots{0.0,         half_line - r, half_line + r, inner - r,
                                          inner + r,   outer - r,     outer + r};
        const std::array<double, 7> values{cfg.intensity_centerline, cfg.intensity_centerline,
                                           cfg.intensity_road,       cfg.intensity_road,
                                           cfg.intensity_sideline,   cfg.intensity_sideline,
                                           cfg.intensity_road};
        for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
            if (knots[k + 1] > knots[k])
                segments_.push_back({knots[k], knots[k + 1], values[k], values[k + 1]});
        }
        segments_.push_back({knots.back(), std::numeric_limits<double>::infinity(), values.back(),
                             values.back()});
    }

    double operator()(double x) const
    {
        const double ax = std::fabs(x);
        for (const auto& seg : segments_) {
            if (ax < seg.x1)
                return seg.value(ax);
        }
        return segments_.back().v1;
    }

    /// Exact [min, max] of the profile over the closed span [lo, hi].
    std::pair<double, double> range(double lo, double hi) const
    {
        double p = 0.0;
        double q = 0.0;
        if (lo <= 0.0 && hi >= 0.0) {
            q = std::max(-lo, hi);
        } else {
            p = std::min(std::fabs(lo), std::fabs(hi));
            q = std::max(std::fabs(lo), std::fabs(hi));
        }
        double vmin = std::numeric_limits<double>::infinity();
        double vmax = -vmin;
        for (const auto& seg : segments_) {
            if (seg.x0 > q || seg.x1 <= p)
                continue;
            for (double t : {std::max(p, seg.x0), std::min(q, seg.x1)}) {
                const double v = seg.value(t);
                vmin = std::min(vmin, v);
                vmax = std::max(vmax, v);
            }
        }
        return {vmin, vmax};
    }

    std::span<const Segment> segments() const { return segments_; }

private:
    std::vector<Segment> segments_;
};

inline double intensity_profile(double x, const SceneConfig& cfg)
{
    return IntensityProfile(cfg)(x);
}

/// round(v * 255), halves away from zero; input clamped to [0, 1].
inline std::uint8_t quantize(double v)
{
    if (std::isnan(v))
        v = 0.0;
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::round(v * 255.0));
}

inline double deg_to_rad(double deg) { return deg * (std::numbers::pi / 180.0); }

/// Intersection of a pixel ray with the road plane.
struct GroundPoint {
    double x;
    double y;
};

/// Homogeneous pixel-to-world chain for one camera state.
///
/// Pixel (row, col) goes through pixel->camera coordinates on the virtual
/// image plane, rotation about the vertical axis into focal coordinates,
/// central projection onto the road plane, and translation to the world.
class CameraProjection {
public:
    CameraProjection(const CameraState& state, const SceneConfig& cfg)
    {
        const double d = cfg.pixel_side;
        const double n = cfg.pixel_count;
        const double f = cfg.focal_length;
        const double zc = cfg.camera_height;
        const double edge = d / 2.0 - n * d / 2.0;
        const double th = deg_to_rad(state.angle_theta);
        const double c = std::cos(th);
        const double s = std::sin(th);

        Eigen::Matrix<double, 4, 3> pixel_to_camera;
        pixel_to_camera << 0, d, edge,
                           0, 0, f,
                           -d, 0, -edge,
                           0, 0, 1;
        Eigen::Matrix4d camera_to_focal;
        camera_to_focal << c, -s, 0, 0,
                           s, c, 0, 0,
                           0, 0, 1, 0,
                           0, 0, 0, 1;
        Eigen::Matrix4d road_projection;
        road_projection << -zc, 0, 0, 0,
                           0, -zc, 0, 0,
                           0, 0, -zc, 0,
                           0, 0, 1, 0;
        Eigen::Matrix4d focal_to_world;
        focal_to_world << 1, 0, 0, state.offset_delta,
                          0, 1, 0, 0,
                          0, 0, 1, zc,
                          0, 0, 0, 1;
        chain_ = focal_to_world * road_projection * camera_to_focal * pixel_to_camera;
    }

    /// nullopt when the ray points at or above the horizon (sky).
    std::optional<GroundPoint> project(int row, int col) const
    {
        const Eigen::Vector4d h = chain_ * Eigen::Vector3d(row, col, 1.0);
        // The homogeneous weight is the ray's vertical direction component.
        if (!(h[3] < 0.0))
            return std::nullopt;
        return GroundPoint{h[0] / h[3], h[1] / h[3]};
    }

private:
    Eigen::Matrix<double, 4, 3> chain_;
};

inline std::optional<GroundPoint> project_pixel(const CameraState& state, int row, int col,
                                                const SceneConfig& cfg)
{
    if (row < 0 || col < 0 || row >= cfg.pixel_count || col >= cfg.pixel_count)
        throw Error("project_pixel: pixel index out of range");
    return CameraProjection(state, cfg).project(row, col);
}

/// Sky status depends only on the row: rotation is about the vertical axis.
inline bool is_sky_row(int row, const SceneConfig& cfg)
{
    return !project_pixel(CameraState{}, row, 0, cfg).has_value();
}

inline Image render(const CameraState& state, const SceneConfig& cfg)
{
    const int n = cfg.pixel_count;
    const IntensityProfile profile(cfg);
    const CameraProjection camera(state, cfg);
    const std::uint8_t sky = quantize(cfg.intensity_sky);
    Image img(n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const auto hit = camera.project(r, c);
            img.at(r, c) = hit ? quantize(profile(hit->x)) : sky;
        }
    }
    return img;
}

} // namespace tiler
