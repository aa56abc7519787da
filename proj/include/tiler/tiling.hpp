#pragma once

// State-space gridding, ground-truth intervals, and per-tile pixel bounding
// boxes for the road scene.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tiler/error.hpp"
#include "tiler/interval.hpp"
#include "tiler/scene.hpp"

namespace tiler {

/// Rectangle of camera states: offset range x yaw range (degrees).
struct StateSpace {
    Interval delta{-40.0, 40.0};
    Interval theta{-60.0, 60.0};

    bool contains(const CameraState& s) const
    {
        return delta.contains(s.offset_delta) && theta.contains(s.angle_theta);
    }
};

struct CellIndex {
    int delta = 0;
    int theta = 0;

    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// One grid cell S_i. Its intervals double as the ground-truth bounds.
struct StateRegion {
    CellIndex index;
    Interval delta;
    Interval theta;

    double area() const { return delta.width() * theta.width(); }
    bool contains(const CameraState& s) const
    {
        return delta.contains(s.offset_delta) && theta.contains(s.angle_theta);
    }
};

/// Cell edges along one axis. The last cell is clipped to the range end, so
/// a cell size that does not divide the range leaves a narrower final cell.
/// A zero-width range yields a single degenerate cell.
class GridAxis {
public:
    GridAxis() = default;
    GridAxis(Interval range, double cell) : range_(range), cell_(cell)
    {
        if (!(cell > 0.0) || !std::isfinite(cell))
            throw Error("grid: cell size must be positive");
        if (range.empty())
            return;
        const double ratio = range.width() / cell;
        const auto count = range.width() == 0.0
                               ? 1
                               : std::max<long long>(1, static_cast<long long>(std::ceil(ratio - 1e-9)));
        if (count > std::numeric_limits<int>::max() / 2)
            throw Error("grid: too many cells");
        count_ = static_cast<int>(count);
    }

    int count() const { return count_; }
    double cell() const { return cell_; }
    const Interval& range() const { return range_; }

    /// Edge k for k in [0, count]; edge(count) is exactly the range end.
    double edge(int k) const
    {
        if (k >= count_)
            return range_.hi;
        return std::min(range_.lo + k * cell_, range_.hi);
    }

    Interval cell_interval(int k) const { return {edge(k), edge(k + 1)}; }

private:
    Interval range_{};
    double cell_ = 1.0;
    int count_ = 0;
};

class Grid {
public:
    Grid(const StateSpace& space, double cell_delta, double cell_theta)
        : space_(space), delta_(space.delta, cell_delta), theta_(space.theta, cell_theta) {}

    const StateSpace& space() const { return space_; }
    const GridAxis& delta_axis() const { return delta_; }
    const GridAxis& theta_axis() const { return theta_; }
    std::size_t size() const { return static_cast<std::size_t>(delta_.count()) * theta_.count(); }

    /// Cells are ordered by delta index, then theta index.
    StateRegion region(std::size_t flat) const
    {
        const int i = static_cast<int>(flat / theta_.count());
        const int j = static_cast<int>(flat % theta_.count());
        return region(CellIndex{i, j});
    }
    StateRegion region(CellIndex idx) const
    {
        return {idx, delta_.cell_interval(idx.delta), theta_.cell_interval(idx.theta)};
    }
    std::size_t flat_index(CellIndex idx) const
    {
        return static_cast<std::size_t>(idx.delta) * theta_.count() + idx.theta;
    }

private:
    StateSpace space_;
    GridAxis delta_;
    GridAxis theta_;
};

inline std::vector<StateRegion> make_grid(const StateSpace& space, double cell_delta, double cell_theta)
{
    const Grid grid(space, cell_delta, cell_theta);
    std::vector<StateRegion> cells;
    cells.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k)
        cells.push_back(grid.region(k));
    return cells;
}

/// Ground-truth bounds of (delta, theta) over a region. The quantity of
/// interest is the state itself, so these are the region's own intervals.
inline std::pair<Interval, Interval> ground_truth_intervals(const StateRegion& region)
{
    return {region.delta, region.theta};
}

/// Per-pixel intensity ranges: the l-infinity box around a tile.
struct PixelBox {
    int size = 0;
    std::vector<std::uint8_t> low;
    std::vector<std::uint8_t> high;

    PixelBox() = default;
    explicit PixelBox(int n)
        : size(n), low(static_cast<std::size_t>(n) * n, 0), high(static_cast<std::size_t>(n) * n, 0) {}

    static PixelBox point(const Image& img)
    {
        PixelBox b;
        b.size = img.size;
        b.low = img.pixels;
        b.high = img.pixels;
        return b;
    }

    bool contains(const Image& img) const
    {
        if (img.size != size)
            return false;
        for (std::size_t k = 0; k < low.size(); ++k) {
            if (img.pixels[k] < low[k] || img.pixels[k] > high[k])
                return false;
        }
        return true;
    }

    bool contains(const PixelBox& other) const
    {
        if (other.size != size)
            return false;
        for (std::size_t k = 0; k < low.size(); ++k) {
            if (other.low[k] < low[k] || other.high[k] > high[k])
                return false;
        }
        return true;
    }

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Nonempty set of class labels, kept sorted and unique.
struct ClassSet {
    std::vector<int> classes;

    ClassSet() = default;
    ClassSet(std::initializer_list<int> init) : classes(init) { normalize(); }
    explicit ClassSet(std::vector<int> init) : classes(std::move(init)) { normalize(); }

    bool singleton() const { return classes.size() == 1; }
    bool contains(int k) const { return std::binary_search(classes.begin(), classes.end(), k); }

private:
    void normalize()
    {
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    }
};

namespace detail {

// Camera x-offset of the pixel center in a column, on the virtual image plane.
inline double column_offset(int col, const SceneConfig& cfg)
{
    const double d = cfg.pixel_side;
    return d * col + (d / 2.0 - cfg.pixel_count * d / 2.0);
}

} // namespace detail

/// Yaw angles (degrees, in [lo, hi]) at which the column's ray has no
/// world-frame y component. Along a delta = const edge these are the only
/// interior stationary points of the ground-intersection x.
inline std::vector<double> perpendicular_angles(int col, const SceneConfig& cfg, Interval theta)
{
    // sin(t) * xc + cos(t) * f = 0  <=>  t = atan(-f / xc) + k * 180deg
    const double xc = detail::column_offset(col, cfg);
    const double base = std::atan2(-cfg.focal_length, xc) * (180.0 / std::numbers::pi);
    std::vector<double> out;
    for (double shift : {-360.0, -180.0, 0.0, 180.0, 360.0}) {
        const double t = base + shift;
        if (theta.contains(t))
            out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

struct SpanAccumulator {
    int sky = 0;
    int ground = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(const std::optional<GroundPoint>& p)
    {
        if (!p) {
            ++sky;
            return;
        }
        ++ground;
        lo = std::min(lo, p->x);
        hi = std::max(hi, p->x);
    }

    std::optional<Interval> finish(int row, int col) const
    {
        if (ground == 0)
            return std::nullopt;
        if (sky != 0)
            throw Error("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                        ") switches between sky and road inside one region");
        return Interval{lo, hi};
    }
};

inline std::vector<CameraState> corner_states(const StateRegion& region)
{
    return {{region.delta.lo, region.theta.lo},
            {region.delta.lo, region.theta.hi},
            {region.delta.hi, region.theta.lo},
            {region.delta.hi, region.theta.hi}};
}

} // namespace detail

/// Range of the ground-intersection x of one pixel over all states in the
/// region, or nullopt if the pixel sees sky throughout.
///
/// x is affine in delta and sinusoidal in theta, so its extrema lie at the
/// four corners or on the delta edges at a perpendicular-ray angle.
inline std::optional<Interval> pixel_x_span(const StateRegion& region, int row, int col,
                                            const SceneConfig& cfg)
{
    detail::SpanAccumulator acc;
    for (const auto& s : detail::corner_states(region))
        acc.add(project_pixel(s, row, col, cfg));
    for (double t : perpendicular_angles(col, cfg, region.theta)) {
        acc.add(project_pixel({region.delta.lo, t}, row, col, cfg));
        acc.add(project_pixel({region.delta.hi, t}, row, col, cfg));
    }
    return acc.finish(row, col);
}

/// Relative widening applied to x spans before intensity lookup, absorbing
/// rounding differences between the span endpoints and interior renders.
inline constexpr double kSpanSlack = 1e-9;

/// Pixel-wise intensity box containing every image rendered from a state in
/// the region.
inline PixelBox bounding_box(const StateRegion& region, const SceneConfig& cfg)
{
    const int n = cfg.pixel_count;
    const IntensityProfile profile(cfg);
    const std::uint8_t sky = quantize(cfg.intensity_sky);

    std::vector<CameraProjection> corners;
    for (const auto& s : detail::corner_states(region))
        corners.emplace_back(s, cfg);

    // A single state is rendered by exactly the corner computation.
    const bool point = region.delta.width() == 0.0 && region.theta.width() == 0.0;
    const double slack = point ? 0.0 : kSpanSlack;

    PixelBox box(n);
    std::vector<CameraProjection> extra;
    for (int c = 0; c < n; ++c) {
        extra.clear();
        for (double t : perpendicular_angles(c, cfg, region.theta)) {
            extra.emplace_back(CameraState{region.delta.lo, t}, cfg);
            extra.emplace_back(CameraState{region.delta.hi, t}, cfg);
        }
        for (int r = 0; r < n; ++r) {
            detail::SpanAccumulator acc;
            for (const auto& cam : corners)
                acc.add(cam.project(r, c));
            for (const auto& cam : extra)
                acc.add(cam.project(r, c));
            const auto span = acc.finish(r, c);
            const std::size_t k = static_cast<std::size_t>(r) * n + c;
            if (!span) {
                box.low[k] = box.high[k] = sky;
                continue;
            }
            const double lo = span->lo - slack * (1.0 + std::fabs(span->lo));
            const double hi = span->hi + slack * (1.0 + std::fabs(span->hi));
            const auto [vmin, vmax] = profile.range(lo, hi);
            // quantize is monotone, so rounding the extremes bounds every
            // rounded interior value.
            box.low[k] = quantize(vmin);
            box.high[k] = quantize(vmax);
        }
    }
    return box;
}

// ---------------------------------------------------------------------------
// Box sidecar file.
//
// Layout (little-endian):
//   char[8]  magic "TILERBOX"
//   uint32   version (1)
//   uint32   n (image side)
//   uint64   record count
//   records: int32 delta index, int32 theta index, n*n low bytes, n*n high bytes

struct IndexedBox {
    CellIndex index;
    PixelBox box;
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T v)
{
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>(u & 0xFF);
        u = static_cast<U>(u >> 8);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const char* what)
{
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw FormatError(std::string("box file: truncated at ") + what);
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;)
        u = static_cast<U>((u << 8) | bytes[i]);
    return static_cast<T>(u);
}

inline constexpr char kBoxMagic[8] = {'T', 'I', 'L', 'E', 'R', 'B', 'O', 'X'};

} // namespace detail

class BoxFileWriter {
public:
    BoxFileWriter(const std::string& path, int n) : out_(path, std::ios::binary), n_(n)
    {
        if (!out_)
            throw Error("box file: cannot open " + path);
        out_.write(detail::kBoxMagic, sizeof(detail::kBoxMagic));
        detail::put_le<std::uint32_t>(out_, 1);
        detail::put_le<std::uint32_t>(out_, static_cast<std::uint32_t>(n));
        count_pos_ = out_.tellp();
        detail::put_le<std::uint64_t>(out_, 0);
    }

    void append(CellIndex idx, const PixelBox& box)
    {
        if (box.size != n_)
            throw Error("box file: box size mismatch");
        detail::put_le<std::int32_t>(out_, idx.delta);
        detail::put_le<std::int32_t>(out_, idx.theta);
        out_.write(reinterpret_cast<const char*>(box.low.data()), static_cast<std::streamsize>(box.low.size()));
        out_.write(reinterpret_cast<const char*>(box.high.data()), static_cast<std::streamsize>(box.high.size()));
        ++count_;
    }

    /// Patches the record count into the header.
    void close()
    {
        if (!out_.is_open())
            return;
        const auto end = out_.tellp();
        out_.seekp(count_pos_);
        detail::put_le<std::uint64_t>(out_, count_);
        out_.seekp(end);
        out_.close();
        if (out_.fail())
            throw Error("box file: write failed");
    }

    ~BoxFileWriter()
    {
        try {
            close();
        } catch (...) {
        }
    }

private:
    std::ofstream out_;
    int n_;
    std::streampos count_pos_{};
    std::uint64_t count_ = 0;
};

inline std::vector<IndexedBox> read_box_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("box file: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != 8 || std::memcmp(magic, detail::kBoxMagic, 8) != 0)
        throw FormatError("box file: bad magic in " + path);
    if (detail::get_le<std::uint32_t>(in, "version") != 1)
        throw FormatError("box file: unsupported version");
    const auto n = static_cast<int>(detail::get_le<std::uint32_t>(in, "n"));
    if (n <= 0 || n > 4096)
        throw FormatError("box file: implausible image size");
    const auto count = detail::get_le<std::uint64_t>(in, "count");
    std::vector<IndexedBox> out;
    out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    const auto plane = static_cast<std::streamsize>(n) * n;
    for (std::uint64_t k = 0; k < count; ++k) {
        IndexedBox rec;
        rec.index.delta = detail::get_le<std::int32_t>(in, "cell index");
        rec.index.theta = detail::get_le<std::int32_t>(in, "cell index");
        rec.box = PixelBox(n);
        in.read(reinterpret_cast<char*>(rec.box.low.data()), plane);
        in.read(reinterpret_cast<char*>(rec.box.high.data()), plane);
        if (!in)
            throw FormatError("box file: truncated record " + std::to_string(k));
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace tiler
