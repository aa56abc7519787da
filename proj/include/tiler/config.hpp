#pragma once

// Run configuration shared by the command-line tools. A run config is a JSON
// object; every field is optional and command-line flags override it.
//
//   {
//     "scene": "scene.json" | { ...SceneConfig fields... },
//     "network": "fixture_net.json",
//     "state_space": {"delta": [-40, 40], "theta": [-60, 60]},
//     "cell_delta": 0.1, "cell_theta": 0.1,
//     "method": "ibp" | "linrelax",
//     "workers": 4,
//     "out": "out",
//     "seed": 0,
//     "spacing": 0.05,
//     "count": 1000,
//     "sample_space": {"delta": [-50, 50], "theta": [-70, 70]}
//   }
//
// Relative paths are resolved against the directory of the config file.
// `state_space` is the verified region; `sample_space` is the range that
// dataset generation draws states from.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tiler/bounds.hpp"
#include "tiler/error.hpp"
#include "tiler/parallel.hpp"
#include "tiler/scene.hpp"
#include "tiler/tiling.hpp"

namespace tiler {

struct RunConfig {
    SceneConfig scene;
    std::string scene_path;        // empty when the scene is inline or default
    std::string network_path;
    StateSpace space;
    StateSpace sample_space{{-50.0, 50.0}, {-70.0, 70.0}};
    double cell_delta = 0.1;
    double cell_theta = 0.1;
    BoundMethod method = BoundMethod::ibp;
    unsigned workers = default_workers();
    std::string out = "out";
    std::uint64_t seed = 0;
    double spacing = 0.05;
    std::size_t count = 1000;

    void validate() const
    {
        scene.validate();
        auto check_range = [](const Interval& r, const char* what) {
            if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi)
                throw FormatError(std::string("config: ") + what + " must be a finite range with lo <= hi");
        };
        check_range(space.delta, "state_space.delta");
        check_range(space.theta, "state_space.theta");
        check_range(sample_space.delta, "sample_space.delta");
        check_range(sample_space.theta, "sample_space.theta");
        if (std::fabs(space.theta.lo) >= 90.0 || std::fabs(space.theta.hi) >= 90.0 ||
            std::fabs(sample_space.theta.lo) >= 90.0 || std::fabs(sample_space.theta.hi) >= 90.0)
            throw FormatError("config: theta must stay inside (-90, 90) degrees");
        if (!(cell_delta > 0.0) || !std::isfinite(cell_delta))
            throw FormatError("config: cell_delta must be positive");
        if (!(cell_theta > 0.0) || !std::isfinite(cell_theta))
            throw FormatError("config: cell_theta must be positive");
        if (!(spacing > 0.0) || !std::isfinite(spacing))
            throw FormatError("config: spacing must be positive");
        if (workers == 0)
            throw FormatError("config: workers must be at least 1");
        if (out.empty())
            throw FormatError("config: out must not be empty");
    }
};

namespace detail {

inline Interval json_range(const nlohmann::json& j, const std::string& where)
{
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw FormatError("config: " + where + " must be [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline StateSpace json_space(const nlohmann::json& j, const std::string& where, StateSpace s)
{
    if (!j.is_object())
        throw FormatError("config: " + where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k == "delta")
            s.delta = json_range(v, where + ".delta");
        else if (k == "theta")
            s.theta = json_range(v, where + ".theta");
        else
            throw FormatError("config: unknown field '" + where + "." + k + "'");
    }
    return s;
}

inline nlohmann::json read_json_file(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw Error("cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(p.string() + " is not valid JSON: " + e.what());
    }
}

} // namespace detail

inline SceneConfig load_scene(const std::string& path)
{
    SceneConfig c;
    from_json(detail::read_json_file(path), c);
    c.validate();
    return c;
}

/// Applies the fields of `doc` on top of `base`. `dir` resolves relative paths.
inline RunConfig apply_config(const nlohmann::json& doc, RunConfig base, const std::filesystem::path& dir = {})
{
    if (!doc.is_object())
        throw FormatError("config: expected a JSON object");
    auto resolve = [&](const nlohmann::json& v, const std::string& key) {
        if (!v.is_string())
            throw FormatError("config: " + key + " must be a string");
        std::filesystem::path p = v.get<std::string>();
        return (p.is_relative() && !dir.empty() ? dir / p : p).string();
    };
    auto number = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_number())
            throw FormatError("config: " + key + " must be a number");
        return v.get<double>();
    };
    auto count = [](const nlohmann::json& v, const std::string& key) -> std::uint64_t {
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw FormatError("config: " + key + " must be a nonnegative integer");
        return v.get<std::uint64_t>();
    };
    RunConfig c = std::move(base);
    for (const auto& [k, v] : doc.items()) {
        if (k == "scene") {
            if (v.is_string()) {
                c.scene_path = resolve(v, k);
                c.scene = load_scene(c.scene_path);
            } else {
                c.scene = SceneConfig{};
                from_json(v, c.scene);
                c.scene_path.clear();
            }
        } else if (k == "network") {
            c.network_path = resolve(v, k);
        } else if (k == "state_space") {
            c.space = detail::json_space(v, k, c.space);
        } else if (k == "sample_space") {
            c.sample_space = detail::json_space(v, k, c.sample_space);
        } else if (k == "cell_delta") {
            c.cell_delta = number(v, k);
        } else if (k == "cell_theta") {
            c.cell_theta = number(v, k);
        } else if (k == "method") {
            if (!v.is_string())
                throw FormatError("config: method must be a string");
            c.method = parse_bound_method(v.get<std::string>());
        } else if (k == "workers") {
            c.workers = static_cast<unsigned>(count(v, k));
        } else if (k == "out") {
            c.out = resolve(v, k);
        } else if (k == "seed") {
            c.seed = count(v, k);
        } else if (k == "spacing") {
            c.spacing = number(v, k);
        } else if (k == "count") {
            c.count = static_cast<std::size_t>(count(v, k));
        } else {
            throw FormatError("config: unknown field '" + k + "'");
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {})
{
    const std::filesystem::path p(path);
    return apply_config(detail::read_json_file(p), std::move(base), p.parent_path());
}

/// Self-contained snapshot: the scene is inlined and paths are absolute, so
/// feeding the snapshot back as a config reproduces the run.
inline nlohmann::json config_snapshot(const RunConfig& c)
{
    auto abs = [](const std::string& p) {
        return p.empty() ? std::string{} : std::filesystem::absolute(p).lexically_normal().string();
    };
    nlohmann::json j;
    j["scene"] = c.scene;
    j["network"] = abs(c.network_path);
    j["state_space"] = {{"delta", {c.space.delta.lo, c.space.delta.hi}},
                        {"theta", {c.space.theta.lo, c.space.theta.hi}}};
    j["sample_space"] = {{"delta", {c.sample_space.delta.lo, c.sample_space.delta.hi}},
                         {"theta", {c.sample_space.theta.lo, c.sample_space.theta.hi}}};
    j["cell_delta"] = c.cell_delta;
    j["cell_theta"] = c.cell_theta;
    j["method"] = to_string(c.method);
    j["workers"] = c.workers;
    j["out"] = abs(c.out);
    j["seed"] = c.seed;
    j["spacing"] = c.spacing;
    j["count"] = c.count;
    return j;
}

} // namespace tiler
