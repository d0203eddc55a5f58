#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "directl/errors.hpp"

namespace directl {

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

struct ViewResolution {
    std::size_t width = 0;
    std::size_t height = 0;
    bool operator==(const ViewResolution&) const = default;
};

/// Calibrated lenticular panel plus the pinhole focal length used by every view camera.
struct DisplayProfile {
    std::size_t width_px = 0;
    std::size_t height_px = 0;
    double line_count = 0.0; // grating unit width, in subpixel widths
    double tilt_angle = 0.0; // radians, clockwise positive
    double offset = 0.0;     // grating-to-panel shift, in subpixel widths
    std::size_t num_views = 0;
    double fov = 0.0;        // radians between the outermost cameras
    double focal_px = 0.0;

    // Reduced per-view resolutions for the multi-view baseline. Zero means "not provided".
    ViewResolution low_res;
    ViewResolution mid_res;

    std::string name;

    bool operator==(const DisplayProfile&) const = default;
};

inline void validate(const DisplayProfile& p) {
    if (p.width_px == 0 || p.height_px == 0) throw UsageError("profile: panel dimensions must be positive");
    if (!(p.line_count > 0.0) || !std::isfinite(p.line_count)) throw UsageError("profile: line_count must be > 0");
    if (p.num_views == 0) throw UsageError("profile: num_views must be >= 1");
    if (p.num_views > 65535) throw UsageError("profile: num_views must fit 16 bits");
    if (!(std::abs(p.tilt_angle) < std::numbers::pi / 2)) throw UsageError("profile: |tilt| must be < 90 degrees");
    if (!(p.fov > 0.0 && p.fov < std::numbers::pi)) throw UsageError("profile: fov must lie in (0, 180) degrees");
    if (!(p.focal_px > 0.0) || !std::isfinite(p.focal_px)) throw UsageError("profile: focal_px must be > 0");
    if (!std::isfinite(p.offset)) throw UsageError("profile: offset must be finite");
}

/// FNV-1a over the geometry fields; reduced view resolutions and the name are excluded.
/// Reals are hashed at 1e-9 resolution so a degrees/radians round trip through a file is stable.
inline std::uint64_t profile_hash(const DisplayProfile& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    auto fixed = [](double v) { return static_cast<std::uint64_t>(std::llround(v * 1e9)); };
    mix(p.width_px);
    mix(p.height_px);
    mix(fixed(p.line_count));
    mix(fixed(p.tilt_angle));
    mix(fixed(p.offset));
    mix(p.num_views);
    mix(fixed(p.fov));
    mix(fixed(p.focal_px));
    return h;
}

namespace detail {
inline DisplayProfile make_profile(std::string name, std::size_t w, std::size_t h, double lx, double tilt_deg,
                                   double off, std::size_t nv, double fov_deg, double focal, ViewResolution lr,
                                   ViewResolution mr) {
    DisplayProfile p;
    p.name = std::move(name);
    p.width_px = w;
    p.height_px = h;
    p.line_count = lx;
    p.tilt_angle = deg_to_rad(tilt_deg);
    p.offset = off;
    p.num_views = nv;
    p.fov = deg_to_rad(fov_deg);
    p.focal_px = focal;
    p.low_res = lr;
    p.mid_res = mr;
    return p;
}
} // namespace detail

// Calibrated panels. focal_px is not part of the calibration; it is set to the panel
// height, giving roughly a 53 degree vertical field of view per camera.
inline DisplayProfile profile_7_9_inch() {
    return detail::make_profile("7.9in", 1536, 2048, 6.2221, 10.8232, 4.2077, 48, 40.0, 2048.0, {420, 560},
                                {768, 1024});
}
inline DisplayProfile profile_15_6_inch() {
    return detail::make_profile("15.6in", 3840, 2160, 5.3344, 6.8526, 1.2547, 60, 53.0, 2160.0, {800, 450},
                                {1920, 1080});
}
inline DisplayProfile profile_65_inch() {
    return detail::make_profile("65in", 7680, 4320, 9.3597, 8.6517, 23.6677, 96, 80.0, 4320.0, {1600, 900},
                                {3840, 2160});
}

/// Small synthetic panel for fast end-to-end runs.
inline DisplayProfile profile_desk() {
    return detail::make_profile("desk", 192, 128, 4.6, 9.5, 1.3, 8, 30.0, 128.0, {48, 32}, {96, 64});
}

inline std::vector<DisplayProfile> builtin_profiles() {
    return {profile_7_9_inch(), profile_15_6_inch(), profile_65_inch(), profile_desk()};
}

inline std::optional<DisplayProfile> find_builtin_profile(std::string_view name) {
    for (auto& p : builtin_profiles())
        if (p.name == name) return p;
    return std::nullopt;
}

inline nlohmann::json profile_to_json(const DisplayProfile& p) {
    nlohmann::json j;
    j["name"] = p.name;
    j["width_px"] = p.width_px;
    j["height_px"] = p.height_px;
    j["line_count"] = p.line_count;
    j["tilt_angle_deg"] = rad_to_deg(p.tilt_angle);
    j["offset"] = p.offset;
    j["num_views"] = p.num_views;
    j["fov_deg"] = rad_to_deg(p.fov);
    j["focal_px"] = p.focal_px;
    if (p.low_res.width) j["lr"] = {p.low_res.width, p.low_res.height};
    if (p.mid_res.width) j["mr"] = {p.mid_res.width, p.mid_res.height};
    return j;
}

inline DisplayProfile profile_from_json(const nlohmann::json& j) {
    DisplayProfile p;
    try {
        p.name = j.value("name", std::string{});
        p.width_px = j.at("width_px").get<std::size_t>();
        p.height_px = j.at("height_px").get<std::size_t>();
        p.line_count = j.at("line_count").get<double>();
        p.tilt_angle = deg_to_rad(j.at("tilt_angle_deg").get<double>());
        p.offset = j.at("offset").get<double>();
        p.num_views = j.at("num_views").get<std::size_t>();
        p.fov = deg_to_rad(j.at("fov_deg").get<double>());
        p.focal_px = j.at("focal_px").get<double>();
        auto res = [&j](const char* key) {
            ViewResolution r;
            if (j.contains(key)) {
                auto& a = j.at(key);
                if (!a.is_array() || a.size() != 2) throw FormatError(std::string("profile: ") + key + " must be [w, h]");
                r.width = a[0].get<std::size_t>();
                r.height = a[1].get<std::size_t>();
            }
            return r;
        };
        p.low_res = res("lr");
        p.mid_res = res("mr");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("profile: ") + e.what());
    }
    try {
        validate(p);
    } catch (const UsageError& e) {
        throw FormatError(e.what());
    }
    return p;
}

/// Reads a JSON profile file. Tilt and field of view are stored in degrees on disk.
inline DisplayProfile load_profile(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open profile: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("profile " + path.string() + ": " + e.what());
    }
    return profile_from_json(j);
}

inline void save_profile(const std::filesystem::path& path, const DisplayProfile& p) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write profile: " + path.string());
    os << profile_to_json(p).dump(2) << "\n";
}

/// Accepts either a built-in profile name ("7.9in", "15.6in", "65in", "desk") or a file path.
inline DisplayProfile resolve_profile(const std::string& spec) {
    if (auto p = find_builtin_profile(spec)) return *p;
    return load_profile(spec);
}

} // namespace directl
