#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "directl/display_model.hpp"
#include "directl/display_profile.hpp"
#include "directl/errors.hpp"
#include "directl/image.hpp"
#include "directl/subpixel_repurposing.hpp"

namespace directl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// One rendered ray: pixel (src_x, src_y) of view `view`.
struct RayKey {
    ViewIndex view = 0;
    std::uint32_t src_x = 0;
    std::uint32_t src_y = 0;

    bool operator==(const RayKey&) const = default;
};

/// Unique rays in render order. The first height*width rays feed the R slots in row-major
/// order; idx_g / idx_b name the ray feeding each G / B slot.
struct RaySet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<RayKey> rays;
    std::vector<std::uint32_t> idx_g;
    std::vector<std::uint32_t> idx_b;

    std::size_t n_rays() const { return rays.size(); }
    double beta() const {
        const std::size_t pixels = height * width;
        return pixels == 0 ? 0.0 : static_cast<double>(rays.size()) / static_cast<double>(pixels);
    }

    bool operator==(const RaySet&) const = default;
};

inline RaySet build_rayset(const EncodedIndexMatrix& m) {
    const std::size_t pixels = m.height * m.width;
    const std::size_t slots = m.entries.size();
    if (slots != pixels * 3) throw UsageError("build_rayset: index matrix is not fully populated");
    if (slots >= std::numeric_limits<std::uint32_t>::max()) throw UsageError("build_rayset: panel too large");
    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

    // Bucket slots by source pixel; a ray is a (bucket, view) group.
    std::vector<std::uint32_t> start(pixels + 1, 0);
    for (const auto& e : m.entries) {
        if (e.src_x >= m.height || e.src_y >= m.width) throw FormatError("build_rayset: source pixel out of range");
        ++start[static_cast<std::size_t>(e.src_x) * m.width + e.src_y + 1];
    }
    for (std::size_t i = 0; i < pixels; ++i) start[i + 1] += start[i];
    std::vector<std::uint32_t> members(slots);
    {
        std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
        for (std::size_t i = 0; i < slots; ++i) {
            const auto& e = m.entries[i];
            members[fill[static_cast<std::size_t>(e.src_x) * m.width + e.src_y]++] = static_cast<std::uint32_t>(i);
        }
    }

    std::vector<std::uint32_t> ray_of(slots, kNone);
    // Groups without an R slot, keyed by their first slot, numbered after the R rays.
    std::vector<std::uint32_t> tail_first;
    for (std::size_t p = 0; p < pixels; ++p) {
        const auto b = members.begin() + start[p], e = members.begin() + start[p + 1];
        std::sort(b, e, [&](std::uint32_t a, std::uint32_t c) {
            const auto va = m.entries[a].view, vc = m.entries[c].view;
            return va != vc ? va < vc : a < c;
        });
        for (auto g = b; g != e;) {
            const ViewIndex v = m.entries[*g].view;
            auto ge = g;
            std::uint32_t r_slot = kNone;
            while (ge != e && m.entries[*ge].view == v) {
                if (*ge % 3 == 0) {
                    if (r_slot != kNone) throw FormatError("build_rayset: two R slots share one source ray");
                    r_slot = *ge;
                }
                ++ge;
            }
            if (r_slot != kNone) {
                for (auto it = g; it != ge; ++it) ray_of[*it] = r_slot / 3;
            } else {
                tail_first.push_back(*g); // g is the smallest slot of the group after the sort
            }
            g = ge;
        }
    }
    std::sort(tail_first.begin(), tail_first.end());
    std::vector<std::uint32_t> tail_rank(slots, kNone);
    for (std::size_t i = 0; i < tail_first.size(); ++i) tail_rank[tail_first[i]] = static_cast<std::uint32_t>(pixels + i);
    for (std::size_t p = 0; p < pixels; ++p) {
        const auto b = members.begin() + start[p], e = members.begin() + start[p + 1];
        for (auto g = b; g != e;) {
            auto ge = g;
            while (ge != e && m.entries[*ge].view == m.entries[*g].view) ++ge;
            if (ray_of[*g] == kNone)
                for (auto it = g; it != ge; ++it) ray_of[*it] = tail_rank[*g];
            g = ge;
        }
    }

    RaySet rs;
    rs.height = m.height;
    rs.width = m.width;
    rs.rays.resize(pixels + tail_first.size());
    rs.idx_g.resize(pixels);
    rs.idx_b.resize(pixels);
    for (std::size_t i = 0; i < slots; ++i) {
        const auto& e = m.entries[i];
        rs.rays[ray_of[i]] = RayKey{e.view, e.src_x, e.src_y};
    }
    for (std::size_t j = 0; j < pixels; ++j) {
        rs.idx_g[j] = ray_of[j * 3 + 1];
        rs.idx_b[j] = ray_of[j * 3 + 2];
    }
    return rs;
}

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3(0, 0, -1);
};

struct Aabb {
    Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

    bool empty() const { return (min.array() > max.array()).any(); }
    void expand(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    void expand(const Aabb& b) {
        min = min.cwiseMin(b.min);
        max = max.cwiseMax(b.max);
    }
    bool contains(const Aabb& b) const { return (min.array() <= b.min.array()).all() && (max.array() >= b.max.array()).all(); }
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    double surface_area() const {
        if (empty()) return 0.0;
        const Vec3 e = extent();
        return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.z() * e.x());
    }
};

/// Parametric interval [t_enter, t_exit] where the ray is inside the box, clipped to t >= t_min.
/// Returns false on a miss.
inline bool intersect(const Aabb& box, const Ray& ray, double& t_enter, double& t_exit, double t_min = 0.0) {
    double lo = t_min, hi = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a], d = ray.direction[a];
        if (d == 0.0) {
            if (o < box.min[a] || o > box.max[a]) return false;
            continue;
        }
        double t0 = (box.min[a] - o) / d, t1 = (box.max[a] - o) / d;
        if (t0 > t1) std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
        if (lo > hi) return false;
    }
    t_enter = lo;
    t_exit = hi;
    return true;
}

/// Per-view camera poses (camera-to-world) on an arc around a common target.
struct CameraRig {
    Mat4 center_pose = Mat4::Identity();
    std::vector<Mat4> view_poses;
    Vec3 arc_center = Vec3::Zero();
    double radius = 1.0;
};

/// Angle of view v on an arc spanning `fov` between the outermost cameras.
inline double view_angle(std::size_t v, std::size_t num_views, double fov) {
    if (num_views <= 1) return 0.0;
    const double n1 = static_cast<double>(num_views - 1);
    return fov * (2.0 * static_cast<double>(v) - n1) / (2.0 * n1);
}

/// Rigid rotation by `angle` about the axis `axis` through `pivot`.
inline Mat4 rotation_about(const Vec3& axis, double angle, const Vec3& pivot) {
    Mat4 r = Mat4::Identity();
    const Mat3 rot = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    r.topLeftCorner<3, 3>() = rot;
    r.topRightCorner<3, 1>() = pivot - rot * pivot;
    return r;
}

/// Cameras look along local -z; local x runs down the image rows and is the vertical axis the
/// arc turns about. Views sweep toward local +y as v grows.
inline CameraRig camera_rig(const DisplayProfile& profile, const Mat4& center_pose, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw UsageError("camera_rig: radius must be positive");
    CameraRig rig;
    rig.center_pose = center_pose;
    rig.radius = radius;
    const Vec3 pos = center_pose.topRightCorner<3, 1>();
    const Vec3 forward = -center_pose.block<3, 1>(0, 2).normalized();
    const Vec3 up = center_pose.block<3, 1>(0, 0).normalized();
    rig.arc_center = pos + radius * forward;
    rig.view_poses.reserve(profile.num_views);
    for (std::size_t v = 0; v < profile.num_views; ++v) {
        const double theta = view_angle(v, profile.num_views, profile.fov);
        if (theta == 0.0)
            rig.view_poses.push_back(center_pose);
        else
            rig.view_poses.push_back(rotation_about(up, -theta, rig.arc_center) * center_pose);
    }
    return rig;
}

/// Pinhole ray generator for one rig. Pixel coordinates may be fractional.
class RayGenerator {
public:
    RayGenerator(const CameraRig& rig, const DisplayProfile& profile)
        : rig_(rig),
          half_h_(static_cast<double>(profile.height_px) / 2.0),
          half_w_(static_cast<double>(profile.width_px) / 2.0),
          focal_(profile.focal_px) {
        if (!(focal_ > 0.0)) throw UsageError("focal length must be positive");
        if (rig.view_poses.size() != profile.num_views) throw UsageError("rig does not match the profile view count");
    }

    Ray operator()(std::size_t view, double x, double y) const {
        const Mat4& T = rig_.view_poses[view];
        const Vec3 local((x - half_h_) / focal_, (y - half_w_) / focal_, -1.0);
        Ray r;
        r.origin = T.topRightCorner<3, 1>();
        r.direction = (T.topLeftCorner<3, 3>() * local).normalized();
        return r;
    }

    Ray operator()(const RayKey& key) const {
        return (*this)(key.view, static_cast<double>(key.src_x), static_cast<double>(key.src_y));
    }

private:
    const CameraRig& rig_;
    double half_h_, half_w_, focal_;
};

inline std::vector<Ray> ray_params(const RaySet& rayset, const CameraRig& rig, const DisplayProfile& profile) {
    const RayGenerator gen(rig, profile);
    std::vector<Ray> out;
    out.reserve(rayset.n_rays());
    for (const auto& k : rayset.rays) {
        if (k.view >= profile.num_views) throw UsageError("ray_params: view index out of range");
        out.push_back(gen(k));
    }
    return out;
}

/// Routes per-ray RGB colors (3 values per ray, in ray order) into the encoded image.
template <typename T>
Image<T> reorder_to_encoded(std::span<const T> colors, const RaySet& rayset) {
    if (colors.size() != rayset.n_rays() * 3) throw UsageError("reorder_to_encoded: color count does not match rays");
    Image<T> out(rayset.height, rayset.width);
    auto& px = out.data();
    const std::size_t pixels = rayset.height * rayset.width;
    for (std::size_t j = 0; j < pixels; ++j) {
        px[j * 3 + 0] = colors[j * 3 + 0];
        px[j * 3 + 1] = colors[static_cast<std::size_t>(rayset.idx_g[j]) * 3 + 1];
        px[j * 3 + 2] = colors[static_cast<std::size_t>(rayset.idx_b[j]) * 3 + 2];
    }
    return out;
}

template <typename T>
Image<T> reorder_to_encoded(const std::vector<T>& colors, const RaySet& rayset) {
    return reorder_to_encoded(std::span<const T>(colors), rayset);
}

/// Colors for each ray taken from a panel-resolution view stack.
template <typename T>
std::vector<T> sample_rays(const MultiViewStack<T>& stack, const RaySet& rayset) {
    std::vector<T> out(rayset.n_rays() * 3);
    for (std::size_t i = 0; i < rayset.rays.size(); ++i) {
        const auto& k = rayset.rays[i];
        if (k.view >= stack.size()) throw UsageError("sample_rays: view index out of range");
        const auto& img = stack[k.view];
        if (k.src_x >= img.height() || k.src_y >= img.width()) throw UsageError("sample_rays: stack smaller than the panel");
        for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = img(k.src_x, k.src_y, c);
    }
    return out;
}

} // namespace directl
