#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "directl/errors.hpp"
#include "directl/ray_geometry.hpp"

namespace directl {

using Rgb = Eigen::Vector3d;

/// Anything that can color a ray.
class RadianceField {
public:
    virtual ~RadianceField() = default;
    virtual Rgb shade(const Ray& ray) const = 0;
};

struct VolumeSample {
    double sigma = 0.0;
    Rgb color = Rgb::Zero();
    double delta = 1.0;
};

/// Composited color plus the bookkeeping needed to check it: sum of alpha_i * T_i and the
/// transmittance left after the last sample.
struct Composite {
    Rgb color = Rgb::Zero();
    double weight_sum = 0.0;
    double t_final = 1.0;
};

/// Front-to-back alpha compositing.
class Compositor {
public:
    void add(double alpha, const Rgb& color) {
        const double w = alpha * transmittance_;
        out_.color += w * color;
        out_.weight_sum += w;
        transmittance_ *= 1.0 - alpha;
    }

    double transmittance() const { return transmittance_; }

    Composite finish(const Rgb& background) const {
        Composite c = out_;
        c.t_final = transmittance_;
        c.color += transmittance_ * background;
        return c;
    }

private:
    Composite out_;
    double transmittance_ = 1.0;
};

inline double sample_alpha(double sigma, double delta) { return -std::expm1(-sigma * delta); }

inline Composite volume_render(std::span<const VolumeSample> samples, const Rgb& background = Rgb::Zero()) {
    Compositor comp;
    for (const auto& s : samples) {
        if (!(s.sigma >= 0.0)) throw UsageError("volume_render: negative density");
        if (!(s.delta > 0.0)) throw UsageError("volume_render: non-positive sample spacing");
        comp.add(sample_alpha(s.sigma, s.delta), s.color);
    }
    return comp.finish(background);
}

inline Composite volume_render(const std::vector<VolumeSample>& samples, const Rgb& background = Rgb::Zero()) {
    return volume_render(std::span<const VolumeSample>(samples), background);
}

// ---------------------------------------------------------------------------------------------
// Gaussian shape and color

/// Sigma = R S S^T R^T.
inline Mat3 covariance_from_rs(const Vec3& scale, const Eigen::Quaterniond& rotation) {
    if (!((scale.array() > 0.0).all())) throw UsageError("covariance_from_rs: scales must be positive");
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw UsageError("covariance_from_rs: quaternion is not unit length");
    const Mat3 R = rotation.toRotationMatrix();
    const Mat3 M = R * scale.asDiagonal();
    const Mat3 cov = M * M.transpose();
    return 0.5 * (cov + cov.transpose());
}

inline constexpr std::size_t sh_coeff_count(int degree) { return static_cast<std::size_t>((degree + 1) * (degree + 1)); }

/// Real SH color with the usual splatting convention: coefficients ordered by degree then
/// order m = -l..l, stored coefficient-major (coeffs[j*3 + channel]); result offset by 0.5
/// and clamped to [0, 1].
inline Rgb eval_sh(int degree, std::span<const double> coeffs, const Vec3& dir) {
    static constexpr double C0 = 0.28209479177387814;
    static constexpr double C1 = 0.4886025119029199;
    static constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                    -1.0925484305920792, 0.5462742152960396};
    static constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};
    if (degree < 0 || degree > 3) throw UsageError("eval_sh: degree must be 0..3");
    if (coeffs.size() < sh_coeff_count(degree) * 3) throw UsageError("eval_sh: too few coefficients");

    double basis[16];
    basis[0] = C0;
    const double x = dir.x(), y = dir.y(), z = dir.z();
    if (degree >= 1) {
        basis[1] = -C1 * y;
        basis[2] = C1 * z;
        basis[3] = -C1 * x;
    }
    if (degree >= 2) {
        const double xx = x * x, yy = y * y, zz = z * z;
        basis[4] = C2[0] * x * y;
        basis[5] = C2[1] * y * z;
        basis[6] = C2[2] * (2.0 * zz - xx - yy);
        basis[7] = C2[3] * x * z;
        basis[8] = C2[4] * (xx - yy);
        if (degree >= 3) {
            basis[9] = C3[0] * y * (3.0 * xx - yy);
            basis[10] = C3[1] * x * y * z;
            basis[11] = C3[2] * y * (4.0 * zz - xx - yy);
            basis[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            basis[13] = C3[4] * x * (4.0 * zz - xx - yy);
            basis[14] = C3[5] * z * (xx - yy);
            basis[15] = C3[6] * x * (xx - 3.0 * yy);
        }
    }
    Rgb c = Rgb::Constant(0.5);
    const std::size_t n = sh_coeff_count(degree);
    for (std::size_t j = 0; j < n; ++j)
        for (int ch = 0; ch < 3; ++ch) c[ch] += basis[j] * coeffs[j * 3 + ch];
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------------------------
// Analytic fields

enum class AnalyticKind { constant_sphere, two_spheres, gradient_box };

inline AnalyticKind parse_analytic_kind(std::string_view name) {
    if (name == "constant_sphere") return AnalyticKind::constant_sphere;
    if (name == "two_spheres") return AnalyticKind::two_spheres;
    if (name == "gradient_box") return AnalyticKind::gradient_box;
    throw UsageError("unknown analytic field '" + std::string(name) + "'");
}

/// Density/color distribution ray-marched with uniform midpoint samples over its bounds.
class AnalyticField : public RadianceField {
public:
    AnalyticField(Aabb bounds, std::size_t steps, Rgb background)
        : bounds_(std::move(bounds)), steps_(steps), background_(std::move(background)) {
        if (steps_ == 0) throw UsageError("analytic field: step count must be positive");
    }

    Rgb shade(const Ray& ray) const override { return march(ray).color; }

    Composite march(const Ray& ray) const {
        double t0, t1;
        Compositor comp;
        if (!march_interval(ray, t0, t1) || !(t1 > t0)) return comp.finish(background_);
        const double delta = (t1 - t0) / static_cast<double>(steps_);
        for (std::size_t i = 0; i < steps_; ++i) {
            const Vec3 p = ray.origin + (t0 + (static_cast<double>(i) + 0.5) * delta) * ray.direction;
            Rgb color;
            const double sigma = sample(p, color);
            if (sigma > 0.0) comp.add(sample_alpha(sigma, delta), color);
        }
        return comp.finish(background_);
    }

    const Aabb& bounds() const { return bounds_; }
    std::size_t steps() const { return steps_; }

    /// Density at p; writes the emitted color when the density is positive.
    virtual double sample(const Vec3& p, Rgb& color) const = 0;

    /// Stretch of the ray that holds all density. Defaults to the bounding box.
    virtual bool march_interval(const Ray& ray, double& t0, double& t1) const { return intersect(bounds_, ray, t0, t1); }

private:
    Aabb bounds_;
    std::size_t steps_;
    Rgb background_;
};

struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    double sigma = 1.0;
    Rgb color = Rgb::Ones();
};

inline Aabb sphere_bounds(const Sphere& s) {
    Aabb b;
    b.min = s.center.array() - s.radius;
    b.max = s.center.array() + s.radius;
    return b;
}

class SpheresField : public AnalyticField {
public:
    SpheresField(std::vector<Sphere> spheres, std::size_t steps, Rgb background)
        : AnalyticField(bounds_of(spheres), steps, std::move(background)), spheres_(std::move(spheres)) {}

    double sample(const Vec3& p, Rgb& color) const override {
        double sigma = 0.0;
        Rgb acc = Rgb::Zero();
        for (const auto& s : spheres_) {
            if ((p - s.center).squaredNorm() <= s.radius * s.radius) {
                sigma += s.sigma;
                acc += s.sigma * s.color;
            }
        }
        if (sigma > 0.0) color = acc / sigma;
        return sigma;
    }

    // Union of the sphere chords, so samples start and stop on the surfaces.
    bool march_interval(const Ray& ray, double& t0, double& t1) const override {
        t0 = std::numeric_limits<double>::infinity();
        t1 = -t0;
        const double dd = ray.direction.squaredNorm();
        for (const auto& s : spheres_) {
            const Vec3 oc = ray.origin - s.center;
            const double b = oc.dot(ray.direction) / dd;
            const double disc = b * b - (oc.squaredNorm() - s.radius * s.radius) / dd;
            if (!(disc > 0.0)) continue;
            const double r = std::sqrt(disc);
            const double lo = std::max(0.0, -b - r), hi = -b + r;
            if (!(hi > lo)) continue;
            t0 = std::min(t0, lo);
            t1 = std::max(t1, hi);
        }
        return t1 > t0;
    }

private:
    static Aabb bounds_of(const std::vector<Sphere>& spheres) {
        if (spheres.empty()) throw UsageError("spheres field needs at least one sphere");
        Aabb b;
        for (const auto& s : spheres) {
            if (!(s.radius > 0.0) || !(s.sigma >= 0.0)) throw UsageError("sphere radius must be positive and density non-negative");
            b.expand(sphere_bounds(s));
        }
        return b;
    }

    std::vector<Sphere> spheres_;
};

/// Constant-density box whose color ramps linearly from black at `min` to white at `max`.
class GradientBoxField : public AnalyticField {
public:
    GradientBoxField(Aabb box, double sigma, std::size_t steps, Rgb background)
        : AnalyticField(box, steps, std::move(background)), box_(box), sigma_(sigma) {
        if (box.empty() || !((box.extent().array() > 0.0).all())) throw UsageError("gradient box must have positive extent");
        if (!(sigma > 0.0)) throw UsageError("gradient box density must be positive");
    }

    double sample(const Vec3& p, Rgb& color) const override {
        color = ((p - box_.min).array() / box_.extent().array()).cwiseMax(0.0).cwiseMin(1.0);
        return sigma_;
    }

private:
    Aabb box_;
    double sigma_;
};

inline constexpr std::size_t kDefaultMarchSteps = 512;

/// Built-in scenes centered on the origin, sized to fit a unit-radius sphere.
inline std::unique_ptr<AnalyticField> make_analytic_field(AnalyticKind kind, std::size_t steps = kDefaultMarchSteps,
                                                          const Rgb& background = Rgb::Zero()) {
    switch (kind) {
    case AnalyticKind::constant_sphere:
        return std::make_unique<SpheresField>(std::vector<Sphere>{{Vec3::Zero(), 1.0, 0.5, Rgb::Ones()}}, steps, background);
    case AnalyticKind::two_spheres:
        return std::make_unique<SpheresField>(
            std::vector<Sphere>{{Vec3(0.0, -0.2, 0.45), 0.4, 200.0, Rgb(0.9, 0.2, 0.1)},
                                {Vec3(0.0, 0.3, -0.45), 0.5, 3.0, Rgb(0.1, 0.3, 0.9)}},
            steps, background);
    case AnalyticKind::gradient_box: {
        Aabb box;
        box.min = Vec3::Constant(-0.6);
        box.max = Vec3::Constant(0.6);
        return std::make_unique<GradientBoxField>(box, 2.0, steps, background);
    }
    }
    throw UsageError("unknown analytic field");
}

} // namespace directl
