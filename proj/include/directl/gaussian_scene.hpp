#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "directl/errors.hpp"
#include "directl/radiance.hpp"

namespace directl {

/// Anisotropic Gaussians with opacity and SH color. SH blocks are stored coefficient-major,
/// sh_coeff_count(sh_degree) * 3 values per Gaussian.
struct GaussianScene {
    std::vector<Vec3> means;
    std::vector<Vec3> scales;
    std::vector<Eigen::Quaterniond> rotations;
    std::vector<double> opacities;
    int sh_degree = 0;
    std::vector<double> sh;

    // Filled by prepare().
    std::vector<Mat3> cov_inv;

    std::size_t size() const { return means.size(); }
    std::size_t sh_stride() const { return sh_coeff_count(sh_degree) * 3; }
    std::span<const double> sh_of(std::size_t i) const { return {sh.data() + i * sh_stride(), sh_stride()}; }

    /// Checks the invariants and caches inverse covariances.
    void prepare();
};

inline constexpr double kMaxCovarianceCondition = 1e12;

inline void GaussianScene::prepare() {
    const std::size_t n = means.size();
    if (scales.size() != n || rotations.size() != n || opacities.size() != n || sh.size() != n * sh_stride())
        throw FormatError("gaussian scene: attribute arrays differ in length");
    if (sh_degree < 0 || sh_degree > 3) throw FormatError("gaussian scene: SH degree must be 0..3");
    cov_inv.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto where = " (gaussian " + std::to_string(i) + ")";
        if (!means[i].allFinite() || !scales[i].allFinite() || !rotations[i].coeffs().allFinite() || !std::isfinite(opacities[i]))
            throw FormatError("gaussian scene: non-finite value" + where);
        if (!(scales[i].array() > 0.0).all()) throw FormatError("gaussian scene: non-positive scale" + where);
        if (std::abs(rotations[i].norm() - 1.0) > 1e-6) throw FormatError("gaussian scene: rotation is not unit length" + where);
        if (opacities[i] < 0.0 || opacities[i] > 1.0) throw FormatError("gaussian scene: opacity outside [0,1]" + where);
        const double ratio = scales[i].maxCoeff() / scales[i].minCoeff();
        if (ratio * ratio > kMaxCovarianceCondition) throw FormatError("gaussian scene: degenerate covariance" + where);
        const Mat3 R = rotations[i].toRotationMatrix();
        const Vec3 inv2 = scales[i].array().square().inverse();
        Mat3 ci = R * inv2.asDiagonal() * R.transpose();
        cov_inv[i] = 0.5 * (ci + ci.transpose());
    }
    for (double v : sh)
        if (!std::isfinite(v)) throw FormatError("gaussian scene: non-finite SH coefficient");
}

// ---------------------------------------------------------------------------------------------
// Binary point-cloud files (ASCII header, little-endian vertex records)

namespace detail {

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline std::optional<PlyType> ply_type(const std::string& s) {
    static const std::map<std::string, PlyType> types{
        {"char", PlyType::i8},   {"int8", PlyType::i8},     {"uchar", PlyType::u8},  {"uint8", PlyType::u8},
        {"short", PlyType::i16}, {"int16", PlyType::i16},   {"ushort", PlyType::u16}, {"uint16", PlyType::u16},
        {"int", PlyType::i32},   {"int32", PlyType::i32},   {"uint", PlyType::u32},  {"uint32", PlyType::u32},
        {"float", PlyType::f32}, {"float32", PlyType::f32}, {"double", PlyType::f64}, {"float64", PlyType::f64}};
    auto it = types.find(s);
    if (it == types.end()) return std::nullopt;
    return it->second;
}

inline std::size_t ply_size(PlyType t) {
    switch (t) {
    case PlyType::i8: case PlyType::u8: return 1;
    case PlyType::i16: case PlyType::u16: return 2;
    case PlyType::i32: case PlyType::u32: case PlyType::f32: return 4;
    case PlyType::f64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const char* p) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

inline double ply_read(PlyType t, const char* p) {
    switch (t) {
    case PlyType::i8: return load_le<std::int8_t>(p);
    case PlyType::u8: return load_le<std::uint8_t>(p);
    case PlyType::i16: return load_le<std::int16_t>(p);
    case PlyType::u16: return load_le<std::uint16_t>(p);
    case PlyType::i32: return load_le<std::int32_t>(p);
    case PlyType::u32: return load_le<std::uint32_t>(p);
    case PlyType::f32: return load_le<float>(p);
    case PlyType::f64: return load_le<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type;
    std::size_t offset;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

inline GaussianScene read_gaussian_scene(std::istream& in) {
    using namespace detail;
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw FormatError("scene file: missing 'ply' magic");
    bool binary_le = false, in_vertex = false, seen_vertex = false;
    std::size_t count = 0, stride = 0;
    std::vector<PlyProperty> props;
    for (;;) {
        if (!std::getline(in, line)) throw FormatError("scene file: header not terminated");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header") break;
        if (word == "comment" || word == "obj_info" || word.empty()) continue;
        if (word == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") throw FormatError("scene file: only binary_little_endian is supported");
            binary_le = true;
        } else if (word == "element") {
            std::string name;
            long long n = -1;
            ls >> name >> n;
            if (!ls || n < 0) throw FormatError("scene file: malformed element line");
            if (name == "vertex") {
                if (seen_vertex) throw FormatError("scene file: duplicate vertex element");
                if (!props.empty()) throw FormatError("scene file: vertex element must come first");
                seen_vertex = in_vertex = true;
                count = static_cast<std::size_t>(n);
            } else {
                if (!seen_vertex) throw FormatError("scene file: vertex element must come first");
                in_vertex = false;
            }
        } else if (word == "property") {
            std::string type, name;
            ls >> type;
            if (type == "list") {
                if (in_vertex) throw FormatError("scene file: list properties are not supported on vertices");
                continue;
            }
            ls >> name;
            if (!in_vertex) continue;
            const auto t = ply_type(type);
            if (!t || name.empty()) throw FormatError("scene file: bad property line '" + line + "'");
            props.push_back({name, *t, stride});
            stride += ply_size(*t);
        } else {
            throw FormatError("scene file: unexpected header line '" + line + "'");
        }
    }
    if (!binary_le) throw FormatError("scene file: missing format line");
    if (!seen_vertex) throw FormatError("scene file: no vertex element");

    std::map<std::string, const PlyProperty*> by_name;
    for (const auto& p : props) by_name[p.name] = &p;
    auto need = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("scene file: missing property '" + name + "'");
        return it->second;
    };
    const PlyProperty* pos[3] = {need("x"), need("y"), need("z")};
    const PlyProperty* dc[3] = {need("f_dc_0"), need("f_dc_1"), need("f_dc_2")};
    const PlyProperty* opacity = need("opacity");
    const PlyProperty* scale[3] = {need("scale_0"), need("scale_1"), need("scale_2")};
    const PlyProperty* rot[4] = {need("rot_0"), need("rot_1"), need("rot_2"), need("rot_3")};
    std::size_t n_rest = 0;
    while (by_name.count("f_rest_" + std::to_string(n_rest))) ++n_rest;
    int degree;
    switch (n_rest) {
    case 0: degree = 0; break;
    case 9: degree = 1; break;
    case 24: degree = 2; break;
    case 45: degree = 3; break;
    default: throw FormatError("scene file: unsupported number of f_rest properties (" + std::to_string(n_rest) + ")");
    }
    std::vector<const PlyProperty*> rest(n_rest);
    for (std::size_t i = 0; i < n_rest; ++i) rest[i] = need("f_rest_" + std::to_string(i));

    GaussianScene scene;
    scene.sh_degree = degree;
    const std::size_t ncoef = sh_coeff_count(degree);
    scene.means.resize(count);
    scene.scales.resize(count);
    scene.rotations.resize(count);
    scene.opacities.resize(count);
    scene.sh.resize(count * ncoef * 3);
    std::vector<char> rec(stride);
    for (std::size_t i = 0; i < count; ++i) {
        const auto where = " in record " + std::to_string(i);
        if (!in.read(rec.data(), static_cast<std::streamsize>(stride))) throw FormatError("scene file: truncated payload" + where);
        auto get = [&](const PlyProperty* p) {
            const double v = ply_read(p->type, rec.data() + p->offset);
            if (!std::isfinite(v)) throw FormatError("scene file: non-finite '" + p->name + "'" + where);
            return v;
        };
        scene.means[i] = Vec3(get(pos[0]), get(pos[1]), get(pos[2]));
        scene.scales[i] = Vec3(std::exp(get(scale[0])), std::exp(get(scale[1])), std::exp(get(scale[2])));
        Eigen::Quaterniond q(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3]));
        if (!(q.norm() > 0.0)) throw FormatError("scene file: zero quaternion" + where);
        scene.rotations[i] = q.normalized();
        scene.opacities[i] = sigmoid(get(opacity));
        double* sh = scene.sh.data() + i * ncoef * 3;
        for (int ch = 0; ch < 3; ++ch) sh[ch] = get(dc[ch]);
        // Higher-order terms are stored channel by channel.
        for (std::size_t r = 0; r < n_rest; ++r) {
            const std::size_t ch = r / (ncoef - 1), j = 1 + r % (ncoef - 1);
            sh[j * 3 + ch] = get(rest[r]);
        }
        if (!scene.scales[i].allFinite() || !(scene.scales[i].array() > 0.0).all())
            throw FormatError("scene file: scale out of range" + where);
    }
    try {
        scene.prepare();
    } catch (const FormatError& e) {
        throw FormatError(std::string("scene file: ") + e.what());
    }
    return scene;
}

inline GaussianScene load_gaussian_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open scene file " + path.string());
    return read_gaussian_scene(in);
}

/// Writes float32 records in the layout read_gaussian_scene expects (logit opacity, log scales).
inline void write_gaussian_scene(std::ostream& out, const GaussianScene& scene) {
    const std::size_t n = scene.size();
    const std::size_t ncoef = sh_coeff_count(scene.sh_degree);
    const std::size_t n_rest = (ncoef - 1) * 3;
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"}) out << "property float " << p << "\n";
    for (std::size_t r = 0; r < n_rest; ++r) out << "property float f_rest_" << r << "\n";
    for (const char* p : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
        out << "property float " << p << "\n";
    out << "end_header\n";
    std::vector<float> rec;
    for (std::size_t i = 0; i < n; ++i) {
        rec.clear();
        for (int a = 0; a < 3; ++a) rec.push_back(static_cast<float>(scene.means[i][a]));
        rec.insert(rec.end(), {0.0f, 0.0f, 0.0f});
        const double* sh = scene.sh.data() + i * ncoef * 3;
        for (int ch = 0; ch < 3; ++ch) rec.push_back(static_cast<float>(sh[ch]));
        for (std::size_t r = 0; r < n_rest; ++r) {
            const std::size_t ch = r / (ncoef - 1), j = 1 + r % (ncoef - 1);
            rec.push_back(static_cast<float>(sh[j * 3 + ch]));
        }
        const double o = std::clamp(scene.opacities[i], 1e-12, 1.0 - 1e-12);
        rec.push_back(static_cast<float>(std::log(o / (1.0 - o))));
        for (int a = 0; a < 3; ++a) rec.push_back(static_cast<float>(std::log(scene.scales[i][a])));
        const auto& q = scene.rotations[i];
        rec.insert(rec.end(), {static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()), static_cast<float>(q.z())});
        out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(float)));
    }
}

inline void save_gaussian_scene(const std::filesystem::path& path, const GaussianScene& scene) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write scene file " + path.string());
    write_gaussian_scene(out, scene);
    if (!out) throw FormatError("failed writing scene file " + path.string());
}

} // namespace directl
