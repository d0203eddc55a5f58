#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "directl/display_model.hpp"
#include "directl/display_profile.hpp"
#include "directl/errors.hpp"
#include "directl/gaussian_raycaster.hpp"
#include "directl/gaussian_scene.hpp"
#include "directl/image.hpp"
#include "directl/radiance.hpp"
#include "directl/ray_geometry.hpp"
#include "directl/subpixel_repurposing.hpp"

namespace directl {

// ---------------------------------------------------------------------------------------------
// Output files that only appear once complete

/// Writes go to a hidden sibling file that is renamed over `path` on commit and removed otherwise.
class AtomicFile {
public:
    explicit AtomicFile(std::filesystem::path path) : path_(std::move(path)) {
        static std::mt19937_64 rng{std::random_device{}()};
        tmp_ = path_.parent_path() / ("." + path_.filename().string() + ".tmp" + std::to_string(rng() % 1000000007ULL));
        out_.open(tmp_, std::ios::binary | std::ios::trunc);
        if (!out_) throw FormatError("cannot write " + path_.string());
    }
    AtomicFile(const AtomicFile&) = delete;
    AtomicFile& operator=(const AtomicFile&) = delete;
    ~AtomicFile() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

    std::ostream& stream() { return out_; }

    void commit() {
        out_.flush();
        if (!out_) throw FormatError("failed writing " + path_.string());
        out_.close();
        std::error_code ec;
        std::filesystem::rename(tmp_, path_, ec);
        if (ec) throw FormatError("cannot move output into place at " + path_.string() + ": " + ec.message());
        committed_ = true;
    }

private:
    std::filesystem::path path_, tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

/// Remembers the files a command produced and deletes them unless the command finishes.
class OutputSet {
public:
    OutputSet() = default;
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;
    ~OutputSet() {
        if (done_) return;
        std::error_code ec;
        for (const auto& p : written_) std::filesystem::remove(p, ec);
    }

    void add(const std::filesystem::path& p) { written_.push_back(p); }
    void finish() { done_ = true; }

private:
    std::vector<std::filesystem::path> written_;
    bool done_ = false;
};

// ---------------------------------------------------------------------------------------------
// Precompute cache

inline constexpr char kCacheMagic[4] = {'D', 'L', 'R', 'C'};
inline constexpr std::uint32_t kCacheVersion = 1;
inline constexpr std::uint32_t kCacheRepurposed = 1u;

struct PrecomputeCache {
    std::uint64_t profile_hash = 0;
    std::uint32_t num_views = 0;
    std::uint32_t area_width = 0;
    bool repurposed = false;
    EncodedIndexMatrix index;
    RaySet rays;

    double beta() const { return rays.beta(); }
};

inline PrecomputeCache precompute(const DisplayProfile& profile, std::size_t area_width, bool repurpose) {
    const ViewpointMatrix V = viewpoint_matrix(profile);
    PrecomputeCache c;
    c.profile_hash = profile_hash(profile);
    c.num_views = static_cast<std::uint32_t>(profile.num_views);
    c.area_width = static_cast<std::uint32_t>(area_width);
    c.repurposed = repurpose;
    c.index = build_index_matrix(profile, V, RepurposeOptions{area_width, repurpose});
    c.rays = build_rayset(c.index);
    return c;
}

namespace detail {

class LeWriter {
public:
    explicit LeWriter(std::ostream& out) : out_(out) {}
    ~LeWriter() { flush(); }

    template <typename T>
    void put(T v) {
        static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        buf_.insert(buf_.end(), b, b + sizeof(T));
        if (buf_.size() >= (1u << 20)) flush();
    }
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void flush() {
        out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        buf_.clear();
    }

private:
    std::ostream& out_;
    std::vector<char> buf_;
};

class LeReader {
public:
    explicit LeReader(std::istream& in) : in_(in) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > buf_.size()) refill(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    bool at_end() {
        if (pos_ < buf_.size()) return false;
        return in_.peek() == std::char_traits<char>::eof();
    }

private:
    void refill(std::size_t need) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
        const std::size_t have = buf_.size();
        buf_.resize(have + (1u << 20));
        in_.read(buf_.data() + have, static_cast<std::streamsize>(1u << 20));
        buf_.resize(have + static_cast<std::size_t>(in_.gcount()));
        if (buf_.size() < need) throw FormatError("cache file is truncated");
    }

    std::istream& in_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline void write_cache(std::ostream& out, const PrecomputeCache& c) {
    detail::LeWriter w(out);
    w.bytes(kCacheMagic, 4);
    w.put<std::uint32_t>(kCacheVersion);
    w.put<std::uint64_t>(c.profile_hash);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.index.width));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.index.height));
    w.put<std::uint32_t>(c.num_views);
    w.put<std::uint32_t>(c.area_width);
    w.put<std::uint32_t>(c.repurposed ? kCacheRepurposed : 0u);
    w.put<std::uint64_t>(c.rays.n_rays());
    w.put<double>(c.index.beta);
    for (const auto& e : c.index.entries) {
        w.put<std::uint16_t>(e.view);
        w.put<std::uint32_t>(e.src_x);
        w.put<std::uint32_t>(e.src_y);
        w.put<std::uint8_t>(e.channel);
    }
    for (const auto& r : c.rays.rays) {
        w.put<std::uint16_t>(r.view);
        w.put<std::uint32_t>(r.src_x);
        w.put<std::uint32_t>(r.src_y);
    }
    for (auto i : c.rays.idx_g) w.put<std::uint32_t>(i);
    for (auto i : c.rays.idx_b) w.put<std::uint32_t>(i);
}

inline void save_cache(const std::filesystem::path& path, const PrecomputeCache& c) {
    AtomicFile f(path);
    write_cache(f.stream(), c);
    f.commit();
}

inline PrecomputeCache read_cache(std::istream& in) {
    detail::LeReader r(in);
    char magic[4];
    for (char& m : magic) m = static_cast<char>(r.get<std::uint8_t>());
    if (std::memcmp(magic, kCacheMagic, 4) != 0) throw FormatError("not a precompute cache (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCacheVersion) throw FormatError("unsupported cache version " + std::to_string(version));
    PrecomputeCache c;
    c.profile_hash = r.get<std::uint64_t>();
    const auto width = r.get<std::uint32_t>();
    const auto height = r.get<std::uint32_t>();
    c.num_views = r.get<std::uint32_t>();
    c.area_width = r.get<std::uint32_t>();
    const auto flags = r.get<std::uint32_t>();
    const auto n_rays = r.get<std::uint64_t>();
    const auto beta = r.get<double>();
    if ((flags & ~kCacheRepurposed) != 0) throw FormatError("cache has unknown flags");
    c.repurposed = (flags & kCacheRepurposed) != 0;
    const std::uint64_t pixels = static_cast<std::uint64_t>(width) * height;
    if (pixels == 0 || c.num_views == 0 || c.num_views > 65536) throw FormatError("cache header has invalid dimensions");
    if (n_rays < pixels || n_rays > 3 * pixels) throw FormatError("cache header has an invalid ray count");
    if (!std::isfinite(beta)) throw FormatError("cache header has an invalid beta");

    c.index.width = width;
    c.index.height = height;
    c.index.num_views = c.num_views;
    c.index.beta = beta;
    c.index.entries.resize(pixels * 3);
    for (std::uint64_t i = 0; i < pixels * 3; ++i) {
        SourceIndex e;
        e.view = r.get<std::uint16_t>();
        e.src_x = r.get<std::uint32_t>();
        e.src_y = r.get<std::uint32_t>();
        e.channel = r.get<std::uint8_t>();
        if (e.view >= c.num_views || e.src_x >= height || e.src_y >= width || e.channel != i % 3)
            throw FormatError("cache index record " + std::to_string(i) + " is out of range");
        c.index.entries[i] = e;
    }
    c.rays.height = height;
    c.rays.width = width;
    c.rays.rays.resize(n_rays);
    for (std::uint64_t i = 0; i < n_rays; ++i) {
        RayKey k;
        k.view = r.get<std::uint16_t>();
        k.src_x = r.get<std::uint32_t>();
        k.src_y = r.get<std::uint32_t>();
        if (k.view >= c.num_views || k.src_x >= height || k.src_y >= width)
            throw FormatError("cache ray record " + std::to_string(i) + " is out of range");
        c.rays.rays[i] = k;
    }
    for (auto* idx : {&c.rays.idx_g, &c.rays.idx_b}) {
        idx->resize(pixels);
        for (auto& v : *idx) {
            v = r.get<std::uint32_t>();
            if (v >= n_rays) throw FormatError("cache permutation entry is out of range");
        }
    }
    if (!r.at_end()) throw FormatError("cache file has trailing bytes");
    return c;
}

/// Loads a cache and checks that it was built for `profile`.
inline PrecomputeCache load_cache(const std::filesystem::path& path, const DisplayProfile& profile) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open cache " + path.string());
    PrecomputeCache c = read_cache(in);
    if (c.profile_hash != profile_hash(profile)) throw FormatError("cache was built for a different display profile");
    if (c.index.height != profile.height_px || c.index.width != profile.width_px || c.num_views != profile.num_views)
        throw FormatError("cache dimensions do not match the display profile");
    return c;
}

// ---------------------------------------------------------------------------------------------
// Poses

/// Whitespace-separated 4x4 row-major matrices, one per frame; '#' starts a comment.
inline std::vector<Mat4> parse_poses(std::istream& in) {
    std::vector<double> vals;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size() || !std::isfinite(v))
                throw FormatError("pose file line " + std::to_string(line_no) + ": bad number '" + tok + "'");
            vals.push_back(v);
        }
    }
    if (vals.empty() || vals.size() % 16 != 0) throw FormatError("pose file must hold a whole number of 4x4 matrices");
    std::vector<Mat4> poses;
    for (std::size_t i = 0; i < vals.size(); i += 16) {
        Mat4 m;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) m(r, c) = vals[i + 4 * r + c];
        const Mat3 R = m.topLeftCorner<3, 3>();
        const bool rigid = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6 &&
                           std::abs(R.determinant() - 1.0) < 1e-6 &&
                           (m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() < 1e-9;
        if (!rigid) throw FormatError("pose " + std::to_string(i / 16) + " is not a rigid transform");
        poses.push_back(m);
    }
    return poses;
}

inline std::vector<Mat4> load_poses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open pose file " + path.string());
    return parse_poses(in);
}

inline void write_poses(std::ostream& out, const std::vector<Mat4>& poses) {
    out.precision(17);
    for (const auto& m : poses) {
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) out << (c ? " " : "") << m(r, c);
            out << "\n";
        }
        out << "\n";
    }
}

/// Camera at `eye` looking at `target`, with image rows running along `down`.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& down = Vec3(0, -1, 0)) {
    const Vec3 z = (eye - target).normalized();
    const Vec3 x = (down - down.dot(z) * z).normalized();
    const Vec3 y = z.cross(x);
    Mat4 m = Mat4::Identity();
    m.block<3, 1>(0, 0) = x;
    m.block<3, 1>(0, 1) = y;
    m.block<3, 1>(0, 2) = z;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

/// Arc radius at which a sphere of `scene_radius` just fills the narrower half-angle of the view.
inline double default_arc_radius(const DisplayProfile& profile, double scene_radius) {
    const double half = std::atan(static_cast<double>(std::min(profile.height_px, profile.width_px)) / (2.0 * profile.focal_px));
    return scene_radius / std::sin(half);
}

// ---------------------------------------------------------------------------------------------
// Rendering

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct StageTime {
    std::string name;
    double seconds = 0.0;
};

struct FrameResult {
    ImageF encoded;
    std::vector<StageTime> stages;
    std::size_t rays = 0;

    double total_seconds() const {
        double s = 0.0;
        for (const auto& st : stages) s += st.seconds;
        return s;
    }
};

inline void store_rgb(float* dst, const Rgb& c) {
    dst[0] = static_cast<float>(c[0]);
    dst[1] = static_cast<float>(c[1]);
    dst[2] = static_cast<float>(c[2]);
}

/// Ray-order rendering: shade each unique ray once, then route colors into the panel.
inline FrameResult render_directl(const RadianceField& field, const CameraRig& rig, const DisplayProfile& profile,
                                  const RaySet& rayset) {
    if (rayset.height != profile.height_px || rayset.width != profile.width_px) throw UsageError("ray set does not match the profile");
    const RayGenerator gen(rig, profile);
    FrameResult fr;
    fr.rays = rayset.n_rays();
    auto t0 = Clock::now();
    std::vector<float> colors(rayset.n_rays() * 3);
    for (std::size_t i = 0; i < rayset.rays.size(); ++i) store_rgb(colors.data() + i * 3, field.shade(gen(rayset.rays[i])));
    fr.stages.push_back({"shade", seconds_since(t0)});
    t0 = Clock::now();
    fr.encoded = reorder_to_encoded(colors, rayset);
    fr.stages.push_back({"reorder", seconds_since(t0)});
    return fr;
}

enum class ViewRes { lr, mr, hr };

inline ViewRes parse_view_res(std::string_view s) {
    if (s == "lr") return ViewRes::lr;
    if (s == "mr") return ViewRes::mr;
    if (s == "hr") return ViewRes::hr;
    throw UsageError("view resolution must be lr, mr or hr");
}

inline ViewResolution view_resolution(const DisplayProfile& p, ViewRes r) {
    switch (r) {
    case ViewRes::lr: return p.low_res;
    case ViewRes::mr: return p.mid_res;
    case ViewRes::hr: return ViewResolution{p.width_px, p.height_px};
    }
    return ViewResolution{p.width_px, p.height_px};
}

/// Multi-view rendering: full per-view rasters, upsampled to the panel when smaller, then
/// interlaced. Rays of a reduced raster sample the panel-resolution camera at pixel-center
/// aligned fractional positions.
inline FrameResult render_standard(const RadianceField& field, const CameraRig& rig, const DisplayProfile& profile,
                                   const ViewpointMatrix& V, ViewResolution res) {
    if (res.width == 0 || res.height == 0) throw UsageError("view resolution must be positive");
    const RayGenerator gen(rig, profile);
    const std::size_t h = profile.height_px, w = profile.width_px;
    const bool native = res.height == h && res.width == w;
    const double sx = static_cast<double>(h) / static_cast<double>(res.height);
    const double sy = static_cast<double>(w) / static_cast<double>(res.width);
    FrameResult fr;
    fr.encoded = ImageF(h, w);
    fr.rays = profile.num_views * res.height * res.width;
    double shade_s = 0.0, resize_s = 0.0, interlace_s = 0.0;
    ImageF view(res.height, res.width);
    for (std::size_t v = 0; v < profile.num_views; ++v) {
        auto t0 = Clock::now();
        for (std::size_t x = 0; x < res.height; ++x) {
            const double px = native ? static_cast<double>(x) : (static_cast<double>(x) + 0.5) * sx - 0.5;
            for (std::size_t y = 0; y < res.width; ++y) {
                const double py = native ? static_cast<double>(y) : (static_cast<double>(y) + 0.5) * sy - 0.5;
                store_rgb(&view(x, y, 0), field.shade(gen(v, px, py)));
            }
        }
        shade_s += seconds_since(t0);
        t0 = Clock::now();
        if (native) {
            resize_s += seconds_since(t0);
            t0 = Clock::now();
            interlace_view(V, v, view, fr.encoded);
        } else {
            const ImageF up = resize_bilinear(view, h, w);
            resize_s += seconds_since(t0);
            t0 = Clock::now();
            interlace_view(V, v, up, fr.encoded);
        }
        interlace_s += seconds_since(t0);
    }
    fr.stages = {{"shade", shade_s}, {"resize", resize_s}, {"interlace", interlace_s}};
    return fr;
}

// ---------------------------------------------------------------------------------------------
// Fields from the command line

struct FieldSpec {
    std::filesystem::path scene;     // Gaussian scene file, or empty
    std::string analytic;            // analytic kind when no scene is given
    std::size_t steps = kDefaultMarchSteps;
    std::size_t heap_capacity = 128;
};

struct LoadedField {
    std::unique_ptr<RadianceField> field;
    double bounding_radius = 1.0; // about the world origin
};

/// Radius of the origin-centered sphere enclosing the box.
inline double bounding_radius(const Aabb& b) { return b.max.cwiseAbs().cwiseMax(b.min.cwiseAbs()).norm(); }

inline LoadedField load_field(const FieldSpec& spec) {
    LoadedField lf;
    if (!spec.scene.empty()) {
        GaussianScene scene = load_gaussian_scene(spec.scene);
        if (scene.size() == 0) throw FormatError("scene file holds no Gaussians");
        RaycastOptions opts;
        opts.heap_capacity = spec.heap_capacity;
        auto gf = std::make_unique<GaussianField>(std::move(scene), opts);
        lf.bounding_radius = bounding_radius(gf->bvh().nodes[0].box);
        lf.field = std::move(gf);
    } else {
        auto af = make_analytic_field(parse_analytic_kind(spec.analytic), spec.steps);
        lf.bounding_radius = bounding_radius(af->bounds());
        lf.field = std::move(af);
    }
    return lf;
}

// ---------------------------------------------------------------------------------------------
// Bench

struct BenchRun {
    std::string label;
    std::size_t rays = 0;
    std::vector<double> frame_seconds;

    double mean_seconds() const {
        double s = 0.0;
        for (double f : frame_seconds) s += f;
        return frame_seconds.empty() ? 0.0 : s / static_cast<double>(frame_seconds.size());
    }
    double rays_per_second() const { return mean_seconds() > 0 ? static_cast<double>(rays) / mean_seconds() : 0.0; }
};

/// Renders `frames` frames with each ray set, interleaving the runs frame by frame so slow
/// drifts in machine load hit both alike.
inline std::vector<BenchRun> bench_directl(const RadianceField& field, const DisplayProfile& profile,
                                           const std::vector<Mat4>& poses, double radius, std::size_t frames,
                                           const std::vector<std::pair<std::string, const RaySet*>>& sets) {
    if (frames == 0) throw UsageError("bench needs at least one frame");
    if (poses.empty()) throw UsageError("bench needs at least one pose");
    std::vector<BenchRun> runs;
    for (const auto& [label, rs] : sets) runs.push_back(BenchRun{label, rs->n_rays(), {}});
    for (std::size_t f = 0; f < frames; ++f) {
        const CameraRig rig = camera_rig(profile, poses[f % poses.size()], radius);
        for (std::size_t i = 0; i < sets.size(); ++i) {
            const FrameResult fr = render_directl(field, rig, profile, *sets[i].second);
            runs[i].frame_seconds.push_back(fr.total_seconds());
        }
    }
    return runs;
}

} // namespace directl
