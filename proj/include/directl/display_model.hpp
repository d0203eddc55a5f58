#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "directl/display_profile.hpp"
#include "directl/errors.hpp"
#include "directl/image.hpp"

namespace directl {

using ViewIndex = std::uint16_t;

/// Per-subpixel viewpoint lookup for one panel (tan of the tilt is evaluated once).
class SubpixelViewMapper {
public:
    explicit SubpixelViewMapper(const DisplayProfile& profile)
        : height_(profile.height_px),
          width_(profile.width_px),
          line_count_(profile.line_count),
          offset_(profile.offset),
          num_views_(profile.num_views),
          row_slope_(3.0 * std::tan(profile.tilt_angle)) {
        validate(profile);
    }

    /// Horizontal distance from the subpixel's left edge to the farthest grating unit edge.
    double distance_offset(std::size_t x, std::size_t y, std::size_t k) const {
        return static_cast<double>(3 * y + k) + row_term(x);
    }

    ViewIndex view(std::size_t x, std::size_t y, std::size_t k) const {
        if (x >= height_ || y >= width_ || k > 2) throw UsageError("subpixel coordinate out of range");
        return view_from_distance(distance_offset(x, y, k));
    }

    double row_term(std::size_t x) const { return row_slope_ * static_cast<double>(x) - offset_; }

    ViewIndex view_from_distance(double d) const {
        double x_offset = d - line_count_ * std::floor(d / line_count_);
        if (x_offset < 0.0) x_offset = 0.0;
        if (x_offset >= line_count_) x_offset -= line_count_;
        const double nv = static_cast<double>(num_views_);
        double bin = nv * x_offset / line_count_;
        // Exact bin boundaries (rational tilt and pitch) land within rounding noise of an
        // integer; snap so they resolve like exact arithmetic does.
        const double nearest = std::round(bin);
        if (std::abs(bin - nearest) <= kBoundarySnap) bin = nearest;
        if (bin >= nv) bin = 0.0; // x_offset == line_count is the next unit's left edge
        const auto v = static_cast<std::size_t>(std::floor(bin));
        return static_cast<ViewIndex>(std::min(v, num_views_ - 1));
    }

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t num_views() const { return num_views_; }

    static constexpr double kBoundarySnap = 1e-9;

private:
    std::size_t height_;
    std::size_t width_;
    double line_count_;
    double offset_;
    std::size_t num_views_;
    double row_slope_;
};

inline ViewIndex subpixel_view(const DisplayProfile& profile, std::size_t x, std::size_t y, std::size_t k) {
    return SubpixelViewMapper(profile).view(x, y, k);
}

/// Viewpoint index per subpixel, shape (h, 3w), channels interleaved R,G,B.
struct ViewpointMatrix {
    std::size_t height = 0;
    std::size_t width = 0; // in pixels; each row holds 3 * width entries
    std::size_t num_views = 0;
    std::vector<ViewIndex> views;

    ViewIndex operator()(std::size_t x, std::size_t subpixel_col) const { return views[x * width * 3 + subpixel_col]; }
    ViewIndex at(std::size_t x, std::size_t y, std::size_t k) const { return views[(x * width + y) * 3 + k]; }

    bool operator==(const ViewpointMatrix&) const = default;
};

inline ViewpointMatrix viewpoint_matrix(const DisplayProfile& profile) {
    const SubpixelViewMapper mapper(profile);
    ViewpointMatrix m;
    m.height = profile.height_px;
    m.width = profile.width_px;
    m.num_views = profile.num_views;
    m.views.resize(m.height * m.width * 3);
    const std::size_t row_len = m.width * 3;
    for (std::size_t x = 0; x < m.height; ++x) {
        const double row = mapper.row_term(x);
        ViewIndex* out = m.views.data() + x * row_len;
        for (std::size_t s = 0; s < row_len; ++s) out[s] = mapper.view_from_distance(static_cast<double>(s) + row);
    }
    return m;
}

template <typename T>
using MultiViewStack = std::vector<Image<T>>;

/// Bilinear resample with pixel-center alignment; identity when the size already matches.
template <typename T>
Image<T> resize_bilinear(const Image<T>& src, std::size_t height, std::size_t width) {
    if (src.height() == height && src.width() == width) return src;
    if (src.empty()) throw UsageError("cannot resize an empty image");
    Image<T> dst(height, width);
    const double sy = static_cast<double>(src.height()) / static_cast<double>(height);
    const double sx = static_cast<double>(src.width()) / static_cast<double>(width);
    auto coord = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
        pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(pos));
        i1 = std::min(i0 + 1, n - 1);
        frac = pos - static_cast<double>(i0);
    };
    for (std::size_t x = 0; x < height; ++x) {
        std::size_t r0, r1;
        double fr;
        coord((static_cast<double>(x) + 0.5) * sy - 0.5, src.height(), r0, r1, fr);
        for (std::size_t y = 0; y < width; ++y) {
            std::size_t c0, c1;
            double fc;
            coord((static_cast<double>(y) + 0.5) * sx - 0.5, src.width(), c0, c1, fc);
            for (std::size_t k = 0; k < 3; ++k) {
                const double top = (1 - fc) * src(r0, c0, k) + fc * src(r0, c1, k);
                const double bottom = (1 - fc) * src(r1, c0, k) + fc * src(r1, c1, k);
                const double v = (1 - fr) * top + fr * bottom;
                if constexpr (std::is_integral_v<T>)
                    dst(x, y, k) = static_cast<T>(std::lround(v));
                else
                    dst(x, y, k) = static_cast<T>(v);
            }
        }
    }
    return dst;
}

/// Writes the subpixels of `encoded` assigned to `view` from a panel-sized view image.
template <typename T>
void interlace_view(const ViewpointMatrix& V, std::size_t view, const Image<T>& view_image, Image<T>& encoded) {
    if (view_image.height() != V.height || view_image.width() != V.width)
        throw UsageError("view image must match the panel size");
    if (encoded.height() != V.height || encoded.width() != V.width) throw UsageError("encoded image size mismatch");
    const auto& src = view_image.data();
    auto& dst = encoded.data();
    for (std::size_t i = 0; i < V.views.size(); ++i)
        if (V.views[i] == view) dst[i] = src[i];
}

/// Standard interlacing: resample every view to the panel, then copy each subpixel from the
/// view assigned to it at the same position.
template <typename T>
Image<T> interlace(const DisplayProfile& profile, const MultiViewStack<T>& stack, const ViewpointMatrix& V) {
    if (stack.empty()) throw UsageError("interlace: empty view stack");
    if (stack.size() != profile.num_views) throw UsageError("interlace: stack size must equal num_views");
    if (V.height != profile.height_px || V.width != profile.width_px) throw UsageError("interlace: viewpoint matrix does not match profile");
    for (const auto& img : stack)
        if (img.height() != stack.front().height() || img.width() != stack.front().width())
            throw UsageError("interlace: views differ in size");
    Image<T> encoded(profile.height_px, profile.width_px);
    const bool native = stack.front().height() == profile.height_px && stack.front().width() == profile.width_px;
    for (std::size_t v = 0; v < stack.size(); ++v) {
        if (native)
            interlace_view(V, v, stack[v], encoded);
        else
            interlace_view(V, v, resize_bilinear(stack[v], profile.height_px, profile.width_px), encoded);
    }
    return encoded;
}

} // namespace directl
