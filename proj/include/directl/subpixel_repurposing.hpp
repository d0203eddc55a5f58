#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <limits>
#include <vector>

#include "directl/display_model.hpp"
#include "directl/display_profile.hpp"
#include "directl/errors.hpp"
#include "directl/image.hpp"

namespace directl {

/// Where one encoded subpixel takes its color from: pixel (src_x, src_y) of view `view`, channel `channel`.
struct SourceIndex {
    std::uint32_t src_x = 0;
    std::uint32_t src_y = 0;
    ViewIndex view = 0;
    std::uint8_t channel = 0;

    bool operator==(const SourceIndex&) const = default;
};

/// Source record for every encoded subpixel, shape (h, w, 3), plus the rendered pixel ratio.
struct EncodedIndexMatrix {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_views = 0;
    std::vector<SourceIndex> entries;
    double beta = 0.0;

    const SourceIndex& at(std::size_t x, std::size_t y, std::size_t k) const { return entries[(x * width + y) * 3 + k]; }
    SourceIndex& at(std::size_t x, std::size_t y, std::size_t k) { return entries[(x * width + y) * 3 + k]; }

    bool operator==(const EncodedIndexMatrix&) const = default;
};

struct RepurposeOptions {
    std::size_t area_width = 2; // grating units per area
    bool enabled = true;        // false reproduces the one-to-one standard mapping
};

/// Idle-subpixel buffer: at most one pending pixel per (view, channel).
class ChannelBuffer {
public:
    static constexpr std::uint64_t kEmpty = std::numeric_limits<std::uint64_t>::max();

    explicit ChannelBuffer(std::size_t num_views) : slots_(num_views * 3, kEmpty) {}

    bool has(std::size_t view, std::size_t channel) const { return slots_[view * 3 + channel] != kEmpty; }
    std::uint64_t peek(std::size_t view, std::size_t channel) const { return slots_[view * 3 + channel]; }

    /// Stores a pixel unless the slot is already occupied. Returns whether it was stored.
    bool store(std::size_t view, std::size_t channel, std::uint64_t pixel) {
        auto& s = slots_[view * 3 + channel];
        if (s != kEmpty) return false;
        s = pixel;
        return true;
    }

    std::uint64_t take(std::size_t view, std::size_t channel) {
        auto& s = slots_[view * 3 + channel];
        const auto p = s;
        s = kEmpty;
        return p;
    }

    void clear_view(std::size_t view) {
        for (std::size_t c = 0; c < 3; ++c) slots_[view * 3 + c] = kEmpty;
    }

private:
    std::vector<std::uint64_t> slots_;
};

/// Number of subpixel columns in one repurposing area.
inline std::size_t area_columns(const DisplayProfile& profile, std::size_t area_width) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(area_width) * profile.line_count));
}

/// Search window for the next same-view subpixel below the pixel (x, y). Rows and pixel
/// columns are inclusive bounds.
struct SearchWindow {
    std::size_t x_low, x_high, y_low, y_high;
};

inline SearchWindow search_window(std::size_t x, std::size_t y, std::size_t height, std::size_t width,
                                  std::size_t num_views, double line_count, bool positive_tilt) {
    const double views_per_unit = static_cast<double>(num_views) / line_count;
    const double last_row = static_cast<double>(height - 1);
    SearchWindow w{};
    w.x_low = static_cast<std::size_t>(std::min(static_cast<double>(x) + 2.0, last_row));
    w.x_high = static_cast<std::size_t>(
        std::floor(std::min(static_cast<double>(x) + 2.0 * views_per_unit + views_per_unit / 2.0, last_row)));
    const double reach = views_per_unit / 3.0;
    if (positive_tilt) {
        const double lo = std::max(std::floor(static_cast<double>(y) - reach), 0.0);
        w.y_low = static_cast<std::size_t>(lo);
        w.y_high = std::max(y, w.y_low);
    } else {
        // Same-view runs lean right when the grating tilts counter-clockwise.
        w.y_low = y;
        w.y_high = static_cast<std::size_t>(
            std::min(std::ceil(static_cast<double>(y) + reach), static_cast<double>(width - 1)));
    }
    return w;
}

namespace detail {

class RepurposeBuilder {
public:
    RepurposeBuilder(const DisplayProfile& profile, const ViewpointMatrix& V, std::size_t area_width)
        : profile_(profile),
          V_(V),
          h_(V.height),
          w_(V.width),
          cols_(V.width * 3),
          band_(area_columns(profile, area_width)),
          assigned_(h_ * cols_, 0),
          used_(h_ * w_, 0),
          buffer_(profile.num_views) {}

    EncodedIndexMatrix run() {
        EncodedIndexMatrix m;
        m.height = h_;
        m.width = w_;
        m.num_views = profile_.num_views;
        m.entries.resize(h_ * cols_);
        entries_ = &m.entries;
        for (std::size_t b = 0; b < cols_; b += band_) {
            area_ = b / band_;
            const std::size_t e = std::min(cols_, b + band_);
            for (std::size_t x = 0; x < h_; ++x)
                for (std::size_t s = b; s < e; ++s)
                    if (!assigned_[x * cols_ + s]) walk_chain(x, s);
        }
        return m;
    }

private:
    // Bit for (ray, channel) in a pixel's used mask. A pixel carries at most three rays,
    // one per distinct view among its channels; a ray is named by the first channel showing it.
    std::uint16_t used_bit(std::size_t x, std::size_t y, ViewIndex v, std::size_t c) const {
        const std::size_t base = (x * w_ + y) * 3;
        std::size_t j = 0;
        while (j < 3 && V_.views[base + j] != v) ++j;
        return static_cast<std::uint16_t>(1u << (j * 3 + c));
    }

    bool in_area(std::size_t s) const { return s / band_ == area_; }

    void assign(std::size_t x, std::size_t s, ViewIndex v, std::size_t sx, std::size_t sy, std::size_t c) {
        (*entries_)[x * cols_ + s] = SourceIndex{static_cast<std::uint32_t>(sx), static_cast<std::uint32_t>(sy), v,
                                                 static_cast<std::uint8_t>(c)};
        assigned_[x * cols_ + s] = 1;
        used_[sx * w_ + sy] |= used_bit(sx, sy, v, c);
    }

    // Render pixel (x, y) of view v for this slot and keep its other channels for reuse.
    void self_sample(std::size_t x, std::size_t y, std::size_t k, ViewIndex v) {
        assign(x, 3 * y + k, v, x, y, k);
        for (std::size_t c = 0; c < 3; ++c) {
            if (c == k) continue;
            if (used_[x * w_ + y] & used_bit(x, y, v, c)) continue;
            const std::size_t s = 3 * y + c;
            if (V_.views[x * cols_ + s] == v && !assigned_[x * cols_ + s]) {
                // A native neighbour slot of the same view takes the channel directly.
                if (in_area(s)) assign(x, s, v, x, y, c);
                continue;
            }
            buffer_.store(v, c, x * w_ + y);
        }
    }

    bool try_reuse(std::size_t x, std::size_t s, ViewIndex v, std::size_t k) {
        if (!buffer_.has(v, k)) return false;
        const std::uint64_t p = buffer_.take(v, k);
        const std::size_t sx = p / w_, sy = p % w_;
        if (used_[p] & used_bit(sx, sy, v, k)) return false;
        assign(x, s, v, sx, sy, k);
        return true;
    }

    // Next slot of view v below (x, y) that is free, in this area, and can be fed from the buffer.
    bool find_next(std::size_t& x, std::size_t& s, ViewIndex v, bool positive_tilt) const {
        const SearchWindow win =
            search_window(x, s / 3, h_, w_, profile_.num_views, profile_.line_count, positive_tilt);
        const std::size_t s_lo = win.y_low * 3;
        const std::size_t s_hi = std::min(win.y_high * 3 + 3, cols_);
        for (std::size_t xr = win.x_low; xr <= win.x_high; ++xr) {
            if (xr == x) continue;
            const std::size_t row = xr * cols_;
            for (std::size_t sc = s_lo; sc < s_hi; ++sc) {
                if (assigned_[row + sc] || V_.views[row + sc] != v) continue;
                if (!buffer_.has(v, sc % 3) || !in_area(sc)) continue;
                x = xr;
                s = sc;
                return true;
            }
        }
        return false;
    }

    void walk_chain(std::size_t x, std::size_t s) {
        const ViewIndex v = V_.views[x * cols_ + s];
        const bool positive_tilt = profile_.tilt_angle >= 0.0;
        do {
            if (!try_reuse(x, s, v, s % 3)) self_sample(x, s / 3, s % 3, v);
        } while (find_next(x, s, v, positive_tilt));
        buffer_.clear_view(v);
    }

    const DisplayProfile& profile_;
    const ViewpointMatrix& V_;
    std::size_t h_, w_, cols_;
    std::size_t band_;
    std::size_t area_ = 0;
    std::vector<std::uint8_t> assigned_;
    std::vector<std::uint16_t> used_;
    ChannelBuffer buffer_;
    std::vector<SourceIndex>* entries_ = nullptr;
};

} // namespace detail

/// Distinct (view, src_x, src_y) rays referenced by the matrix, divided by the pixel count.
inline double compute_beta(const EncodedIndexMatrix& m) {
    const std::size_t pixels = m.height * m.width;
    if (pixels == 0) return 0.0;
    // Bucket entries by source pixel, then count distinct views per bucket.
    std::vector<std::uint32_t> start(pixels + 1, 0);
    for (const auto& e : m.entries) ++start[static_cast<std::size_t>(e.src_x) * m.width + e.src_y + 1];
    for (std::size_t i = 0; i < pixels; ++i) start[i + 1] += start[i];
    std::vector<ViewIndex> views(m.entries.size());
    {
        std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
        for (const auto& e : m.entries) views[fill[static_cast<std::size_t>(e.src_x) * m.width + e.src_y]++] = e.view;
    }
    std::size_t distinct = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
        auto b = views.begin() + start[p], e = views.begin() + start[p + 1];
        std::sort(b, e);
        distinct += static_cast<std::size_t>(std::unique(b, e) - b);
    }
    return static_cast<double>(distinct) / static_cast<double>(pixels);
}

/// One-to-one mapping: every slot reads its own position in its own view.
inline EncodedIndexMatrix identity_index_matrix(const ViewpointMatrix& V) {
    EncodedIndexMatrix m;
    m.height = V.height;
    m.width = V.width;
    m.num_views = V.num_views;
    m.entries.resize(V.views.size());
    for (std::size_t x = 0; x < V.height; ++x)
        for (std::size_t y = 0; y < V.width; ++y)
            for (std::size_t k = 0; k < 3; ++k)
                m.at(x, y, k) = SourceIndex{static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), V.at(x, y, k),
                                            static_cast<std::uint8_t>(k)};
    m.beta = compute_beta(m);
    return m;
}

/// Builds the encoded-image index matrix. With repurposing enabled, the panel is cut into
/// vertical bands of `area_width` grating units; inside a band, same-view subpixels are
/// walked along the grating direction and reuse the idle channels of pixels already rendered
/// for that view.
inline EncodedIndexMatrix build_index_matrix(const DisplayProfile& profile, const ViewpointMatrix& V,
                                             const RepurposeOptions& opts = {}) {
    validate(profile);
    if (V.height != profile.height_px || V.width != profile.width_px || V.num_views != profile.num_views)
        throw UsageError("viewpoint matrix does not match profile");
    if (!opts.enabled) return identity_index_matrix(V);
    if (opts.area_width == 0) throw UsageError("area width must be >= 1");
    if (static_cast<double>(opts.area_width) * profile.line_count > static_cast<double>(3 * profile.width_px))
        throw UsageError("area width exceeds the panel width in grating units");
    auto m = detail::RepurposeBuilder(profile, V, opts.area_width).run();
    m.beta = compute_beta(m);
    return m;
}

/// Gathers the encoded image from a panel-resolution view stack through the index matrix.
template <typename T>
Image<T> assemble_encoded(const EncodedIndexMatrix& m, const MultiViewStack<T>& stack) {
    if (stack.size() != m.num_views) throw UsageError("assemble_encoded: stack size must equal num_views");
    for (const auto& img : stack)
        if (img.height() != m.height || img.width() != m.width)
            throw UsageError("assemble_encoded: views must be at panel resolution");
    Image<T> out(m.height, m.width);
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        out.data()[i] = stack[e.view](e.src_x, e.src_y, e.channel);
    }
    return out;
}

} // namespace directl
