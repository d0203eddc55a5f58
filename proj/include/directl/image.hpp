#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "directl/errors.hpp"

namespace directl {

/// Interleaved RGB raster indexed as (row, column, channel).
template <typename T>
class Image {
public:
    Image() = default;
    Image(std::size_t height, std::size_t width, T fill = T{})
        : height_(height), width_(width), data_(height * width * 3, fill) {}

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t x, std::size_t y, std::size_t k) { return data_[(x * width_ + y) * 3 + k]; }
    const T& operator()(std::size_t x, std::size_t y, std::size_t k) const {
        return data_[(x * width_ + y) * 3 + k];
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Image&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<float>;
using Image8 = Image<std::uint8_t>;

inline std::uint8_t quantize_unit(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline Image8 quantize(const ImageF& img) {
    Image8 out(img.height(), img.width());
    std::transform(img.data().begin(), img.data().end(), out.data().begin(), quantize_unit);
    return out;
}

inline ImageF to_unit(const Image8& img) {
    ImageF out(img.height(), img.width());
    std::transform(img.data().begin(), img.data().end(), out.data().begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
    return out;
}

/// Binary PPM (P6, maxval 255).
inline void write_ppm(std::ostream& os, const Image8& img) {
    os << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data().data()), static_cast<std::streamsize>(img.size()));
}

inline void write_ppm(const std::filesystem::path& path, const Image8& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path.string());
    write_ppm(os, img);
    if (!os) throw FormatError("write failed: " + path.string());
}

namespace detail {
inline std::string next_ppm_token(std::istream& is) {
    std::string tok;
    char c;
    while (is.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}
} // namespace detail

inline Image8 read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open image: " + path.string());
    if (detail::next_ppm_token(is) != "P6") throw FormatError("not a binary PPM: " + path.string());
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(detail::next_ppm_token(is));
        h = std::stoul(detail::next_ppm_token(is));
        maxval = std::stoul(detail::next_ppm_token(is));
    } catch (const std::exception&) {
        throw FormatError("bad PPM header: " + path.string());
    }
    if (maxval != 255 || w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) throw FormatError("unsupported PPM header: " + path.string());
    Image8 img(h, w);
    is.read(reinterpret_cast<char*>(img.data().data()), static_cast<std::streamsize>(img.size()));
    if (static_cast<std::size_t>(is.gcount()) != img.size()) throw FormatError("truncated PPM: " + path.string());
    return img;
}

/// Root-mean-square difference over all subpixels on the 0-255 scale.
inline double rmse(const Image8& a, const Image8& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw FormatError("image dimensions differ");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

} // namespace directl
