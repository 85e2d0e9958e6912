#pragma once

// Image files <-> Tensor[3,H,W] in [0,1]. Binary PPM (P6) is handled here;
// PNG goes through libpng's simplified API. Resizing is bilinear with
// half-pixel centres.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "phaseformer/error.hpp"
#include "phaseformer/tensor.hpp"

namespace phaseformer {

/// 8-bit interleaved RGB.
struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // height * width * 3
};

namespace detail {

inline std::string extension_of(const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PpmCursor {
public:
    PpmCursor(const std::vector<std::uint8_t>& b, const std::string& path) : b_(b), path_(path) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw IngestionError("'" + path_ + "': " + what + " at byte offset " + std::to_string(pos_));
    }

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number() {
        skip_space_and_comments();
        if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("expected a decimal header field");
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
            if (v > (1u << 24)) fail("header field too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos_ = 0;

private:
    const std::vector<std::uint8_t>& b_;
    const std::string& path_;
};

}  // namespace detail

inline RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
    detail::PpmCursor cur(bytes, path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') cur.fail("missing P6 magic");
    cur.pos_ = 2;
    RgbImage img;
    img.width = cur.number();
    img.height = cur.number();
    const std::size_t maxval = cur.number();
    if (img.width == 0 || img.height == 0) cur.fail("zero image dimension");
    if (maxval != 255) cur.fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
    if (cur.pos_ >= bytes.size() || !std::isspace(bytes[cur.pos_])) cur.fail("expected whitespace after maxval");
    ++cur.pos_;
    const std::size_t need = img.width * img.height * 3;
    if (bytes.size() - cur.pos_ < need) {
        cur.pos_ = bytes.size();
        cur.fail("pixel data truncated (need " + std::to_string(need) + " bytes)");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos_),
                      bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos_ + need));
    return img;
}

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline RgbImage read_png(const std::string& path) {
    const auto bytes = detail::read_bytes(path);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw IngestionError("'" + path + "': PNG header rejected at byte offset 0: " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage img;
    img.width = image.width;
    img.height = image.height;
    img.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IngestionError("'" + path + "': PNG decode failed: " + msg);
    }
    return img;
}

inline void write_png(const std::string& path, const RgbImage& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw IngestionError("'" + path + "': PNG write failed: " + image.message);
    }
}

inline RgbImage read_rgb(const std::string& path) {
    const auto ext = detail::extension_of(path);
    if (ext == "png") return read_png(path);
    if (ext == "ppm" || ext == "pnm") return decode_ppm(detail::read_bytes(path), path);
    // fall back to sniffing the magic bytes
    const auto bytes = detail::read_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return read_png(path);
    throw IngestionError("'" + path + "': unsupported image format at byte offset 0");
}

inline void write_rgb(const std::string& path, const RgbImage& img) {
    if (detail::extension_of(path) == "png") {
        write_png(path, img);
        return;
    }
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("write failed for '" + path + "'");
}

/// RGB bytes -> Tensor[3,H,W] with values byte/255.
template <typename T = float>
Tensor<T> to_tensor(const RgbImage& img) {
    const std::size_t hw = img.width * img.height;
    std::vector<T> v(3 * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = static_cast<T>(img.pixels[p * 3 + c]) / T(255);
    return Tensor<T>(Shape{3, img.height, img.width}, std::move(v));
}

/// Tensor[3,H,W] (or [1,3,H,W]) -> bytes, clamped to [0,1] and rounded.
template <typename T>
RgbImage to_rgb(const Tensor<T>& t) {
    Shape s = t.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    if (s.size() != 3 || s[0] != 3) throw DimensionError("to_rgb: expected [3,H,W], got " + to_string(t.shape()));
    RgbImage img;
    img.height = s[1];
    img.width = s[2];
    const std::size_t hw = img.width * img.height;
    img.pixels.resize(3 * hw);
    const auto& v = t.values();
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            const double x = std::clamp(static_cast<double>(v[c * hw + p]), 0.0, 1.0);
            img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(x * 255.0));
        }
    return img;
}

/// Bilinear resize of every trailing H x W plane, half-pixel centres, edge clamped.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() < 2) throw DimensionError("resize_bilinear: rank < 2");
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    if (out_h == 0 || out_w == 0) throw ConfigError("resize_bilinear: zero target size");
    const std::size_t planes = x.numel() / (h * w);
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(h, out_h), tx = taps(w, out_w);
    const auto& v = x.values();
    std::vector<T> out(planes * out_h * out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = v.data() + p * h * w;
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                const auto& a = ty[i];
                const auto& b = tx[j];
                const double top = (1 - b.f) * src[a.i0 * w + b.i0] + b.f * src[a.i0 * w + b.i1];
                const double bot = (1 - b.f) * src[a.i1 * w + b.i0] + b.f * src[a.i1 * w + b.i1];
                out[(p * out_h + i) * out_w + j] = static_cast<T>((1 - a.f) * top + a.f * bot);
            }
    }
    Shape s = x.shape();
    s[s.size() - 2] = out_h;
    s[s.size() - 1] = out_w;
    return Tensor<T>(std::move(s), std::move(out));
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    return resize_bilinear(x, 2 * x.dim(x.rank() - 2), 2 * x.dim(x.rank() - 1));
}

/// Loads a PPM or PNG as Tensor[3,H,W]; resized when a target is given.
template <typename T = float>
Tensor<T> load_image(const std::string& path, std::size_t target_h = 0, std::size_t target_w = 0) {
    auto t = to_tensor<T>(read_rgb(path));
    if (target_h && target_w && (t.dim(1) != target_h || t.dim(2) != target_w)) {
        t = resize_bilinear(t, target_h, target_w);
    }
    return t;
}

template <typename T>
void save_image(const std::string& path, const Tensor<T>& t) {
    write_rgb(path, to_rgb(t));
}

}  // namespace phaseformer
