#include "octa/core.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace octa {

void RasterImage::validate() const {
    if (h < 8 || w < 8) throw DataError("image too small: need at least 8x8");
    if (int64_t(v.size()) != int64_t(h) * w) throw ShapeError("image storage size mismatch");
    for (float x : v)
        if (!(x >= 0.0f && x <= 1.0f)) throw DataError("image values must lie in [0,1]");
}

void ConfidenceMap::validate() const {
    if (int64_t(v.size()) != int64_t(h) * w) throw ShapeError("confidence storage size mismatch");
    for (float x : v)
        if (!(x >= 0.0f && x <= 1.0f)) throw NumericError("confidence values must lie in [0,1]");
}

int64_t BinaryMask::count() const {
    int64_t n = 0;
    for (uint8_t x : v) n += x;
    return n;
}

void AnnotationSet::validate() const {
    if (!pixel && !centerline) throw DataError("annotation set needs at least one mask");
    if (pixel && centerline && (pixel->h != centerline->h || pixel->w != centerline->w))
        throw ShapeError("pixel and centerline masks differ in shape");
}

BinaryMask binarize(const ConfidenceMap& map, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
    BinaryMask out;
    out.h = map.h;
    out.w = map.w;
    out.v.resize(map.v.size());
    for (size_t i = 0; i < map.v.size(); ++i) out.v[i] = map.v[i] >= threshold ? 1 : 0;
    return out;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("confusion: mask shapes differ");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        if (gt.v[i]) {
            if (pred.v[i]) ++c.tp; else ++c.fn;
        } else {
            if (pred.v[i]) ++c.fp; else ++c.tn;
        }
    }
    return c;
}

bool is_thin(const BinaryMask& m) {
    for (int y = 0; y + 1 < m.h; ++y)
        for (int x = 0; x + 1 < m.w; ++x)
            if (m.at(y, x) && m.at(y, x + 1) && m.at(y + 1, x) && m.at(y + 1, x + 1)) return false;
    return true;
}

namespace {

// mirror index for bottom/right reflect padding (edge not repeated)
inline int mirror(int i, int n) { return i < n ? i : 2 * n - 2 - i; }

}  // namespace

RasterImage reflect_pad_to_multiple(const RasterImage& img, int mult) {
    const int H = round_up(img.h, mult), W = round_up(img.w, mult);
    if (H == img.h && W == img.w) return img;
    if (img.h < 2 || img.w < 2) throw DataError("image too small to reflect-pad");
    RasterImage out;
    out.h = H;
    out.w = W;
    out.v.resize(size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y, x) = img.at(mirror(y, img.h), mirror(x, img.w));
    return out;
}

BinaryMask reflect_pad_to_multiple(const BinaryMask& m, int mult) {
    const int H = round_up(m.h, mult), W = round_up(m.w, mult);
    if (H == m.h && W == m.w) return m;
    if (m.h < 2 || m.w < 2) throw DataError("mask too small to reflect-pad");
    BinaryMask out;
    out.h = H;
    out.w = W;
    out.v.resize(size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y, x) = m.at(mirror(y, m.h), mirror(x, m.w));
    return out;
}

ConfidenceMap crop_top_left(const ConfidenceMap& map, int h, int w) {
    if (h > map.h || w > map.w) throw ShapeError("crop: target larger than source");
    ConfidenceMap out;
    out.h = h;
    out.w = w;
    out.v.resize(size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = map.at(y, x);
    return out;
}

Tensor<float> image_to_tensor(const RasterImage& img) {
    Tensor<float> t({1, 1, img.h, img.w});
    std::copy(img.v.begin(), img.v.end(), t.data());
    return t;
}

ConfidenceMap map_from_tensor(const Tensor<float>& t, int n) {
    const auto& s = t.shape();
    if (s.size() != 4 || s[1] != 1) throw ShapeError("map_from_tensor: expected [N,1,H,W]");
    ConfidenceMap m;
    m.h = s[2];
    m.w = s[3];
    m.v.resize(size_t(m.h) * m.w);
    const float* src = t.data() + int64_t(n) * m.h * m.w;
    for (size_t i = 0; i < m.v.size(); ++i) {
        float x = src[i];
        if (!std::isfinite(x)) throw NumericError("non-finite value in network output");
        m.v[i] = std::min(1.0f, std::max(0.0f, x));
    }
    return m;
}

Tensor<float> mask_to_tensor(const BinaryMask& m) {
    Tensor<float> t({1, 1, m.h, m.w});
    for (size_t i = 0; i < m.v.size(); ++i) t[int64_t(i)] = float(m.v[i]);
    return t;
}

// ---- PNG ----

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

GrayPng load_png_gray(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    std::vector<png_bytep> rows;
    GrayPng out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int W = int(png_get_image_width(png, info));
    const int H = int(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    const int channels = int(png_get_channels(png, info));
    std::vector<uint8_t> raw(size_t(H) * W * channels);
    rows.resize(size_t(H));
    for (int y = 0; y < H; ++y) rows[size_t(y)] = raw.data() + size_t(y) * W * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.h = H;
    out.w = W;
    out.v.resize(size_t(H) * W);
    for (int64_t i = 0; i < int64_t(H) * W; ++i) {
        const uint8_t* p = raw.data() + size_t(i) * channels;
        if (channels == 1 || channels == 2) {
            out.v[size_t(i)] = p[0];
        } else {
            // BT.601 luma, rounded
            out.v[size_t(i)] = uint8_t((299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000);
        }
    }
    return out;
}

void save_png_gray(const std::string& path, int h, int w, const uint8_t* data) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(data + size_t(y) * w));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RasterImage load_image(const std::string& path) {
    GrayPng g = load_png_gray(path);
    RasterImage img;
    img.h = g.h;
    img.w = g.w;
    img.v.resize(g.v.size());
    for (size_t i = 0; i < g.v.size(); ++i) img.v[i] = float(g.v[i]) / 255.0f;
    img.validate();
    return img;
}

void save_image(const std::string& path, const RasterImage& img) {
    std::vector<uint8_t> bytes(img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i)
        bytes[i] = uint8_t(std::lround(std::min(1.0f, std::max(0.0f, img.v[i])) * 255.0f));
    save_png_gray(path, img.h, img.w, bytes.data());
}

BinaryMask load_mask(const std::string& path) {
    GrayPng g = load_png_gray(path);
    BinaryMask m;
    m.h = g.h;
    m.w = g.w;
    m.v.resize(g.v.size());
    for (size_t i = 0; i < g.v.size(); ++i) {
        const uint8_t x = g.v[i];
        if (x == 0) {
            m.v[i] = 0;
        } else if (x == 255 || x == 1) {
            m.v[i] = 1;
        } else {
            throw DataError("non-binary annotation value " + std::to_string(int(x)) + " in " + path);
        }
    }
    return m;
}

void save_mask(const std::string& path, const BinaryMask& m) {
    std::vector<uint8_t> bytes(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) bytes[i] = m.v[i] ? 255 : 0;
    save_png_gray(path, m.h, m.w, bytes.data());
}

void save_confidence(const std::string& png_path, const std::string& sidecar_path,
                     const ConfidenceMap& map) {
    std::vector<uint8_t> bytes(map.v.size());
    for (size_t i = 0; i < map.v.size(); ++i)
        bytes[i] = uint8_t(std::lround(std::min(1.0f, std::max(0.0f, map.v[i])) * 255.0f));
    save_png_gray(png_path, map.h, map.w, bytes.data());

    std::ofstream f(sidecar_path, std::ios::binary);
    if (!f) throw DataError("cannot write sidecar: " + sidecar_path);
    f.write("OCTACMAP", 8);
    const uint32_t h = uint32_t(map.h), w = uint32_t(map.w);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(map.v.data()), std::streamsize(map.v.size() * 4));
    if (!f) throw DataError("sidecar write failed: " + sidecar_path);
}

ConfidenceMap load_confidence_sidecar(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open sidecar: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "OCTACMAP", 8) != 0)
        throw DataError("bad sidecar magic in " + path);
    uint32_t h = 0, w = 0;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    if (!f || h == 0 || w == 0 || int64_t(h) * w > (int64_t(1) << 32))
        throw DataError("bad sidecar dimensions in " + path);
    ConfidenceMap m;
    m.h = int(h);
    m.w = int(w);
    m.v.resize(size_t(h) * w);
    f.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * 4));
    if (!f) throw DataError("sidecar truncated: " + path);
    return m;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    f << content;
    if (!f) throw DataError("write failed: " + path);
}

}  // namespace octa
