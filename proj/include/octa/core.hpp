#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "octa/tensor.hpp"

namespace octa {

// Single-channel intensity grid in [0,1], the network input.
struct RasterImage {
    int h = 0, w = 0;
    std::vector<float> v;  // row-major

    float& at(int y, int x) { return v[size_t(y) * w + x]; }
    float at(int y, int x) const { return v[size_t(y) * w + x]; }
    void validate() const;
};

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;  // strictly {0,1}

    uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
    int64_t count() const;
    bool empty_mask() const { return count() == 0; }
};

struct AnnotationSet {
    std::optional<BinaryMask> pixel;
    std::optional<BinaryMask> centerline;

    void validate() const;  // at least one mask, matching shapes
};

// Per-pixel vessel probability in [0,1].
struct ConfidenceMap {
    int h = 0, w = 0;
    std::vector<float> v;

    float& at(int y, int x) { return v[size_t(y) * w + x]; }
    float at(int y, int x) const { return v[size_t(y) * w + x]; }
    void validate() const;
};

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    int64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

BinaryMask binarize(const ConfidenceMap& map, double threshold);
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// no 2x2 all-ones block anywhere
bool is_thin(const BinaryMask& m);

// Pads on the bottom/right edges by mirror reflection (edge row/column not
// repeated) so both dims become multiples of `mult`.
RasterImage reflect_pad_to_multiple(const RasterImage& img, int mult);
BinaryMask reflect_pad_to_multiple(const BinaryMask& m, int mult);
ConfidenceMap crop_top_left(const ConfidenceMap& map, int h, int w);

// tensor bridges ([1,1,H,W])
Tensor<float> image_to_tensor(const RasterImage& img);
ConfidenceMap map_from_tensor(const Tensor<float>& t, int n = 0);
Tensor<float> mask_to_tensor(const BinaryMask& m);

// ---- persistence ----

// 8-bit grayscale PNG; RGB(A) inputs are reduced by the BT.601 luma weights.
struct GrayPng {
    int h = 0, w = 0;
    std::vector<uint8_t> v;
};
GrayPng load_png_gray(const std::string& path);
void save_png_gray(const std::string& path, int h, int w, const uint8_t* data);

RasterImage load_image(const std::string& path);
void save_image(const std::string& path, const RasterImage& img);
// Masks must arrive strictly binary (0/255 or 0/1 after 8-bit load).
BinaryMask load_mask(const std::string& path);
void save_mask(const std::string& path, const BinaryMask& m);

// Confidence maps persist as a viewing PNG (x255, rounded) plus a lossless
// float32 little-endian sidecar: 8-byte magic "OCTACMAP", uint32 h, uint32 w,
// then h*w floats row-major.
void save_confidence(const std::string& png_path, const std::string& sidecar_path,
                     const ConfidenceMap& map);
ConfidenceMap load_confidence_sidecar(const std::string& path);

bool file_exists(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace octa
