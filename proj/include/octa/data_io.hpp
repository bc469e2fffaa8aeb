#pragma once

#include "octa/common.hpp"
#include "octa/core.hpp"

#include <string>
#include <vector>

namespace octa {

enum class SubsetTag { rose1_svc, rose1_dvc, rose1_svc_dvc, rose2, synthetic };
enum class AnnotationMode { dual, centerline_only };

SubsetTag parse_subset(const std::string& s);
std::string subset_name(SubsetTag t);
AnnotationMode default_mode(SubsetTag t);

// Plain-text key/value manifest describing one dataset root:
//   root = <path>            (relative paths resolve against the manifest file)
//   subset = rose1-svc | rose1-dvc | rose1-svc+dvc | rose2 | synthetic
//   mode = dual | centerline-only   (optional, defaults per subset)
//   dir.img / dir.gt_pixel / dir.gt_centerline / split.train / split.test
//     remap the on-disk directory names when a release uses different ones.
struct DatasetManifest {
    std::string root;
    SubsetTag subset = SubsetTag::synthetic;
    AnnotationMode mode = AnnotationMode::dual;
    std::string dir_img = "img";
    std::string dir_pixel = "gt_pixel";
    std::string dir_centerline = "gt_centerline";
    std::string dir_train = "train";
    std::string dir_test = "test";

    static DatasetManifest parse(const std::string& text, const std::string& base_dir = "");
    static DatasetManifest from_file(const std::string& path);
    std::string to_text() const;
};

struct DatasetItem {
    std::string stem;
    RasterImage image;
    AnnotationSet ann;
};

// Loads one split ("train" or "test"), ordered by lexicographic stem. All
// per-item problems are collected and reported together in one DataError.
// Canonical split sizes (90/27 for rose1, 90/22 for rose2) are checked softly;
// mismatches land in `warnings`.
std::vector<DatasetItem> load_split(const DatasetManifest& m, const std::string& split,
                                    std::vector<std::string>* warnings = nullptr);

// Iterative two-subiteration thinning, run to a global fixpoint together with
// a topology-safe cleanup pass that removes residual 2x2 blocks by deleting
// 8-simple pixels. Output is a subset of the input support, thin per is_thin,
// and preserves the number of 8-connected components.
BinaryMask skeletonize(const BinaryMask& mask);

int count_components8(const BinaryMask& mask);

// Dilation by a Euclidean disk, used for display widening (7 px wide canonical)
// and never for training targets.
BinaryMask widen_centerline(const BinaryMask& m, int width = 7);

struct SynthParams {
    int height = 128;
    int width = 128;
    int tree_count = 3;
    int branch_depth = 4;
    double width_min = 1.0;
    double width_max = 4.0;
    double capillary_density = 0.5;  // expected capillary strands per 64x64 tile
    double noise = 0.1;              // multiplicative speckle sigma; 0 disables
    uint64_t seed = 1;

    void validate() const;  // size >= 64, widths >= 1
};

struct SynthSample {
    RasterImage image;
    AnnotationSet ann;  // pixel support + skeletonized centerline
};

// Branching quadratic-curve vessel trees with depth-decreasing width plus a
// low-contrast capillary mesh; the speckle and horizontal-stripe noise are
// both multiplicative, so the image support always equals the pixel mask.
SynthSample synth_generate(const SynthParams& p);

// Materializes train/test splits in the canonical directory layout
// (<root>/<split>/img|gt_pixel|gt_centerline/*.png) plus a manifest.txt.
DatasetManifest write_synth_dataset(const SynthParams& base, int train_count, int test_count,
                                    const std::string& root);

}  // namespace octa
