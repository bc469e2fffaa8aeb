#pragma once

#include "octa/fractal.hpp"
#include "octa/metrics.hpp"
#include "octa/training.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace octa {

// Inference wrapper rebuilt from a checkpoint. Forward passes hold no graph;
// the same input always produces bitwise-identical maps.
class Predictor {
public:
    explicit Predictor(const Checkpoint& ck);

    struct Maps {
        ConfidenceMap pixel;
        std::optional<ConfidenceMap> centerline;
        ConfidenceMap final_map;  // fused output appropriate to the stage
    };
    // pads to the network stride internally and crops the maps back
    Maps run(const RasterImage& img) const;

    const std::string& stage() const { return stage_; }
    bool dual() const { return coarse_cfg_.dual_branch; }
    const CoarseConfig& coarse_config() const { return coarse_cfg_; }

private:
    CoarseConfig coarse_cfg_;
    std::optional<SrsConfig> srs_cfg_;
    std::shared_ptr<nn::ParamStore<float>> store_;
    CoarseNet<float> coarse_;
    SrsRefiner<float> srs_;
    std::string stage_;
};

struct PredictRecord {
    std::string stem;
    double seconds = 0.0;  // mean over warm runs
};

struct PredictSummary {
    std::vector<PredictRecord> records;
    double mean_seconds = 0.0;
    int warm_runs = 1;
};

// Writes, per item: <stem>.png/.f32 (final map), branch maps when dual, and a
// display copy of the binarized centerline widened to 7 px. Timing is wall
// clock per image, averaged over warm_runs forward passes (hardware
// dependent; runs > 1 adds one untimed warmup pass).
PredictSummary predict_to_dir(const Predictor& p, const std::vector<DatasetItem>& items,
                              const std::string& out_dir, int warm_runs = 1);

struct EvalOptions {
    double threshold = 0.5;
    bool tolerance = false;  // centerline protocol instead of exact pixel gt
    int tolerance_radius = 3;
    bool micro = false;                  // add a pooled-counts aggregate row
    bool auc_on_raw_centerline = false;  // tolerance mode: sweep AUC against the
                                         // raw centerline instead of the
                                         // dilated region
};

struct EvalResult {
    std::vector<MetricsRow> rows;  // one per image
    MetricsRow aggregate;          // macro mean
    std::optional<MetricsRow> micro;
    RocCurve pooled_roc;  // all pixels of all images in one sweep
    EvalOptions options;
    std::vector<std::string> warnings;

    std::string csv() const;
    std::string json() const;
};

EvalResult evaluate_maps(const std::vector<std::pair<std::string, ConfidenceMap>>& preds,
                         const std::vector<DatasetItem>& items, const EvalOptions& opt);

// paired two-sided t-tests per metric over matching per-image rows
std::string compare_csv(const EvalResult& a, const EvalResult& b);

// Table-shaped ablation: backbone (single branch), joint (dual-branch coarse,
// max-fused), two-stage (dual coarse + refiner). Checkpoints and logs land in
// work_dir.
struct AblateResult {
    std::vector<std::pair<std::string, MetricsRow>> rows;
    std::string csv() const;  // columns AUC, ACC, G-mean, Kappa, Dice, FDR
};

AblateResult run_ablation(const TrainConfig& tc, const CoarseConfig& base_cc, const SrsConfig& sc,
                          const std::vector<DatasetItem>& train,
                          const std::vector<DatasetItem>& test, const std::string& work_dir);

// fractal-dimension group analysis over binarized segmentation maps
struct FdGroupResult {
    std::vector<std::pair<std::string, FdResult>> group_a, group_b;
    bool has_b = false;
    GroupComparison comparison;  // valid when has_b

    std::string fd_csv() const;
};

FdGroupResult analyze_fd(const std::vector<std::string>& files_a,
                         const std::vector<std::string>& files_b, double threshold,
                         bool rank_sum, bool anchor_mean);

// the bundled benchmark split: 64x64 synthetic images, 20 train / 5 test
SynthParams benchmark_synth_params();
DatasetManifest ensure_benchmark_split(const std::string& root);

}  // namespace octa
