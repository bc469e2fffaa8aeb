#pragma once

#include "octa/coarse_net.hpp"
#include "octa/data_io.hpp"
#include "octa/fine_net.hpp"

#include <optional>
#include <string>
#include <vector>

namespace octa {

struct TrainConfig {
    int epochs = 200;
    double lr0 = 0.0005;
    double weight_decay = 0.0001;
    int batch_size = 2;
    double poly_power = 0.9;
    double rotation_deg = 10.0;  // augmentation range; 0 disables
    double dice_eps = 1e-6;
    bool joint = false;          // fine stage: also fine-tune the coarse net
    uint64_t seed = 42;

    void validate() const;
};

// lr0 * (1 - iter/max_iter)^power, stepped per iteration
double poly_lr(int64_t iter, int64_t max_iter, double lr0, double power);

// rotation about the image center; bilinear for intensities, nearest for
// masks, out-of-frame reads fill with 0
RasterImage rotate_image(const RasterImage& img, double degrees);
BinaryMask rotate_mask(const BinaryMask& m, double degrees);

// same uniformly drawn angle applied to the image and every present mask
void augment(RasterImage& img, AnnotationSet& ann, Rng& rng, double max_degrees);

template <class T>
class Adam {
public:
    Adam(std::vector<ag::VarPtr<T>> params, double weight_decay)
        : params_(std::move(params)), wd_(T(weight_decay)) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
            m_.back().zero();
            v_.back().zero();
        }
    }

    void step(double lr) {
        ++t_;
        const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
        const T c1 = T(1) - T(std::pow(0.9, double(t_)));
        const T c2 = T(1) - T(std::pow(0.999, double(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (p.grad.empty()) continue;
            for (int64_t j = 0; j < p.value.numel(); ++j) {
                const T g = p.grad[j] + wd_ * p.value[j];
                m_[i][j] = b1 * m_[i][j] + (T(1) - b1) * g;
                v_[i][j] = b2 * v_[i][j] + (T(1) - b2) * g * g;
                const T mhat = m_[i][j] / c1;
                const T vhat = v_[i][j] / c2;
                p.value[j] -= T(lr) * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }
    const std::vector<ag::VarPtr<T>>& params() const { return params_; }
    Tensor<T>& slot_m(size_t i) { return m_[i]; }
    Tensor<T>& slot_v(size_t i) { return v_[i]; }

private:
    std::vector<ag::VarPtr<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    T wd_;
    int64_t t_ = 0;
};

// Versioned container: plain-text header (version, stage, epoch, seed,
// config hash + echo) followed by named little-endian float32 blobs.
struct Checkpoint {
    int version = 1;
    std::string stage;  // "coarse" | "fine"
    int epoch = 0;
    uint64_t seed = 0;
    int64_t adam_steps = 0;
    std::string coarse_source;  // fine stage: path of the coarse checkpoint
    std::string config_echo;    // KV text, includes the model configuration
    std::vector<std::pair<std::string, std::vector<float>>> blobs;

    const std::vector<float>* find_blob(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// model-config round-trip through the checkpoint's config echo
std::string encode_model_config(const CoarseConfig& c, const SrsConfig* s);
void decode_model_config(const std::string& echo, CoarseConfig& c, std::optional<SrsConfig>& s);
std::string encode_train_config(const TrainConfig& tc);

// store contents (params + buffers) <-> named blobs
void store_to_blobs(const nn::ParamStore<float>& ps, Checkpoint& c);
void blobs_to_store(const Checkpoint& c, nn::ParamStore<float>& ps, bool allow_partial = false);
void adam_to_blobs(Adam<float>& opt, Checkpoint& c);
void adam_from_blobs(const Checkpoint& c, Adam<float>& opt);

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double loss_pixel = 0.0;
    double loss_centerline = 0.0;  // 0 when absent
    double loss_total = 0.0;
    double seconds = 0.0;
};

std::string train_log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
    Checkpoint ckpt;
    std::vector<EpochLog> log;
};

// Coarse stage: MSE per branch, equal weights when dual.
TrainResult train_coarse(const TrainConfig& tc, const CoarseConfig& cc,
                         const std::vector<DatasetItem>& items);

// Fine stage: Dice loss on the fused map against the union ground truth
// (pixel OR centerline where both exist); the coarse net stays frozen in
// eval mode unless tc.joint.
TrainResult train_fine(const TrainConfig& tc, const SrsConfig& sc,
                       const std::vector<DatasetItem>& items, const Checkpoint& coarse_ckpt,
                       const std::string& coarse_path = "");

}  // namespace octa
