#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchlab/attacks.hpp"
#include "patchlab/classifier.hpp"
#include "patchlab/data.hpp"
#include "patchlab/meta.hpp"
#include "patchlab/model.hpp"

namespace patchlab {

enum class TrainMethod { Standard, AT, UAT, MAT };

struct AlphaPolicy {
    bool log_uniform = true;
    double min = kAlphaMinDefault;  // log-uniform range
    double max = kAlphaMaxDefault;
    double fixed = 0.01;            // used when log_uniform is false
};

struct TransferEvalConfig {
    bool enabled = false;
    AttackConfig attack;  // steps/batch/step size for the per-epoch attack
};

struct TrainConfig {
    TrainMethod method = TrainMethod::Standard;
    int epochs = 20;
    int batch_size = 32;
    double lr = 0.033;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;

    double sigma = 0.25;  // REPTILE rate
    int K = 5;            // I-FGSM iterations
    int P = 64;           // meta-set size
    int F = 5;            // selection trials
    InitMode init_mode = InitMode::Data;
    AlphaPolicy alpha;
    bool targeted = true;  // MAT default; AT/UAT run untargeted

    int checkpoint_every = 0;  // epochs; 0 = final only
    TransferEvalConfig transfer;

    // method-consistency invariants; throws before any training
    void validate() const {
        if (epochs < 0) throw std::runtime_error("train: epochs must be >= 0");
        if (batch_size < 1) throw std::runtime_error("train: batch size must be positive");
        if (!(lr > 0)) throw std::runtime_error("train: learning rate must be positive");
        switch (method) {
            case TrainMethod::Standard:
                break;
            case TrainMethod::AT:
                if (sigma != 0.0) throw std::runtime_error("train: AT requires sigma = 0");
                if (K < 1) throw std::runtime_error("train: AT requires K >= 1");
                break;
            case TrainMethod::UAT:
                if (P != 1 || K != 1 || sigma != 1.0)
                    throw std::runtime_error("train: UAT requires P = 1, K = 1, sigma = 1");
                if (alpha.log_uniform) throw std::runtime_error("train: UAT requires a fixed step size");
                break;
            case TrainMethod::MAT:
                if (P < 1 || K < 1) throw std::runtime_error("train: MAT requires P >= 1 and K >= 1");
                if (!(sigma > 0.0 && sigma <= 1.0)) throw std::runtime_error("train: MAT requires 0 < sigma <= 1");
                break;
        }
    }
};

// Forward/backward pass counters in single-sample units (see classifier.hpp),
// per outer step and cumulative.
struct CostCounters {
    PassCounters step;        // last outer step
    PassCounters cumulative;
};

struct StepMetrics {
    double clean_loss = 0.0;  // loss on the raw batch (standard: same as adv)
    double adv_loss = 0.0;    // loss on the perturbed batch used for the update
    int64_t step_fp = 0;
    int64_t step_bp = 0;
};

struct EpochRecord {
    int epoch = 0;
    double mean_clean_loss = 0.0;
    double mean_adv_loss = 0.0;
    double eval_clean_accuracy = 0.0;
    double transfer_accuracy = -1.0;  // accuracy under the epoch's transfer patch; -1 if disabled
    int64_t n_fp = 0;                 // cumulative
    int64_t n_bp = 0;
    double lr = 0.0;
};

struct TrainState {
    Model model;
    MetaSet meta;
    std::vector<EpochRecord> history;
    std::vector<AttackResult> transfer_attacks;  // recorded when transfer is enabled
    CostCounters counters;
};

class Trainer {
public:
    Trainer(const Dataset& data, const PerturbationSpec& spec, const Architecture& arch, const TrainConfig& config,
            uint64_t seed);

    // one outer step on a batch of sample indices; updates model and meta set
    StepMetrics mat_step(const std::vector<size_t>& batch_idx);

    // full training loop: epochs of shuffled minibatches, cosine-decayed
    // learning rate, optional per-epoch transfer attack
    TrainState run();

    Model& model() { return model_; }
    MetaSet& meta() { return meta_; }
    CostCounters& counters() { return counters_; }
    const TrainConfig& config() const { return config_; }

private:
    const Dataset& data_;
    PerturbationSpec spec_;
    TrainConfig config_;
    uint64_t seed_;
    Model model_;
    MetaSet meta_;
    ModelLossAdapter adapter_;
    CostCounters counters_;
    std::unordered_map<std::string, Tensor> sgd_velocity_;
    int64_t global_step_ = 0;
    int64_t total_steps_ = 0;

    double current_lr() const;
    void sgd_update(Graph& g, double lr);
    StepMetrics standard_step(const Tensor& x, const std::vector<int>& y);
    StepMetrics adversarial_step(const Tensor& x, const std::vector<int>& y, const std::vector<size_t>& batch_idx,
                                 uint64_t step_salt);
};

// convenience wrapper matching the train() operation
TrainState train(const Dataset& data, const PerturbationSpec& spec, const Architecture& arch,
                 const TrainConfig& config, uint64_t seed);

inline double cosine_lr(double lr0, int64_t step, int64_t total_steps) {
    if (total_steps <= 0) return lr0;
    const double t = double(step) / double(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace patchlab
