#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patchlab/classifier.hpp"
#include "patchlab/data.hpp"
#include "patchlab/perturbation.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

enum class AttackInit { Random, Data };

struct AttackConfig {
    std::string id;
    std::string family;  // "RI", "DI", "LF", "TR"
    AttackInit init = AttackInit::Random;
    int steps = 500;
    double step_size = 0.01;
    double momentum = 0.0;       // applied to the sign of the gradient
    double total_decay = 0.01;   // final step size = step_size * total_decay
    std::optional<int> cutoff;   // radial low-pass cutoff in DFT bins
    int batch_size = 32;
    int data_candidates = 16;    // data initialization pool size
    std::optional<int> target;   // targeted attack; untargeted if absent

    void validate() const {
        if (steps < 0) throw std::runtime_error("attack: steps must be >= 0");
        if (!(step_size > 0)) throw std::runtime_error("attack: step size must be positive");
        if (!(momentum >= 0 && momentum < 1)) throw std::runtime_error("attack: momentum must be in [0,1)");
        if (!(total_decay > 0 && total_decay <= 1)) throw std::runtime_error("attack: total decay must be in (0,1]");
        if (batch_size < 1) throw std::runtime_error("attack: batch size must be positive");
        if (data_candidates < 1) throw std::runtime_error("attack: need at least one data candidate");
        if (cutoff && *cutoff < 0) throw std::runtime_error("attack: cutoff must be >= 0");
    }
};

struct AttackResult {
    AttackConfig config;
    Patch patch;                     // final effective (feasible) patch
    std::vector<double> trajectory;  // rho-hat estimates, length steps + 1
    bool random_fallback = false;    // transfer attack started from random init
};

struct Sample {
    Tensor x;  // [C,H,W]
    int y = 0;
    Offset r;
};

// K targeted/untargeted sign-gradient steps from Xi, each followed by
// projection; the same (x, y, r) is used in every step. Targeted mode
// descends the cross-entropy toward the target class.
Patch ifgsm(const Patch& xi0, const Tensor& x_single, int y_or_target, LossMode mode, LossModel& model, double alpha,
            const Offset& r, int K, const PerturbationSpec& spec);

// Vectorized I-FGSM: per-sample start patches, targets, step sizes and
// offsets; produces bitwise the same per-sample results as the single-sample
// routine.
std::vector<Patch> ifgsm_batch(const std::vector<Patch>& xi0, const Tensor& x, const std::vector<int>& y_or_target,
                               LossMode mode, LossModel& model, const std::vector<double>& alpha,
                               const std::vector<Offset>& rs, int K, const PerturbationSpec& spec);

// mean loss of the patched samples: (1/N) sum_i L(theta, F(x_i, xi, r_i), y_i)
double estimate_rho(LossModel& model, const Patch& xi, const std::vector<Sample>& samples,
                    const PerturbationSpec& spec);

// Radial low-pass: per-channel 2D DFT, binary mask keeping bins with
// frequency radius <= u, inverse DFT, real part. Linear and idempotent;
// callers project before applying the result to images.
Patch low_pass(const Patch& xi, double u);

// cutoff that keeps every bin of an hp x wp patch
inline int all_pass_cutoff(int hp, int wp) {
    const int m = hp > wp ? hp : wp;
    return int(std::ceil(std::sqrt(2.0) * double(m) / 2.0));
}

// best-of-n data initialization: resized datapoints (patch mode) or
// intensity-rescaled datapoints (additive mode), scored by rho-hat on the
// probe samples
Patch data_init(const Dataset& data, Split split, const PerturbationSpec& spec, int n_candidates, LossModel& model,
                const std::vector<Sample>& probe, Rng& rng);

// Stochastic PGD with fresh batches, sign momentum and exponential step
// decay. Batches are drawn with replacement from the given split.
AttackResult spgd(LossModel& model, const Dataset& data, Split split, const PerturbationSpec& spec,
                  const AttackConfig& config, Rng& rng);

// step size at step k (0-based) of `steps`
inline double decayed_step(double alpha0, double total_decay, int k, int steps) {
    if (steps <= 1) return alpha0;
    return alpha0 * std::pow(total_decay, double(k) / double(steps - 1));
}

// Per-epoch transfer attack: seed from the pool member with maximal rho-hat
// against the current model (random init if the pool is empty), then S-PGD;
// the final patch joins the pool. Every 5th epoch an extra attack from
// random init is run and appended as well. `epoch` is 1-based.
std::vector<AttackResult> transfer_attack(std::vector<Patch>& pool, LossModel& model, const Dataset& data, Split split,
                                          const PerturbationSpec& spec, const AttackConfig& config, int epoch,
                                          Rng& rng);

}  // namespace patchlab
