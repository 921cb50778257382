#pragma once

#include <string>
#include <vector>

#include "patchlab/classifier.hpp"
#include "patchlab/data.hpp"
#include "patchlab/perturbation.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

// One meta-patch with its fixed target class and I-FGSM step size. The
// target and step size never change after initialization; only the patch
// values are updated (and re-projected) during training.
struct MetaEntry {
    Patch xi;
    int y_target = 0;
    double alpha = 0.0;
};

struct MetaSet {
    PerturbationSpec spec;
    std::vector<MetaEntry> entries;

    size_t size() const { return entries.size(); }
};

enum class InitMode { Random, Data };

constexpr double kAlphaMinDefault = 1e-4;
constexpr double kAlphaMaxDefault = 0.1;

// Round-robin targets (entry i, 1-based, gets target i mod C), log-uniform
// step sizes, and either uniform-random patches or resized datapoints of the
// target class (train split).
MetaSet init_meta_set(int P, const Dataset& data, InitMode mode, const PerturbationSpec& spec, Rng& rng,
                      double alpha_min = kAlphaMinDefault, double alpha_max = kAlphaMaxDefault);

struct Selection {
    size_t entry_index = 0;
    Offset r;
};

// Worst-of-F selection: draws F (entry, randomness) trials and returns the
// one with maximal untargeted loss on (x, y). F == 1 draws a single trial
// and evaluates no losses (zero forward passes). Each trial with F > 1
// costs one forward pass.
Selection select(const MetaSet& ms, const Tensor& x_single, int y, LossModel& model, int F, Rng& rng);

// Xi' = project((1 - sigma) * Xi + sigma * mean(finals))
Patch reptile_update(const Patch& xi, const std::vector<Patch>& finals, double sigma, const PerturbationSpec& spec);

// ---- meta-set file: manifest (P, targets, alphas) + concatenated payloads ----

void save_meta_set(const MetaSet& ms, const std::string& path);
MetaSet load_meta_set(const std::string& path);

}  // namespace patchlab
