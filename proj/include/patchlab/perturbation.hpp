#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "patchlab/rng.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

enum class PerturbMode { Patch, Additive };

// Threat model: either a rectangular patch pasted at a randomly translated
// window, or an additive perturbation bounded in L-infinity norm.
struct PerturbationSpec {
    PerturbMode mode = PerturbMode::Patch;
    int image_c = 3, image_h = 0, image_w = 0;
    int patch_h = 0, patch_w = 0;    // patch mode
    int max_dy = 0, max_dx = 0;      // patch mode, pixels from centered placement
    double epsilon = 0.0;            // additive mode

    static PerturbationSpec patch(int image_c, int image_h, int image_w, int patch_h, int patch_w, int max_dy,
                                  int max_dx) {
        PerturbationSpec s;
        s.mode = PerturbMode::Patch;
        s.image_c = image_c;
        s.image_h = image_h;
        s.image_w = image_w;
        s.patch_h = patch_h;
        s.patch_w = patch_w;
        s.max_dy = max_dy;
        s.max_dx = max_dx;
        s.validate();
        return s;
    }

    static PerturbationSpec additive(int image_c, int image_h, int image_w, double epsilon) {
        PerturbationSpec s;
        s.mode = PerturbMode::Additive;
        s.image_c = image_c;
        s.image_h = image_h;
        s.image_w = image_w;
        s.epsilon = epsilon;
        s.validate();
        return s;
    }

    void validate() const {
        if (image_c < 1 || image_h < 1 || image_w < 1) throw std::runtime_error("perturbation: invalid image shape");
        if (mode == PerturbMode::Patch) {
            if (patch_h < 1 || patch_w < 1 || patch_h > image_h || patch_w > image_w)
                throw std::runtime_error("perturbation: patch size must fit inside the image");
            if (max_dy < 0 || max_dx < 0) throw std::runtime_error("perturbation: negative translation bound");
            // translated window must stay fully inside the image
            if ((image_h - patch_h) / 2 < max_dy || (image_w - patch_w) / 2 < max_dx)
                throw std::runtime_error("perturbation: translation bound moves the patch outside the image");
        } else {
            if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::runtime_error("perturbation: epsilon must be in (0,1]");
        }
    }

    std::vector<int64_t> patch_shape() const {
        if (mode == PerturbMode::Patch) return {image_c, patch_h, patch_w};
        return {image_c, image_h, image_w};
    }
};

struct Offset {
    int dy = 0;
    int dx = 0;
    bool operator==(const Offset&) const = default;
};

struct Patch {
    Tensor values;  // [C,hp,wp] in patch mode, full image shape in additive mode
};

// offsets uniform over the integer box; additive mode has no placement
Offset sample_randomness(const PerturbationSpec& spec, Rng& rng);

// top-left corner of the patch window for a given offset
inline std::pair<int, int> window_origin(const PerturbationSpec& spec, const Offset& r) {
    return {(spec.image_h - spec.patch_h) / 2 + r.dy, (spec.image_w - spec.patch_w) / 2 + r.dx};
}

// F(x, xi, r): paste (patch mode) or clamp(x + xi, 0, 1) (additive mode).
// x is never mutated.
Tensor apply(const Tensor& x, const Patch& xi, const Offset& r, const PerturbationSpec& spec);

// batched variant: x [N,C,H,W], one offset per sample, same patch
Tensor apply_batch(const Tensor& x, const Patch& xi, const std::vector<Offset>& rs, const PerturbationSpec& spec);

// element-wise clamp to the feasible set; idempotent
Patch project(const Tensor& raw, const PerturbationSpec& spec);
void project_in_place(Patch& p, const PerturbationSpec& spec);

// Pulls an input-space gradient back to patch coordinates for one sample:
// patch mode slices the window; additive mode masks out clipped pixels
// (pass where x + xi lies inside [0,1]).
Tensor pull_back_patch_grad(const Tensor& grad_x, const Tensor& x, const Patch& xi, const Offset& r,
                            const PerturbationSpec& spec);

// uniform-random feasible patch
Patch random_patch(const PerturbationSpec& spec, Rng& rng);

// ---- patch file format: 8-byte magic, mode byte, shape header, LE float payload ----

void save_patch(const Patch& p, const PerturbationSpec& spec, const std::string& path);
Patch load_patch(const std::string& path, PerturbMode* mode = nullptr, double* epsilon = nullptr);

// PPM (binary P6) export for visual inspection; patch mode expects 3 channels
void export_patch_ppm(const Patch& p, const std::string& path);

}  // namespace patchlab
