#pragma once

#include <string>
#include <vector>

#include "patchlab/rng.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

enum class Split { Train, Eval };

// Immutable after load; images are [C,H,W] in [0,1].
struct Dataset {
    int num_classes = 0;
    int channels = 0, height = 0, width = 0;
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<Split> split_tags;

    size_t size() const { return images.size(); }

    std::vector<size_t> indices(Split s) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < split_tags.size(); ++i)
            if (split_tags[i] == s) out.push_back(i);
        return out;
    }

    // gather samples into a [N,C,H,W] batch
    Tensor gather(const std::vector<size_t>& idx) const;
    std::vector<int> gather_labels(const std::vector<size_t>& idx) const;

    void validate() const;
};

// every 5th sample goes to the eval split (80/20, pure function of index)
inline Split split_of(size_t index) { return index % 5 == 4 ? Split::Eval : Split::Train; }

// Loads a directory with one subdirectory per class containing binary PPM
// (P6) images. Class index follows sorted subdirectory order. Images are
// nearest-neighbor resized to resolution x resolution.
Dataset load_folder(const std::string& path, int resolution);

// Procedural shape dataset: class 0 disk, 1 square, 2 cross, 3 stripes
// (then 4 ring, 5 triangle, 6 checker, 7 diagonal for larger C). Shapes are
// large (span more than half the image) so a small patch cannot occlude the
// class evidence; backgrounds are dark noisy color fields, shapes bright.
Dataset synth_dataset(int n_per_class, int num_classes, int resolution, uint64_t seed);

// writes the dataset as class_<k>/ subdirectories of PPM files + manifest
void write_dataset_folder(const Dataset& d, const std::string& path, uint64_t seed);

// ---- binary PPM (P6) helpers ----

struct PpmImage {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // interleaved, 3 bytes per pixel
};

PpmImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const PpmImage& img);

// [3,H,W] float in [0,1] -> interleaved bytes (round-to-nearest)
PpmImage tensor_to_ppm(const Tensor& chw);
Tensor ppm_to_tensor(const PpmImage& img);

// nearest-neighbor resample of a [C,H,W] tensor
Tensor resize_nearest(const Tensor& chw, int out_h, int out_w);

}  // namespace patchlab
