#pragma once

#include <memory>
#include <vector>

#include "patchlab/model.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

// Forward/backward pass counters in single-sample units: a batched pass over
// N samples adds N. One I-FGSM step on a batch therefore costs N to n_fp and
// N to n_bp, matching per-sample cost accounting.
struct PassCounters {
    int64_t n_fp = 0;
    int64_t n_bp = 0;
    void reset() { n_fp = n_bp = 0; }
};

struct InputGradOut {
    std::vector<double> per_sample;  // cross-entropy per sample (>= 0)
    double mean = 0.0;
    Tensor grad_x;  // gradient of sum(per-sample CE) w.r.t. the input batch
};

// Minimal classifier surface used by attacks, selection, and evaluation.
// Test stubs implement closed-form losses; the production implementation
// wraps a Model and its graph.
class LossModel {
public:
    virtual ~LossModel() = default;
    virtual int num_classes() const = 0;

    // per-sample cross-entropy to `labels`; one forward per sample
    virtual std::vector<double> loss_batch(const Tensor& x, const std::vector<int>& labels) = 0;

    // losses plus input gradient; one forward + one backward per sample.
    // grad_x is d(sum_i CE_i)/dx, so slice i is sample i's own gradient.
    virtual InputGradOut loss_with_input_grad(const Tensor& x, const std::vector<int>& labels) = 0;

    virtual std::vector<int> predict_batch(const Tensor& x) = 0;

    PassCounters counters;
};

// Production adapter. Holds its own graph (cached activations are mutable),
// so create one instance per thread; the Model itself is shared read-only.
class ModelLossAdapter final : public LossModel {
public:
    explicit ModelLossAdapter(const Model& m) : model_(m), graph_(build_graph<float>(m.arch)) {}

    int num_classes() const override { return model_.arch.num_classes; }

    std::vector<double> loss_batch(const Tensor& x, const std::vector<int>& labels) override {
        counters.n_fp += x.dim(0);
        return graph_loss(graph_, model_, x, labels).per_sample;
    }

    InputGradOut loss_with_input_grad(const Tensor& x, const std::vector<int>& labels) override {
        const int64_t n = x.dim(0);
        counters.n_fp += n;
        counters.n_bp += n;
        auto lo = graph_loss(graph_, model_, x, labels);
        Tensor seed = Tensor::full({n}, 1.0f);  // per-sample unit seeds
        graph_.backward(seed, GradMode::InputsOnly);
        InputGradOut out;
        out.per_sample = std::move(lo.per_sample);
        out.mean = lo.mean;
        out.grad_x = graph_.grad("x");
        return out;
    }

    std::vector<int> predict_batch(const Tensor& x) override {
        counters.n_fp += x.dim(0);
        return logits_argmax(graph_logits(graph_, model_, x));
    }

    const Model& model() const { return model_; }
    Graph& graph() { return graph_; }

private:
    const Model& model_;
    Graph graph_;
};

}  // namespace patchlab
