#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchlab/graph.hpp"
#include "patchlab/rng.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

// Plain convolutional classifier: per stage conv3x3 (weight-standardized,
// SAME, stride 1) -> group norm -> relu -> 2x2 average pool, then global
// average pool and a dense head. No conv biases (group norm follows).
struct Architecture {
    int input_hw = 32;
    int in_channels = 3;
    std::vector<int> stage_channels{16, 32, 64};
    int num_classes = 4;
    int gn_groups = 8;  // per stage: min(gn_groups, stage channels)

    void validate() const {
        if (input_hw < 4) throw std::runtime_error("arch: input resolution too small");
        if (in_channels < 1) throw std::runtime_error("arch: need at least one input channel");
        if (stage_channels.size() < 2) throw std::runtime_error("arch: need at least 2 conv stages");
        if (num_classes < 2) throw std::runtime_error("arch: need at least 2 classes");
        if (gn_groups < 1) throw std::runtime_error("arch: group count must be positive");
        int hw = input_hw;
        for (int c : stage_channels) {
            if (c < 1) throw std::runtime_error("arch: stage channel count must be positive");
            if (hw % 2 != 0) throw std::runtime_error("arch: resolution not divisible by pooling");
            hw /= 2;
        }
        if (hw < 1) throw std::runtime_error("arch: too many stages for resolution");
    }

    int groups_for(int channels) const { return channels < gn_groups ? channels : gn_groups; }
};

enum class LossMode { Untargeted, Targeted };

template <typename S>
struct ModelT {
    Architecture arch;
    std::vector<std::string> param_order;
    std::unordered_map<std::string, TensorT<S>> params;

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& name : param_order) n += params.at(name).numel();
        return n;
    }

    template <typename T>
    ModelT<T> cast() const {
        ModelT<T> out;
        out.arch = arch;
        out.param_order = param_order;
        for (const auto& name : param_order) out.params[name] = params.at(name).template cast<T>();
        return out;
    }
};

using Model = ModelT<float>;

// Wires the classifier graph for an architecture. The same builder serves the
// float training path and the double gradient-check path.
template <typename S>
GraphT<S> build_graph(const Architecture& arch) {
    GraphT<S> g;
    int x = g.input("x");
    int cur = x;
    for (size_t s = 0; s < arch.stage_channels.size(); ++s) {
        const std::string p = "stage" + std::to_string(s);
        int w = g.param(p + ".conv.w");
        int ws = g.weight_standardize(w);
        int conv = g.conv2d(cur, ws);
        int gamma = g.param(p + ".gn.gamma");
        int beta = g.param(p + ".gn.beta");
        int gn = g.group_norm(conv, gamma, beta, arch.groups_for(arch.stage_channels[s]));
        int act = g.relu(gn);
        cur = g.avg_pool(act, 2, 2);
    }
    cur = g.avg_pool(cur, 0, 0);  // global
    int wh = g.param("head.w");
    int head = g.dense(cur, wh);
    int bh = g.param("head.b");
    int logits = g.add(head, bh);
    int loss = g.softmax_cross_entropy(logits);
    g.set_output(loss);
    return g;
}

template <typename S>
ModelT<S> build_model(const Architecture& arch, uint64_t seed) {
    arch.validate();
    ModelT<S> m;
    m.arch = arch;
    Rng rng(mix64(seed, 0x6d6f64656cull));  // "model"
    auto he_normal = [&](std::vector<int64_t> shape, int64_t fan_in) {
        TensorT<S> t(std::move(shape));
        const double std_dev = std::sqrt(2.0 / double(fan_in));
        for (auto& v : t.v) v = S(rng.normal() * std_dev);
        return t;
    };
    int cin = arch.in_channels;
    for (size_t s = 0; s < arch.stage_channels.size(); ++s) {
        const int cout = arch.stage_channels[s];
        const std::string p = "stage" + std::to_string(s);
        m.param_order.push_back(p + ".conv.w");
        m.params[p + ".conv.w"] = he_normal({cout, cin, 3, 3}, int64_t(cin) * 9);
        m.param_order.push_back(p + ".gn.gamma");
        m.params[p + ".gn.gamma"] = TensorT<S>::full({cout}, S(1));
        m.param_order.push_back(p + ".gn.beta");
        m.params[p + ".gn.beta"] = TensorT<S>::zeros({cout});
        cin = cout;
    }
    m.param_order.push_back("head.w");
    m.params["head.w"] = he_normal({arch.num_classes, cin}, cin);
    m.param_order.push_back("head.b");
    m.params["head.b"] = TensorT<S>::zeros({int64_t(arch.num_classes)});
    return m;
}

// names of parameters that receive weight decay (conv + dense kernels)
inline bool is_kernel_param(const std::string& name) {
    return name.size() >= 2 && (name.find(".conv.w") != std::string::npos || name == "head.w");
}

template <typename S>
std::unordered_map<std::string, const TensorT<S>*> bind_params(const ModelT<S>& m) {
    std::unordered_map<std::string, const TensorT<S>*> b;
    for (const auto& name : m.param_order) b[name] = &m.params.at(name);
    return b;
}

// Runs the model forward on a batch and returns per-sample cross-entropy
// losses. For Untargeted the labels are the true labels; for Targeted they
// are the attack targets, and callers that maximize the attack objective
// descend this loss (the maximization direction toward the target is the
// negated gradient).
template <typename S>
struct LossOut {
    std::vector<double> per_sample;
    double mean = 0.0;
};

template <typename S>
LossOut<S> graph_loss(GraphT<S>& g, const ModelT<S>& m, const TensorT<S>& x, const std::vector<int>& labels) {
    if (x.shape.size() != 4) throw std::runtime_error("loss: input must be [N,C,H,W]");
    for (S v : x.v)
        if (v < S(0) || v > S(1)) throw std::runtime_error("loss: input values must lie in [0,1]");
    auto bound = bind_params(m);
    bound["x"] = &x;
    const TensorT<S>& per = g.forward(bound, &labels);
    LossOut<S> out;
    out.per_sample.resize(size_t(per.numel()));
    double sum = 0.0;
    for (int64_t i = 0; i < per.numel(); ++i) {
        out.per_sample[size_t(i)] = double(per.v[size_t(i)]);
        sum += out.per_sample[size_t(i)];
    }
    out.mean = sum / double(per.numel());
    return out;
}

// logits for a batch; used by predict
template <typename S>
TensorT<S> graph_logits(GraphT<S>& g, const ModelT<S>& m, const TensorT<S>& x) {
    // run forward with dummy labels; logits node is the add feeding the loss
    std::vector<int> dummy(size_t(x.dim(0)), 0);
    auto bound = bind_params(m);
    bound["x"] = &x;
    g.forward(bound, &dummy);
    // the logits node is the input of the output (softmax_cross_entropy) node
    const auto& loss_node = g.node(g.output());
    return g.value_of(loss_node.in[0]);
}

// argmax with ties broken toward the lower class index
template <typename S>
std::vector<int> logits_argmax(const TensorT<S>& logits) {
    const int64_t N = logits.dim(0);
    const int64_t C = logits.numel() / N;
    std::vector<int> out(size_t(N));
    for (int64_t i = 0; i < N; ++i) {
        const S* z = logits.data() + i * C;
        int best = 0;
        for (int64_t c = 1; c < C; ++c)
            if (z[c] > z[best]) best = int(c);
        out[size_t(i)] = best;
    }
    return out;
}

// ---- checkpoint file (versioned header + little-endian float payload) ----

void save_checkpoint(const Model& m, const std::string& path, const std::string& config_hash = "");
Model load_checkpoint(const std::string& path, std::string* config_hash = nullptr);

}  // namespace patchlab
