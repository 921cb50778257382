#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchlab/gemm.hpp"
#include "patchlab/tensor.hpp"

namespace patchlab {

// Fixed static graph with reverse-mode differentiation w.r.t. parameters and
// designated inputs. Single-threaded per instance; independent instances may
// run on separate threads.

enum class OpKind {
    Input,
    Param,
    Conv2d,
    Dense,
    GroupNorm,
    WeightStd,
    Relu,
    AvgPool,
    SoftmaxCE,
    Add,
    Scale,
};

enum class GradMode { All, InputsOnly, ParamsOnly };

template <typename S>
struct NodeT {
    OpKind kind{};
    std::string name;      // inputs/params and error messages
    std::vector<int> in;

    int groups = 0;        // group_norm
    double eps = 0.0;      // group_norm / weight_standardize
    int pool_h = 0;        // avg_pool window (0 = global)
    int pool_w = 0;
    double scale_c = 1.0;  // scale

    TensorT<S> out;
    TensorT<S> grad;
    std::vector<S> col;        // conv2d: cached im2col buffer
    std::vector<double> aux;   // cached statistics / softmax probabilities
    bool needs_grad = false;
};

template <typename S>
class GraphT {
public:
    using Node = NodeT<S>;

    int input(const std::string& name) { return push(OpKind::Input, {}, name); }
    int param(const std::string& name) { return push(OpKind::Param, {}, name); }

    // x [N,Cin,H,W], w [Cout,Cin,kh,kw]; SAME padding, stride 1, odd kernel
    int conv2d(int x, int w) { return push(OpKind::Conv2d, {x, w}, "conv2d"); }

    // x [N,...] flattened to [N,D], w [C,D] -> [N,C]
    int dense(int x, int w) { return push(OpKind::Dense, {x, w}, "dense"); }

    int add(int a, int b) { return push(OpKind::Add, {a, b}, "add"); }
    int relu(int x) { return push(OpKind::Relu, {x}, "relu"); }

    int scale(int x, double c) {
        int id = push(OpKind::Scale, {x}, "scale");
        nodes_[size_t(id)].scale_c = c;
        return id;
    }

    int group_norm(int x, int gamma, int beta, int groups, double eps = 1e-5) {
        int id = push(OpKind::GroupNorm, {x, gamma, beta}, "group_norm");
        nodes_[size_t(id)].groups = groups;
        nodes_[size_t(id)].eps = eps;
        return id;
    }

    int weight_standardize(int w, double eps = 1e-10) {
        int id = push(OpKind::WeightStd, {w}, "weight_standardize");
        nodes_[size_t(id)].eps = eps;
        return id;
    }

    // non-overlapping window average; kh==0 means global (full spatial extent)
    int avg_pool(int x, int kh, int kw) {
        int id = push(OpKind::AvgPool, {x}, "avg_pool");
        nodes_[size_t(id)].pool_h = kh;
        nodes_[size_t(id)].pool_w = kw;
        return id;
    }

    // logits [N,C] (trailing dims flattened); per-sample losses [N].
    // Labels are bound at forward time.
    int softmax_cross_entropy(int logits) { return push(OpKind::SoftmaxCE, {logits}, "softmax_cross_entropy"); }

    void set_output(int node) { output_ = node; }
    int output() const { return output_; }

    const Node& node(int id) const { return nodes_.at(size_t(id)); }
    int num_nodes() const { return int(nodes_.size()); }

    // Executes nodes in construction (topological) order. All named inputs and
    // params must be bound; shapes are re-inferred each call so the batch
    // dimension may vary between forwards.
    const TensorT<S>& forward(const std::unordered_map<std::string, const TensorT<S>*>& bound,
                              const std::vector<int>* labels = nullptr) {
        if (output_ < 0) throw std::runtime_error("graph: no output node set");
        labels_ = labels;
        for (auto& n : nodes_) {
            switch (n.kind) {
                case OpKind::Input:
                case OpKind::Param: {
                    auto it = bound.find(n.name);
                    if (it == bound.end() || it->second == nullptr)
                        throw std::runtime_error("graph: unbound tensor '" + n.name + "'");
                    n.out = *it->second;
                    break;
                }
                case OpKind::Conv2d: fwd_conv2d(n); break;
                case OpKind::Dense: fwd_dense(n); break;
                case OpKind::GroupNorm: fwd_group_norm(n); break;
                case OpKind::WeightStd: fwd_weight_std(n); break;
                case OpKind::Relu: fwd_relu(n); break;
                case OpKind::AvgPool: fwd_avg_pool(n); break;
                case OpKind::SoftmaxCE: fwd_softmax_ce(n); break;
                case OpKind::Add: fwd_add(n); break;
                case OpKind::Scale: fwd_scale(n); break;
            }
        }
        forward_done_ = true;
        const TensorT<S>& out = nodes_[size_t(output_)].out;
        if (!all_finite(out)) throw std::runtime_error("graph: non-finite output at node '" + nodes_[size_t(output_)].name + "'");
        return out;
    }

    // Reverse sweep from the output node. Seed must match the output shape.
    // Gradients are written into every watched parameter node and every
    // watched input node; each node is visited exactly once.
    void backward(const TensorT<S>& seed, GradMode mode = GradMode::All,
                  const std::vector<std::string>& watched_inputs = {}) {
        if (!forward_done_) throw std::runtime_error("graph: backward before forward");
        const Node& on = nodes_[size_t(output_)];
        if (seed.shape != on.out.shape)
            throw std::runtime_error("graph: seed shape " + shape_str(seed.shape) + " does not match output " +
                                     shape_str(on.out.shape));
        mark_needs_grad(mode, watched_inputs);
        for (auto& n : nodes_) {
            if (n.needs_grad) {
                n.grad.resize_to(n.out.shape);
            } else {
                n.grad.shape.clear();
                n.grad.v.clear();
            }
        }
        nodes_[size_t(output_)].grad = seed;
        for (int id = int(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (!n.needs_grad) continue;
            switch (n.kind) {
                case OpKind::Input:
                case OpKind::Param: break;
                case OpKind::Conv2d: bwd_conv2d(n); break;
                case OpKind::Dense: bwd_dense(n); break;
                case OpKind::GroupNorm: bwd_group_norm(n); break;
                case OpKind::WeightStd: bwd_weight_std(n); break;
                case OpKind::Relu: bwd_relu(n); break;
                case OpKind::AvgPool: bwd_avg_pool(n); break;
                case OpKind::SoftmaxCE: bwd_softmax_ce(n); break;
                case OpKind::Add: bwd_add(n); break;
                case OpKind::Scale: bwd_scale(n); break;
            }
        }
        for (const auto& n : nodes_) {
            if ((n.kind == OpKind::Param || n.kind == OpKind::Input) && n.needs_grad && !all_finite(n.grad))
                throw std::runtime_error("graph: non-finite gradient at '" + n.name + "'");
        }
    }

    const TensorT<S>& value(const std::string& name) const { return nodes_[size_t(find(name))].out; }
    const TensorT<S>& value_of(int id) const { return nodes_.at(size_t(id)).out; }

    const TensorT<S>& grad(const std::string& name) const {
        const Node& n = nodes_[size_t(find(name))];
        if (n.grad.v.empty()) throw std::runtime_error("graph: no gradient stored for '" + name + "'");
        return n.grad;
    }

    // gradients of every watched param/input, keyed by name
    std::unordered_map<std::string, const TensorT<S>*> gradient_map() const {
        std::unordered_map<std::string, const TensorT<S>*> m;
        for (const auto& n : nodes_)
            if ((n.kind == OpKind::Param || n.kind == OpKind::Input) && !n.grad.v.empty()) m[n.name] = &n.grad;
        return m;
    }

private:
    std::vector<Node> nodes_;
    int output_ = -1;
    bool forward_done_ = false;
    const std::vector<int>* labels_ = nullptr;

    int push(OpKind k, std::vector<int> in, const std::string& name) {
        for (int i : in)
            if (i < 0 || i >= int(nodes_.size()))
                throw std::runtime_error("graph: node '" + name + "' references unknown input");
        Node n;
        n.kind = k;
        n.name = name;
        n.in = std::move(in);
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    int find(const std::string& name) const {
        for (size_t i = 0; i < nodes_.size(); ++i)
            if ((nodes_[i].kind == OpKind::Input || nodes_[i].kind == OpKind::Param) && nodes_[i].name == name)
                return int(i);
        throw std::runtime_error("graph: no input/param named '" + name + "'");
    }

    void mark_needs_grad(GradMode mode, const std::vector<std::string>& watched_inputs) {
        auto watched = [&](const Node& n) {
            if (n.kind == OpKind::Param) return mode != GradMode::InputsOnly;
            if (n.kind == OpKind::Input) {
                if (mode == GradMode::ParamsOnly) return false;
                if (watched_inputs.empty()) return true;
                for (const auto& w : watched_inputs)
                    if (w == n.name) return true;
                return false;
            }
            return false;
        };
        for (auto& n : nodes_) {
            bool need = watched(n);
            for (int i : n.in) need = need || nodes_[size_t(i)].needs_grad;
            n.needs_grad = need;
        }
        nodes_[size_t(output_)].needs_grad = true;
    }

    Node& in0(Node& n) { return nodes_[size_t(n.in[0])]; }
    Node& in1(Node& n) { return nodes_[size_t(n.in[1])]; }
    Node& in2(Node& n) { return nodes_[size_t(n.in[2])]; }

    static void require(bool ok, const std::string& msg) {
        if (!ok) throw std::runtime_error("graph: " + msg);
    }

    // ---- conv2d ----

    void fwd_conv2d(Node& n) {
        const TensorT<S>& x = in0(n).out;
        const TensorT<S>& w = in1(n).out;
        require(x.shape.size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape));
        require(w.shape.size() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw], got " + shape_str(w.shape));
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        require(w.dim(1) == Cin, "conv2d: kernel Cin " + std::to_string(w.dim(1)) + " != input C " + std::to_string(Cin));
        require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel size must be odd for SAME padding");

        const int64_t K = Cin * kh * kw;
        const int64_t NHW = N * H * W;
        n.col.assign(size_t(K * NHW), S(0));
        im2col(x, kh, kw, n.col.data());
        n.out.resize_to({N, Cout, H, W});
        // output laid out [Cout, N*H*W] then scattered to [N,Cout,H,W]
        std::vector<S> y(size_t(Cout * NHW));
        gemm_nn(Cout, NHW, K, w.data(), n.col.data(), y.data());
        scatter_out(y.data(), n.out, N, Cout, H * W);
    }

    void bwd_conv2d(Node& n) {
        Node& xn = in0(n);
        Node& wn = in1(n);
        const TensorT<S>& x = xn.out;
        const TensorT<S>& w = wn.out;
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int64_t K = Cin * kh * kw;
        const int64_t NHW = N * H * W;

        std::vector<S> dy(size_t(Cout * NHW));
        gather_grad(n.grad, dy.data(), N, Cout, H * W);

        if (wn.needs_grad) {
            std::vector<S> dw(size_t(Cout * K));
            gemm_nt(Cout, K, NHW, dy.data(), n.col.data(), dw.data());
            axpy(wn.grad, dw.data());
        }
        if (xn.needs_grad) {
            std::vector<S> dcol(size_t(K * NHW));
            gemm_tn(K, NHW, Cout, w.data(), dy.data(), dcol.data());
            col2im_add(dcol.data(), xn.grad, Cin, kh, kw);
        }
    }

    // col[(ci*kh*kw + dy*kw + dx), n*HW + y*W + x]
    void im2col(const TensorT<S>& x, int64_t kh, int64_t kw, S* col) const {
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t HW = H * W, NHW = N * HW;
        const int64_t ph = kh / 2, pw = kw / 2;
        for (int64_t ci = 0; ci < Cin; ++ci) {
            for (int64_t dy = 0; dy < kh; ++dy) {
                for (int64_t dx = 0; dx < kw; ++dx) {
                    S* dst = col + ((ci * kh + dy) * kw + dx) * NHW;
                    for (int64_t nn = 0; nn < N; ++nn) {
                        const S* src = x.data() + (nn * Cin + ci) * HW;
                        S* drow = dst + nn * HW;
                        for (int64_t y = 0; y < H; ++y) {
                            const int64_t sy = y + dy - ph;
                            if (sy < 0 || sy >= H) {
                                std::fill(drow + y * W, drow + (y + 1) * W, S(0));
                                continue;
                            }
                            const S* srow = src + sy * W;
                            for (int64_t xx = 0; xx < W; ++xx) {
                                const int64_t sx = xx + dx - pw;
                                drow[y * W + xx] = (sx < 0 || sx >= W) ? S(0) : srow[sx];
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im_add(const S* dcol, TensorT<S>& dx, int64_t Cin, int64_t kh, int64_t kw) const {
        const int64_t N = dx.dim(0), H = dx.dim(2), W = dx.dim(3);
        const int64_t HW = H * W, NHW = N * HW;
        const int64_t ph = kh / 2, pw = kw / 2;
        for (int64_t ci = 0; ci < Cin; ++ci) {
            for (int64_t dy = 0; dy < kh; ++dy) {
                for (int64_t dx_ = 0; dx_ < kw; ++dx_) {
                    const S* src = dcol + ((ci * kh + dy) * kw + dx_) * NHW;
                    for (int64_t nn = 0; nn < N; ++nn) {
                        S* dst = dx.data() + (nn * Cin + ci) * HW;
                        const S* srow = src + nn * HW;
                        for (int64_t y = 0; y < H; ++y) {
                            const int64_t sy = y + dy - ph;
                            if (sy < 0 || sy >= H) continue;
                            for (int64_t xx = 0; xx < W; ++xx) {
                                const int64_t sx = xx + dx_ - pw;
                                if (sx < 0 || sx >= W) continue;
                                dst[sy * W + sx] = S(double(dst[sy * W + sx]) + double(srow[y * W + xx]));
                            }
                        }
                    }
                }
            }
        }
    }

    // [Cout, N*HW] -> [N, Cout, HW]
    static void scatter_out(const S* y, TensorT<S>& out, int64_t N, int64_t Cout, int64_t HW) {
        for (int64_t c = 0; c < Cout; ++c)
            for (int64_t nn = 0; nn < N; ++nn) {
                const S* src = y + (c * N + nn) * HW;
                S* dst = out.data() + (nn * Cout + c) * HW;
                std::copy(src, src + HW, dst);
            }
    }

    // [N, Cout, HW] -> [Cout, N*HW]
    static void gather_grad(const TensorT<S>& g, S* dy, int64_t N, int64_t Cout, int64_t HW) {
        for (int64_t c = 0; c < Cout; ++c)
            for (int64_t nn = 0; nn < N; ++nn) {
                const S* src = g.data() + (nn * Cout + c) * HW;
                std::copy(src, src + HW, dy + (c * N + nn) * HW);
            }
    }

    static void axpy(TensorT<S>& dst, const S* src) {
        for (int64_t i = 0; i < dst.numel(); ++i) dst.v[size_t(i)] = S(double(dst.v[size_t(i)]) + double(src[i]));
    }

    // ---- dense ----

    void fwd_dense(Node& n) {
        const TensorT<S>& x = in0(n).out;
        const TensorT<S>& w = in1(n).out;
        require(x.shape.size() >= 2, "dense: input must have a batch dimension");
        require(w.shape.size() == 2, "dense: weight must be [C,D], got " + shape_str(w.shape));
        const int64_t N = x.dim(0);
        const int64_t D = x.numel() / N;
        const int64_t C = w.dim(0);
        require(w.dim(1) == D, "dense: weight D " + std::to_string(w.dim(1)) + " != input D " + std::to_string(D));
        n.out.resize_to({N, C});
        gemm_nt(N, C, D, x.data(), w.data(), n.out.data());
    }

    void bwd_dense(Node& n) {
        Node& xn = in0(n);
        Node& wn = in1(n);
        const TensorT<S>& x = xn.out;
        const TensorT<S>& w = wn.out;
        const int64_t N = x.dim(0);
        const int64_t D = x.numel() / N;
        const int64_t C = w.dim(0);
        if (wn.needs_grad) {
            // dW[c,d] += sum_n dy[n,c] * x[n,d]
            std::vector<S> dw(size_t(C * D));
            gemm_tn(C, D, N, n.grad.data(), x.data(), dw.data());
            axpy(wn.grad, dw.data());
        }
        if (xn.needs_grad) {
            std::vector<S> dx(size_t(N * D));
            gemm_nn(N, D, C, n.grad.data(), w.data(), dx.data());
            axpy(xn.grad, dx.data());
        }
    }

    // ---- group norm ----

    void fwd_group_norm(Node& n) {
        const TensorT<S>& x = in0(n).out;
        const TensorT<S>& gamma = in1(n).out;
        const TensorT<S>& beta = in2(n).out;
        require(x.shape.size() == 4, "group_norm: input must be [N,C,H,W]");
        const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        const int64_t G = n.groups;
        require(G >= 1 && C % G == 0, "group_norm: channels " + std::to_string(C) + " not divisible by groups " + std::to_string(G));
        require(gamma.numel() == C && beta.numel() == C, "group_norm: scale/offset must have C elements");
        const int64_t cg = C / G;
        const int64_t m = cg * HW;
        n.out.resize_to(x.shape);
        n.aux.assign(size_t(N * G * 2), 0.0);
        for (int64_t nn = 0; nn < N; ++nn) {
            for (int64_t g = 0; g < G; ++g) {
                const S* base = x.data() + (nn * C + g * cg) * HW;
                double sum = 0.0, sq = 0.0;
                for (int64_t i = 0; i < m; ++i) {
                    const double v = double(base[i]);
                    sum += v;
                    sq += v * v;
                }
                const double mu = sum / double(m);
                const double var = sq / double(m) - mu * mu;
                const double inv = 1.0 / std::sqrt(var + n.eps);
                n.aux[size_t((nn * G + g) * 2)] = mu;
                n.aux[size_t((nn * G + g) * 2 + 1)] = inv;
                S* dst = n.out.data() + (nn * C + g * cg) * HW;
                for (int64_t c = 0; c < cg; ++c) {
                    const double ga = double(gamma.v[size_t(g * cg + c)]);
                    const double be = double(beta.v[size_t(g * cg + c)]);
                    const S* xr = base + c * HW;
                    S* yr = dst + c * HW;
                    for (int64_t i = 0; i < HW; ++i) yr[i] = S(ga * ((double(xr[i]) - mu) * inv) + be);
                }
            }
        }
    }

    void bwd_group_norm(Node& n) {
        Node& xn = in0(n);
        Node& gn = in1(n);
        Node& bn = in2(n);
        const TensorT<S>& x = xn.out;
        const TensorT<S>& gamma = gn.out;
        const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        const int64_t G = n.groups, cg = C / G, m = cg * HW;
        for (int64_t nn = 0; nn < N; ++nn) {
            for (int64_t g = 0; g < G; ++g) {
                const double mu = n.aux[size_t((nn * G + g) * 2)];
                const double inv = n.aux[size_t((nn * G + g) * 2 + 1)];
                const S* xb = x.data() + (nn * C + g * cg) * HW;
                const S* gb = n.grad.data() + (nn * C + g * cg) * HW;
                // dxhat = gamma * dy; need mean(dxhat) and mean(dxhat*xhat)
                double s1 = 0.0, s2 = 0.0;
                for (int64_t c = 0; c < cg; ++c) {
                    const double ga = double(gamma.v[size_t(g * cg + c)]);
                    const S* xr = xb + c * HW;
                    const S* gr = gb + c * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        const double dxh = ga * double(gr[i]);
                        const double xh = (double(xr[i]) - mu) * inv;
                        s1 += dxh;
                        s2 += dxh * xh;
                    }
                }
                s1 /= double(m);
                s2 /= double(m);
                if (xn.needs_grad) {
                    S* dxb = xn.grad.data() + (nn * C + g * cg) * HW;
                    for (int64_t c = 0; c < cg; ++c) {
                        const double ga = double(gamma.v[size_t(g * cg + c)]);
                        const S* xr = xb + c * HW;
                        const S* gr = gb + c * HW;
                        S* dr = dxb + c * HW;
                        for (int64_t i = 0; i < HW; ++i) {
                            const double dxh = ga * double(gr[i]);
                            const double xh = (double(xr[i]) - mu) * inv;
                            dr[i] = S(double(dr[i]) + inv * (dxh - s1 - xh * s2));
                        }
                    }
                }
                if (gn.needs_grad || bn.needs_grad) {
                    for (int64_t c = 0; c < cg; ++c) {
                        const S* xr = xb + c * HW;
                        const S* gr = gb + c * HW;
                        double dga = 0.0, dbe = 0.0;
                        for (int64_t i = 0; i < HW; ++i) {
                            const double xh = (double(xr[i]) - mu) * inv;
                            dga += double(gr[i]) * xh;
                            dbe += double(gr[i]);
                        }
                        if (gn.needs_grad)
                            gn.grad.v[size_t(g * cg + c)] = S(double(gn.grad.v[size_t(g * cg + c)]) + dga);
                        if (bn.needs_grad)
                            bn.grad.v[size_t(g * cg + c)] = S(double(bn.grad.v[size_t(g * cg + c)]) + dbe);
                    }
                }
            }
        }
    }

    // ---- weight standardization ----

    void fwd_weight_std(Node& n) {
        const TensorT<S>& w = in0(n).out;
        require(w.shape.size() == 4, "weight_standardize: kernel must be [Cout,Cin,kh,kw]");
        const int64_t Cout = w.dim(0);
        const int64_t m = w.numel() / Cout;
        n.out.resize_to(w.shape);
        n.aux.assign(size_t(Cout * 2), 0.0);
        for (int64_t o = 0; o < Cout; ++o) {
            const S* src = w.data() + o * m;
            double sum = 0.0, sq = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double v = double(src[i]);
                sum += v;
                sq += v * v;
            }
            const double mu = sum / double(m);
            const double var = sq / double(m) - mu * mu;
            const double inv = 1.0 / std::sqrt(var + n.eps);
            n.aux[size_t(o * 2)] = mu;
            n.aux[size_t(o * 2 + 1)] = inv;
            S* dst = n.out.data() + o * m;
            for (int64_t i = 0; i < m; ++i) dst[i] = S((double(src[i]) - mu) * inv);
        }
    }

    void bwd_weight_std(Node& n) {
        Node& wn = in0(n);
        if (!wn.needs_grad) return;
        const TensorT<S>& w = wn.out;
        const int64_t Cout = w.dim(0);
        const int64_t m = w.numel() / Cout;
        for (int64_t o = 0; o < Cout; ++o) {
            const double mu = n.aux[size_t(o * 2)];
            const double inv = n.aux[size_t(o * 2 + 1)];
            const S* src = w.data() + o * m;
            const S* g = n.grad.data() + o * m;
            double s1 = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double wh = (double(src[i]) - mu) * inv;
                s1 += double(g[i]);
                s2 += double(g[i]) * wh;
            }
            s1 /= double(m);
            s2 /= double(m);
            S* dst = wn.grad.data() + o * m;
            for (int64_t i = 0; i < m; ++i) {
                const double wh = (double(src[i]) - mu) * inv;
                dst[i] = S(double(dst[i]) + inv * (double(g[i]) - s1 - wh * s2));
            }
        }
    }

    // ---- elementwise / pooling / loss ----

    void fwd_relu(Node& n) {
        const TensorT<S>& x = in0(n).out;
        n.out.resize_to(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) n.out.v[size_t(i)] = x.v[size_t(i)] > S(0) ? x.v[size_t(i)] : S(0);
    }

    void bwd_relu(Node& n) {
        Node& xn = in0(n);
        if (!xn.needs_grad) return;
        const TensorT<S>& x = xn.out;
        for (int64_t i = 0; i < x.numel(); ++i)
            if (x.v[size_t(i)] > S(0))
                xn.grad.v[size_t(i)] = S(double(xn.grad.v[size_t(i)]) + double(n.grad.v[size_t(i)]));
    }

    void fwd_scale(Node& n) {
        const TensorT<S>& x = in0(n).out;
        n.out.resize_to(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) n.out.v[size_t(i)] = S(n.scale_c * double(x.v[size_t(i)]));
    }

    void bwd_scale(Node& n) {
        Node& xn = in0(n);
        if (!xn.needs_grad) return;
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            xn.grad.v[size_t(i)] = S(double(xn.grad.v[size_t(i)]) + n.scale_c * double(n.grad.v[size_t(i)]));
    }

    void fwd_add(Node& n) {
        const TensorT<S>& a = in0(n).out;
        const TensorT<S>& b = in1(n).out;
        // b's shape must equal a's shape or be a trailing suffix of it
        require(b.shape.size() <= a.shape.size(), "add: second operand rank exceeds first");
        const size_t off = a.shape.size() - b.shape.size();
        for (size_t i = 0; i < b.shape.size(); ++i)
            require(b.shape[i] == a.shape[off + i],
                    "add: shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) + " incompatible");
        n.out.resize_to(a.shape);
        const int64_t nb = b.numel();
        for (int64_t i = 0; i < a.numel(); ++i)
            n.out.v[size_t(i)] = S(double(a.v[size_t(i)]) + double(b.v[size_t(i % nb)]));
    }

    void bwd_add(Node& n) {
        Node& an = in0(n);
        Node& bn = in1(n);
        if (an.needs_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                an.grad.v[size_t(i)] = S(double(an.grad.v[size_t(i)]) + double(n.grad.v[size_t(i)]));
        if (bn.needs_grad) {
            const int64_t nb = bn.out.numel();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                bn.grad.v[size_t(i % nb)] = S(double(bn.grad.v[size_t(i % nb)]) + double(n.grad.v[size_t(i)]));
        }
    }

    void fwd_avg_pool(Node& n) {
        const TensorT<S>& x = in0(n).out;
        require(x.shape.size() == 4, "avg_pool: input must be [N,C,H,W]");
        const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t kh = n.pool_h == 0 ? H : n.pool_h;
        const int64_t kw = n.pool_w == 0 ? W : n.pool_w;
        require(H % kh == 0 && W % kw == 0,
                "avg_pool: window " + std::to_string(kh) + "x" + std::to_string(kw) + " does not divide " +
                    std::to_string(H) + "x" + std::to_string(W));
        const int64_t Ho = H / kh, Wo = W / kw;
        n.out.resize_to({N, C, Ho, Wo});
        const double invk = 1.0 / double(kh * kw);
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const S* src = x.data() + nc * H * W;
            S* dst = n.out.data() + nc * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double s = 0.0;
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx) s += double(src[(oy * kh + dy) * W + ox * kw + dx]);
                    dst[oy * Wo + ox] = S(s * invk);
                }
        }
    }

    void bwd_avg_pool(Node& n) {
        Node& xn = in0(n);
        if (!xn.needs_grad) return;
        const TensorT<S>& x = xn.out;
        const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t kh = n.pool_h == 0 ? H : n.pool_h;
        const int64_t kw = n.pool_w == 0 ? W : n.pool_w;
        const int64_t Ho = H / kh, Wo = W / kw;
        const double invk = 1.0 / double(kh * kw);
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const S* g = n.grad.data() + nc * Ho * Wo;
            S* dst = xn.grad.data() + nc * H * W;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const double gv = double(g[oy * Wo + ox]) * invk;
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx) {
                            S& d = dst[(oy * kh + dy) * W + ox * kw + dx];
                            d = S(double(d) + gv);
                        }
                }
        }
    }

    void fwd_softmax_ce(Node& n) {
        const TensorT<S>& z = in0(n).out;
        require(z.shape.size() >= 2, "softmax_cross_entropy: logits must be [N,C]");
        const int64_t N = z.dim(0);
        const int64_t C = z.numel() / N;
        require(labels_ != nullptr && int64_t(labels_->size()) == N,
                "softmax_cross_entropy: labels not bound or wrong count");
        n.out.resize_to({N});
        n.aux.assign(size_t(N * C), 0.0);
        for (int64_t i = 0; i < N; ++i) {
            const int y = (*labels_)[size_t(i)];
            require(y >= 0 && int64_t(y) < C, "softmax_cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                                  std::to_string(C) + ")");
            const S* zr = z.data() + i * C;
            double zmax = double(zr[0]);
            for (int64_t c = 1; c < C; ++c) zmax = std::max(zmax, double(zr[c]));
            double sum = 0.0;
            for (int64_t c = 0; c < C; ++c) sum += std::exp(double(zr[c]) - zmax);
            for (int64_t c = 0; c < C; ++c) n.aux[size_t(i * C + c)] = std::exp(double(zr[c]) - zmax) / sum;
            n.out.v[size_t(i)] = S(std::log(sum) + zmax - double(zr[y]));
        }
    }

    void bwd_softmax_ce(Node& n) {
        Node& zn = in0(n);
        if (!zn.needs_grad) return;
        const int64_t N = n.out.dim(0);
        const int64_t C = zn.out.numel() / N;
        for (int64_t i = 0; i < N; ++i) {
            const int y = (*labels_)[size_t(i)];
            const double seed = double(n.grad.v[size_t(i)]);
            S* dz = zn.grad.data() + i * C;
            for (int64_t c = 0; c < C; ++c) {
                const double p = n.aux[size_t(i * C + c)];
                dz[c] = S(double(dz[c]) + seed * (p - (int64_t(y) == c ? 1.0 : 0.0)));
            }
        }
    }
};

using Graph = GraphT<float>;

}  // namespace patchlab
