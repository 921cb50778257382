#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchlab {

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::runtime_error("tensor: non-positive dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. Storage scalar S is float in the production path;
// the double instantiation backs the finite-difference gradient oracle.
template <typename S>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<S> v;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)), v(size_t(numel_of(shape)), S(0)) {}
    TensorT(std::vector<int64_t> s, std::vector<S> data) : shape(std::move(s)), v(std::move(data)) {
        if (int64_t(v.size()) != numel_of(shape))
            throw std::runtime_error("tensor: value count does not match shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }
    static TensorT full(std::vector<int64_t> s, S value) {
        TensorT t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    int64_t numel() const { return int64_t(v.size()); }
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    // reshape buffers in place, keeping capacity across repeated forwards
    void resize_to(const std::vector<int64_t>& s) {
        shape = s;
        v.assign(size_t(numel_of(s)), S(0));
    }

    int64_t dim(size_t i) const { return shape.at(i); }

    template <typename T>
    TensorT<T> cast() const {
        TensorT<T> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = T(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

template <typename S>
bool all_finite(const TensorT<S>& t) {
    for (S x : t.v)
        if (!std::isfinite(double(x))) return false;
    return true;
}

}  // namespace patchlab
