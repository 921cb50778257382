#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace patchlab {

// Small GEMM kernels used by conv2d/dense. All accumulation is done in
// double regardless of the storage scalar; summation order is fixed so
// results are reproducible run to run and across batch sizes.

// C[M,N] = A[M,K] * B[K,N]. j-tiled so a B tile stays cache-hot across rows.
template <typename S>
void gemm_nn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C) {
    constexpr int64_t JT = 1024;
    std::vector<double> acc0(size_t(std::min(JT, N))), acc1(acc0.size());
    for (int64_t j0 = 0; j0 < N; j0 += JT) {
        const int64_t jn = std::min(JT, N - j0);
        int64_t i = 0;
        for (; i + 1 < M; i += 2) {
            std::fill(acc0.begin(), acc0.begin() + jn, 0.0);
            std::fill(acc1.begin(), acc1.begin() + jn, 0.0);
            const S* a0 = A + i * K;
            const S* a1 = a0 + K;
            for (int64_t k = 0; k < K; ++k) {
                const double av0 = double(a0[k]), av1 = double(a1[k]);
                const S* b = B + k * N + j0;
                for (int64_t j = 0; j < jn; ++j) {
                    const double bv = double(b[j]);
                    acc0[size_t(j)] += av0 * bv;
                    acc1[size_t(j)] += av1 * bv;
                }
            }
            S* c0 = C + i * N + j0;
            S* c1 = c0 + N;
            for (int64_t j = 0; j < jn; ++j) {
                c0[j] = S(acc0[size_t(j)]);
                c1[j] = S(acc1[size_t(j)]);
            }
        }
        for (; i < M; ++i) {
            std::fill(acc0.begin(), acc0.begin() + jn, 0.0);
            const S* a = A + i * K;
            for (int64_t k = 0; k < K; ++k) {
                const double av = double(a[k]);
                const S* b = B + k * N + j0;
                for (int64_t j = 0; j < jn; ++j) acc0[size_t(j)] += av * double(b[j]);
            }
            S* c = C + i * N + j0;
            for (int64_t j = 0; j < jn; ++j) c[j] = S(acc0[size_t(j)]);
        }
    }
}

// dot product with 4-way partial sums (fixed order, vectorizable)
template <typename S>
double dot_acc(int64_t K, const S* a, const S* b) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int64_t k = 0;
    for (; k + 3 < K; k += 4) {
        s0 += double(a[k]) * double(b[k]);
        s1 += double(a[k + 1]) * double(b[k + 1]);
        s2 += double(a[k + 2]) * double(b[k + 2]);
        s3 += double(a[k + 3]) * double(b[k + 3]);
    }
    for (; k < K; ++k) s0 += double(a[k]) * double(b[k]);
    return (s0 + s1) + (s2 + s3);
}

// C[M,N] = A[M,K] * B[N,K]^T  (accumulate=true adds into C)
template <typename S>
void gemm_nt(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accumulate = false) {
    for (int64_t i = 0; i < M; ++i) {
        const S* a = A + i * K;
        for (int64_t j = 0; j < N; ++j) {
            const double d = dot_acc(K, a, B + j * K);
            S& c = C[i * N + j];
            c = accumulate ? S(double(c) + d) : S(d);
        }
    }
}

// C[M,N] = A[K,M]^T * B[K,N]
template <typename S>
void gemm_tn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C) {
    constexpr int64_t JT = 1024;
    std::vector<double> acc(size_t(std::min(JT, N)));
    for (int64_t j0 = 0; j0 < N; j0 += JT) {
        const int64_t jn = std::min(JT, N - j0);
        for (int64_t m = 0; m < M; ++m) {
            std::fill(acc.begin(), acc.begin() + jn, 0.0);
            for (int64_t k = 0; k < K; ++k) {
                const double av = double(A[k * M + m]);
                const S* b = B + k * N + j0;
                for (int64_t j = 0; j < jn; ++j) acc[size_t(j)] += av * double(b[j]);
            }
            S* c = C + m * N + j0;
            for (int64_t j = 0; j < jn; ++j) c[j] = S(acc[size_t(j)]);
        }
    }
}

}  // namespace patchlab
