#include "thumbqc/nn/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace thumbqc::nn {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), v_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, real fill)
    : shape_(std::move(shape)), v_(shape_numel(shape_), fill) {}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor data length does not match shape");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.v_ = std::move(values);
    return t;
}

void Tensor::fill(real value) { std::fill(v_.begin(), v_.end(), value); }

namespace {

// Narrow-output panels (attention's A*V, head tails): accumulate four rows
// at a time so each B row is loaded once per block. The accumulators are
// separate fixed-size arrays with independent j-loops, a shape the
// vectorizer turns into plain broadcast-FMA chains.
template <int N>
void gemm_nn_narrow(const real* __restrict a, const real* __restrict b, real* __restrict c, int m,
                    int k) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        real acc0[N] = {}, acc1[N] = {}, acc2[N] = {}, acc3[N] = {};
        const real* __restrict a0 = a + static_cast<size_t>(i) * k;
        const real* __restrict a1 = a0 + k;
        const real* __restrict a2 = a1 + k;
        const real* __restrict a3 = a2 + k;
        for (int p = 0; p < k; ++p) {
            const real* __restrict bp = b + static_cast<size_t>(p) * N;
            const real v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            for (int j = 0; j < N; ++j) acc0[j] += v0 * bp[j];
            for (int j = 0; j < N; ++j) acc1[j] += v1 * bp[j];
            for (int j = 0; j < N; ++j) acc2[j] += v2 * bp[j];
            for (int j = 0; j < N; ++j) acc3[j] += v3 * bp[j];
        }
        real* __restrict ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) ci[j] += acc0[j];
        for (int j = 0; j < N; ++j) ci[N + j] += acc1[j];
        for (int j = 0; j < N; ++j) ci[2 * N + j] += acc2[j];
        for (int j = 0; j < N; ++j) ci[3 * N + j] += acc3[j];
    }
    for (; i < m; ++i) {
        real* __restrict ci = c + static_cast<size_t>(i) * N;
        const real* __restrict ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real ap = ai[p];
            const real* __restrict bp = b + static_cast<size_t>(p) * N;
            for (int j = 0; j < N; ++j) ci[j] += ap * bp[j];
        }
    }
}

}  // namespace

void gemm_nn(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n) {
    if (n == 16) {
        gemm_nn_narrow<16>(a, b, c, m, k);
        return;
    }
    if (n == 8) {
        gemm_nn_narrow<8>(a, b, c, m, k);
        return;
    }
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<size_t>(i) * n;
        const real* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real ap = ai[p];
            const real* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += ap * bp[j];
        }
    }
}

void gemm_nt(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n) {
    for (int i = 0; i < m; ++i) {
        const real* ai = a + static_cast<size_t>(i) * k;
        real* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* bj = b + static_cast<size_t>(j) * k;
            real acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

void gemm_tn(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n) {
    for (int p = 0; p < m; ++p) {
        const real* ap = a + static_cast<size_t>(p) * k;
        const real* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < k; ++i) {
            const real av = ap[i];
            if (av == 0.0) continue;
            real* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace thumbqc::nn
