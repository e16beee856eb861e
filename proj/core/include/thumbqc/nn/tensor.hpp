#pragma once

#include <cstddef>
#include <vector>

namespace thumbqc::nn {

// All graph math runs in double; image buffers stay float and are widened
// at the normalize step.
using real = double;

/// Dense row-major tensor. The graph works almost entirely on rank-2
/// [rows, cols] values; vectors are [1, n] and scalars [1, 1].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, real fill);
    static Tensor from(std::vector<int> shape, std::vector<real> values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    // Rank-2 accessors.
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }
    real& at(int r, int c) { return v_[static_cast<size_t>(r) * shape_[1] + c]; }
    real at(int r, int c) const { return v_[static_cast<size_t>(r) * shape_[1] + c]; }

    real* data() { return v_.data(); }
    const real* data() const { return v_.data(); }
    real& operator[](size_t i) { return v_[i]; }
    real operator[](size_t i) const { return v_[i]; }

    std::vector<real>& raw() { return v_; }
    const std::vector<real>& raw() const { return v_; }

    void fill(real value);
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<int> shape_;
    std::vector<real> v_;
};

size_t shape_numel(const std::vector<int>& shape);

// Accumulating GEMM kernels; a, b and c must not alias.
// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n);
// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const real* __restrict a, const real* __restrict b, real* __restrict c, int m, int k,
             int n);

}  // namespace thumbqc::nn
