#include "thumbqc/nn/tape.hpp"

#include <cmath>
#include <cstring>

#include "thumbqc/errors.hpp"

namespace thumbqc::nn {

namespace {
constexpr real kBceClamp = 1e-7;
constexpr real kInvSqrt2 = 0.70710678118654752440;
constexpr real kInvSqrt2Pi = 0.39894228040143267794;

void require(bool cond, const char* msg) {
    if (!cond) throw InvalidInput(msg);
}

// exp for softmax rows: 2^n * exp(f ln2) with a degree-11 polynomial on
// |f| <= 1/2 (~1e-15 relative error). Branch-free and auto-vectorizable,
// which matters at upscaled token counts where softmax dominates.
inline real softmax_exp(real x) {
    x = std::max(x, -708.0);
    const real n = std::nearbyint(x * 1.4426950408889634074);
    const real t = x - n * 0.693147180559945286227;  // |t| <= ln2/2
    real p = 1.0 / 39916800.0;
    p = p * t + 1.0 / 3628800.0;
    p = p * t + 1.0 / 362880.0;
    p = p * t + 1.0 / 40320.0;
    p = p * t + 1.0 / 5040.0;
    p = p * t + 1.0 / 720.0;
    p = p * t + 1.0 / 120.0;
    p = p * t + 1.0 / 24.0;
    p = p * t + 1.0 / 6.0;
    p = p * t + 0.5;
    p = p * t + 1.0;
    p = p * t + 1.0;
    const int64_t bits = (static_cast<int64_t>(n) + 1023) << 52;
    real scale;
    std::memcpy(&scale, &bits, sizeof(scale));
    return p * scale;
}

}  // namespace

Var Tape::push(Tensor val, bool needs_grad) {
    require(!in_backward_, "tape: cannot grow during backward");
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

real* Tape::gptr(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.val.shape());
    return n.grad.data();
}

Var Tape::constant(Tensor t) { return push(std::move(t), false); }

Var Tape::param(Parameter& p) {
    Var v = push(p.value, !inference_);
    if (!inference_) node(v).bound = &p;
    return v;
}

const Tensor& Tape::val(Var v) const { return node(v).val; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
        static const Tensor empty;
        if (n.val.empty()) return empty;
        const_cast<Node&>(n).grad = Tensor(n.val.shape());
    }
    return n.grad;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul: shape mismatch");
    const int m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    gemm_nn(A.data(), B.data(), C.data(), m, k, n);
    Var out = push(std::move(C), tracked(a) || tracked(b));
    if (node(out).needs_grad) {
        node(out).back = [this, a, b, out, m, k, n] {
            const real* dc = node(out).grad.data();
            if (real* da = gptr(a.id)) gemm_nt(dc, val(b).data(), da, m, n, k);
            if (real* db = gptr(b.id)) gemm_tn(val(a).data(), dc, db, m, k, n);
        };
    }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "matmul_nt: shape mismatch");
    const int m = A.rows(), k = A.cols(), n = B.rows();
    Tensor C({m, n});
    gemm_nt(A.data(), B.data(), C.data(), m, k, n);
    Var out = push(std::move(C), tracked(a) || tracked(b));
    if (node(out).needs_grad) {
        node(out).back = [this, a, b, out, m, k, n] {
            const real* dc = node(out).grad.data();
            if (real* da = gptr(a.id)) gemm_nn(dc, val(b).data(), da, m, n, k);
            if (real* db = gptr(b.id)) gemm_tn(dc, val(a).data(), db, m, n, k);
        };
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.same_shape(B), "add: shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    Var out = push(std::move(C), tracked(a) || tracked(b));
    if (node(out).needs_grad) {
        node(out).back = [this, a, b, out] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            if (real* db = gptr(b.id))
                for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
        };
    }
    return out;
}

Var Tape::add_rowvec(Var a, Var bias) {
    const Tensor& A = val(a);
    const Tensor& B = val(bias);
    require(B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols(), "add_rowvec: shape mismatch");
    Tensor C = A;
    const int m = A.rows(), n = A.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) C.at(i, j) += B[static_cast<size_t>(j)];
    Var out = push(std::move(C), tracked(a) || tracked(bias));
    if (node(out).needs_grad) {
        node(out).back = [this, a, bias, out, m, n] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            if (real* db = gptr(bias.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += dc.at(i, j);
            }
        };
    }
    return out;
}

Var Tape::scale(Var a, real s) {
    Tensor C = val(a);
    for (size_t i = 0; i < C.size(); ++i) C[i] *= s;
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, s] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += s * dc[i];
        };
    }
    return out;
}

Var Tape::relu(Var a) {
    Tensor C = val(a);
    for (size_t i = 0; i < C.size(); ++i)
        if (C[i] < 0.0) C[i] = 0.0;
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out] {
            const Tensor& dc = node(out).grad;
            const Tensor& x = val(a);
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i)
                    if (x[i] > 0.0) da[i] += dc[i];
        };
    }
    return out;
}

Var Tape::gelu(Var a) {
    const Tensor& X = val(a);
    Tensor C(X.shape());
    for (size_t i = 0; i < X.size(); ++i) {
        C[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * kInvSqrt2));
    }
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out] {
            const Tensor& dc = node(out).grad;
            const Tensor& x = val(a);
            if (real* da = gptr(a.id)) {
                for (size_t i = 0; i < dc.size(); ++i) {
                    const real cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
                    const real pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
                    da[i] += dc[i] * (cdf + x[i] * pdf);
                }
            }
        };
    }
    return out;
}

Var Tape::sigmoid(Var a) {
    const Tensor& X = val(a);
    Tensor C(X.shape());
    for (size_t i = 0; i < X.size(); ++i) {
        const real x = X[i];
        if (x >= 0.0) {
            C[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const real e = std::exp(x);
            C[i] = e / (1.0 + e);
        }
    }
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out] {
            const Tensor& dc = node(out).grad;
            const Tensor& y = val(out);
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * y[i] * (1.0 - y[i]);
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    const Tensor& X = val(a);
    require(X.rank() == 2, "softmax_rows: rank-2 expected");
    Tensor C(X.shape());
    const int m = X.rows(), n = X.cols();
    for (int i = 0; i < m; ++i) {
        real mx = X.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, X.at(i, j));
        real sum = 0.0;
        for (int j = 0; j < n; ++j) {
            const real e = softmax_exp(X.at(i, j) - mx);
            C.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < n; ++j) C.at(i, j) /= sum;
    }
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, m, n] {
            const Tensor& dc = node(out).grad;
            const Tensor& y = val(out);
            if (real* da = gptr(a.id)) {
                for (int i = 0; i < m; ++i) {
                    real dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += dc.at(i, j) * y.at(i, j);
                    for (int j = 0; j < n; ++j)
                        da[static_cast<size_t>(i) * n + j] += (dc.at(i, j) - dot) * y.at(i, j);
                }
            }
        };
    }
    return out;
}

Var Tape::layernorm(Var x, Var gamma, Var beta, real eps) {
    const Tensor& X = val(x);
    const Tensor& G = val(gamma);
    const Tensor& B = val(beta);
    const int m = X.rows(), n = X.cols();
    require(G.rows() == 1 && G.cols() == n && B.rows() == 1 && B.cols() == n,
            "layernorm: gamma/beta shape mismatch");
    Tensor C({m, n});
    Tensor xhat({m, n});
    Tensor inv_std({1, m});
    for (int i = 0; i < m; ++i) {
        real mean = 0.0;
        for (int j = 0; j < n; ++j) mean += X.at(i, j);
        mean /= n;
        real var = 0.0;
        for (int j = 0; j < n; ++j) {
            const real d = X.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const real is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const real xh = (X.at(i, j) - mean) * is;
            xhat.at(i, j) = xh;
            C.at(i, j) = G[static_cast<size_t>(j)] * xh + B[static_cast<size_t>(j)];
        }
    }
    Var out = push(std::move(C), tracked(x) || tracked(gamma) || tracked(beta));
    if (node(out).needs_grad) {
        node(out).back = [this, x, gamma, beta, out, m, n, xh = std::move(xhat),
                          is = std::move(inv_std)] {
            const Tensor& dc = node(out).grad;
            const Tensor& G = val(gamma);
            if (real* dg = gptr(gamma.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) dg[j] += dc.at(i, j) * xh.at(i, j);
            }
            if (real* db = gptr(beta.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += dc.at(i, j);
            }
            if (real* dx = gptr(x.id)) {
                for (int i = 0; i < m; ++i) {
                    real mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const real dxh = dc.at(i, j) * G[static_cast<size_t>(j)];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh.at(i, j);
                    }
                    mean_dxh /= n;
                    mean_dxh_xh /= n;
                    for (int j = 0; j < n; ++j) {
                        const real dxh = dc.at(i, j) * G[static_cast<size_t>(j)];
                        dx[static_cast<size_t>(i) * n + j] +=
                            (dxh - mean_dxh - xh.at(i, j) * mean_dxh_xh) * is[static_cast<size_t>(i)];
                    }
                }
            }
        };
    }
    return out;
}

Var Tape::batchnorm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
                    bool training, real momentum, real eps) {
    const Tensor& X = val(x);
    const Tensor& G = val(gamma);
    const Tensor& B = val(beta);
    const int m = X.rows(), n = X.cols();
    require(G.cols() == n && B.cols() == n, "batchnorm: gamma/beta shape mismatch");
    require(static_cast<int>(running_mean.value.size()) == n &&
                static_cast<int>(running_var.value.size()) == n,
            "batchnorm: running stats shape mismatch");

    Tensor C({m, n});
    Tensor xhat({m, n});
    Tensor inv_std({1, n});
    if (training) {
        for (int j = 0; j < n; ++j) {
            real mean = 0.0;
            for (int i = 0; i < m; ++i) mean += X.at(i, j);
            mean /= m;
            real var = 0.0;
            for (int i = 0; i < m; ++i) {
                const real d = X.at(i, j) - mean;
                var += d * d;
            }
            var /= m;
            const real is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(j)] = is;
            for (int i = 0; i < m; ++i) {
                const real xh = (X.at(i, j) - mean) * is;
                xhat.at(i, j) = xh;
                C.at(i, j) = G[static_cast<size_t>(j)] * xh + B[static_cast<size_t>(j)];
            }
            const real unbiased = m > 1 ? var * m / (m - 1) : var;
            running_mean.value[static_cast<size_t>(j)] =
                (1.0 - momentum) * running_mean.value[static_cast<size_t>(j)] + momentum * mean;
            running_var.value[static_cast<size_t>(j)] =
                (1.0 - momentum) * running_var.value[static_cast<size_t>(j)] + momentum * unbiased;
        }
    } else {
        for (int j = 0; j < n; ++j) {
            const real mean = running_mean.value[static_cast<size_t>(j)];
            const real is = 1.0 / std::sqrt(running_var.value[static_cast<size_t>(j)] + eps);
            inv_std[static_cast<size_t>(j)] = is;
            for (int i = 0; i < m; ++i) {
                const real xh = (X.at(i, j) - mean) * is;
                xhat.at(i, j) = xh;
                C.at(i, j) = G[static_cast<size_t>(j)] * xh + B[static_cast<size_t>(j)];
            }
        }
    }
    Var out = push(std::move(C), tracked(x) || tracked(gamma) || tracked(beta));
    if (node(out).needs_grad) {
        node(out).back = [this, x, gamma, beta, out, m, n, training, xh = std::move(xhat),
                          is = std::move(inv_std)] {
            const Tensor& dc = node(out).grad;
            const Tensor& G = val(gamma);
            if (real* dg = gptr(gamma.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) dg[j] += dc.at(i, j) * xh.at(i, j);
            }
            if (real* db = gptr(beta.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[j] += dc.at(i, j);
            }
            if (real* dx = gptr(x.id)) {
                if (training) {
                    for (int j = 0; j < n; ++j) {
                        real mean_dxh = 0.0, mean_dxh_xh = 0.0;
                        for (int i = 0; i < m; ++i) {
                            const real dxh = dc.at(i, j) * G[static_cast<size_t>(j)];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh.at(i, j);
                        }
                        mean_dxh /= m;
                        mean_dxh_xh /= m;
                        for (int i = 0; i < m; ++i) {
                            const real dxh = dc.at(i, j) * G[static_cast<size_t>(j)];
                            dx[static_cast<size_t>(i) * n + j] +=
                                (dxh - mean_dxh - xh.at(i, j) * mean_dxh_xh) *
                                is[static_cast<size_t>(j)];
                        }
                    }
                } else {
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j)
                            dx[static_cast<size_t>(i) * n + j] +=
                                dc.at(i, j) * G[static_cast<size_t>(j)] * is[static_cast<size_t>(j)];
                }
            }
        };
    }
    return out;
}

Var Tape::attention(Var q, Var k, Var v, real s) {
    const Tensor& Q = val(q);
    const Tensor& K = val(k);
    const Tensor& V = val(v);
    require(Q.cols() == K.cols() && K.rows() == V.rows(), "attention: shape mismatch");
    const int tq = Q.rows(), dh = Q.cols(), tk = K.rows(), dv = V.cols();

    const bool track = tracked(q) || tracked(k) || tracked(v);
    // Inference tapes never run backward, so the softmax weights live in a
    // reused scratch instead of accumulating per head on the tape.
    thread_local Tensor scratch;
    Tensor owned;
    Tensor* a_ptr;
    if (track) {
        owned = Tensor({tq, tk});
        a_ptr = &owned;
    } else {
        if (scratch.rank() != 2 || scratch.rows() != tq || scratch.cols() != tk) {
            scratch = Tensor({tq, tk});
        }
        a_ptr = &scratch;
    }
    Tensor& A = *a_ptr;
    Tensor O({tq, dv});
    if (tk <= 512) {
        // Small sequences fit cache; plain GEMM phases win.
        if (!track) A.fill(0.0);
        gemm_nt(Q.data(), K.data(), A.data(), tq, dh, tk);
        for (int i = 0; i < tq; ++i) {
            real* __restrict row = A.data() + static_cast<size_t>(i) * tk;
            for (int j = 0; j < tk; ++j) row[j] *= s;
            real mx = row[0];
            for (int j = 1; j < tk; ++j) mx = std::max(mx, row[j]);
            real sum = 0.0;
            for (int j = 0; j < tk; ++j) {
                row[j] = softmax_exp(row[j] - mx);
                sum += row[j];
            }
            const real inv = 1.0 / sum;
            for (int j = 0; j < tk; ++j) row[j] *= inv;
        }
        gemm_nn(A.data(), V.data(), O.data(), tq, tk, dv);
    } else {
        // Row-fused attention for long sequences: per query row, scores
        // against the transposed keys, softmax and the value reduction all
        // happen while the row is L1-hot; the weights A go to memory once
        // and are never re-read. This keeps the upscaled token counts
        // faster than tiling despite the T^2 term.
        Tensor kt({dh, tk});
        for (int i = 0; i < tk; ++i) {
            for (int j = 0; j < dh; ++j) kt.at(j, i) = K.at(i, j);
        }
        const real* __restrict qd = Q.data();
        const real* __restrict ktd = kt.data();
        const real* __restrict vd = V.data();
        for (int i = 0; i < tq; ++i) {
            real* __restrict row = A.data() + static_cast<size_t>(i) * tk;
            {  // first slice assigns, the rest accumulate: no zero pass
                const real qp = qd[static_cast<size_t>(i) * dh] * s;
                const real* __restrict ktr = ktd;
                for (int j = 0; j < tk; ++j) row[j] = qp * ktr[j];
            }
            for (int p = 1; p < dh; ++p) {
                const real qp = qd[static_cast<size_t>(i) * dh + p] * s;
                const real* __restrict ktr = ktd + static_cast<size_t>(p) * tk;
                for (int j = 0; j < tk; ++j) row[j] += qp * ktr[j];
            }
            real mx = row[0];
            for (int j = 1; j < tk; ++j) mx = std::max(mx, row[j]);
            real sum = 0.0;
            for (int j = 0; j < tk; ++j) {
                row[j] = softmax_exp(row[j] - mx);
                sum += row[j];
            }
            const real inv = 1.0 / sum;
            for (int j = 0; j < tk; ++j) row[j] *= inv;
            real* __restrict orow = O.data() + static_cast<size_t>(i) * dv;
            for (int p = 0; p < tk; ++p) {
                const real ap = row[p];
                const real* __restrict vr = vd + static_cast<size_t>(p) * dv;
                for (int j = 0; j < dv; ++j) orow[j] += ap * vr[j];
            }
        }
    }

    Var out = push(std::move(O), track);
    if (node(out).needs_grad) {
        node(out).back = [this, q, k, v, out, s, tq, dh, tk, dv, A = std::move(owned)] {
            const Tensor& dout = node(out).grad;
            // dA = dout V^T, softmax backward, then fan out to q and k.
            Tensor dA({tq, tk});
            gemm_nt(dout.data(), val(v).data(), dA.data(), tq, dv, tk);
            if (real* dV = gptr(v.id)) gemm_tn(A.data(), dout.data(), dV, tq, tk, dv);
            Tensor ds({tq, tk});
            for (int i = 0; i < tq; ++i) {
                real dot = 0.0;
                for (int j = 0; j < tk; ++j) dot += dA.at(i, j) * A.at(i, j);
                for (int j = 0; j < tk; ++j) ds.at(i, j) = (dA.at(i, j) - dot) * A.at(i, j) * s;
            }
            if (real* dQ = gptr(q.id)) gemm_nn(ds.data(), val(k).data(), dQ, tq, tk, dh);
            if (real* dK = gptr(k.id)) gemm_tn(ds.data(), val(q).data(), dK, tq, tk, dh);
        };
    }
    return out;
}

Var Tape::dropout(Var a, real p, std::mt19937& rng, bool enabled) {
    if (!enabled || p <= 0.0) return a;
    require(p < 1.0, "dropout: p must be < 1");
    const Tensor& X = val(a);
    const real keep = 1.0 - p;
    Tensor mask(X.shape());
    std::uniform_real_distribution<real> u(0.0, 1.0);
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = u(rng) < keep ? 1.0 / keep : 0.0;
    Tensor C(X.shape());
    for (size_t i = 0; i < C.size(); ++i) C[i] = X[i] * mask[i];
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, mk = std::move(mask)] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * mk[i];
        };
    }
    return out;
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    const Tensor& X = val(a);
    require(0 <= r0 && r0 < r1 && r1 <= X.rows(), "slice_rows: bad range");
    const int n = X.cols();
    Tensor C({r1 - r0, n});
    std::copy(X.data() + static_cast<size_t>(r0) * n, X.data() + static_cast<size_t>(r1) * n,
              C.data());
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, r0, n] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id))
                for (size_t i = 0; i < dc.size(); ++i) da[static_cast<size_t>(r0) * n + i] += dc[i];
        };
    }
    return out;
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Tensor& X = val(a);
    require(0 <= c0 && c0 < c1 && c1 <= X.cols(), "slice_cols: bad range");
    const int m = X.rows(), n = X.cols(), w = c1 - c0;
    Tensor C({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) C.at(i, j) = X.at(i, c0 + j);
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, c0, m, n, w] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id)) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        da[static_cast<size_t>(i) * n + c0 + j] += dc.at(i, j);
            }
        };
    }
    return out;
}

Var Tape::concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows: empty");
    const int n = val(parts[0]).cols();
    int m = 0;
    bool track = false;
    for (Var p : parts) {
        require(val(p).cols() == n, "concat_rows: column mismatch");
        m += val(p).rows();
        track = track || tracked(p);
    }
    Tensor C({m, n});
    int r = 0;
    for (Var p : parts) {
        const Tensor& X = val(p);
        std::copy(X.data(), X.data() + X.size(), C.data() + static_cast<size_t>(r) * n);
        r += X.rows();
    }
    Var out = push(std::move(C), track);
    if (node(out).needs_grad) {
        std::vector<Var> ps(parts.begin(), parts.end());
        node(out).back = [this, ps, out, n] {
            const Tensor& dc = node(out).grad;
            int r = 0;
            for (Var p : ps) {
                const int pr = val(p).rows();
                if (real* dp = gptr(p.id)) {
                    const real* src = dc.data() + static_cast<size_t>(r) * n;
                    for (size_t i = 0; i < static_cast<size_t>(pr) * n; ++i) dp[i] += src[i];
                }
                r += pr;
            }
        };
    }
    return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols: empty");
    const int m = val(parts[0]).rows();
    int n = 0;
    bool track = false;
    for (Var p : parts) {
        require(val(p).rows() == m, "concat_cols: row mismatch");
        n += val(p).cols();
        track = track || tracked(p);
    }
    Tensor C({m, n});
    int c = 0;
    for (Var p : parts) {
        const Tensor& X = val(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < X.cols(); ++j) C.at(i, c + j) = X.at(i, j);
        c += X.cols();
    }
    Var out = push(std::move(C), track);
    if (node(out).needs_grad) {
        std::vector<Var> ps(parts.begin(), parts.end());
        node(out).back = [this, ps, out, m, n] {
            const Tensor& dc = node(out).grad;
            int c = 0;
            for (Var p : ps) {
                const int pc = val(p).cols();
                if (real* dp = gptr(p.id)) {
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            dp[static_cast<size_t>(i) * pc + j] += dc.at(i, c + j);
                }
                c += pc;
            }
        };
    }
    return out;
}

Var Tape::mean_rows(Var a, int r0, int r1) {
    const Tensor& X = val(a);
    require(0 <= r0 && r0 < r1 && r1 <= X.rows(), "mean_rows: bad range");
    const int n = X.cols();
    const int cnt = r1 - r0;
    Tensor C({1, n});
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < n; ++j) C[static_cast<size_t>(j)] += X.at(i, j);
    for (int j = 0; j < n; ++j) C[static_cast<size_t>(j)] /= cnt;
    Var out = push(std::move(C), tracked(a));
    if (node(out).needs_grad) {
        node(out).back = [this, a, out, r0, r1, n, cnt] {
            const Tensor& dc = node(out).grad;
            if (real* da = gptr(a.id)) {
                for (int i = r0; i < r1; ++i)
                    for (int j = 0; j < n; ++j)
                        da[static_cast<size_t>(i) * n + j] += dc[static_cast<size_t>(j)] / cnt;
            }
        };
    }
    return out;
}

Var Tape::bce_mean(Var probs, const std::vector<real>& labels) {
    const Tensor& P = val(probs);
    require(P.cols() == 1 && static_cast<size_t>(P.rows()) == labels.size(),
            "bce_mean: probs must be [m,1] matching labels");
    const int m = P.rows();
    real loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const real p = std::clamp(P[static_cast<size_t>(i)], kBceClamp, 1.0 - kBceClamp);
        const real y = labels[static_cast<size_t>(i)];
        loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    Tensor C({1, 1});
    C[0] = loss / m;
    Var out = push(std::move(C), tracked(probs));
    if (node(out).needs_grad) {
        node(out).back = [this, probs, out, labels, m] {
            const real d = node(out).grad[0];
            if (real* dp = gptr(probs.id)) {
                const Tensor& P = val(probs);
                for (int i = 0; i < m; ++i) {
                    const real raw = P[static_cast<size_t>(i)];
                    if (raw <= kBceClamp || raw >= 1.0 - kBceClamp) continue;  // clamped: flat
                    const real y = labels[static_cast<size_t>(i)];
                    dp[i] += d * (raw - y) / (raw * (1.0 - raw) * m);
                }
            }
        };
    }
    return out;
}

void Tape::backward(Var loss) {
    require(loss.valid() && loss.id < static_cast<int>(nodes_.size()), "backward: bad loss var");
    require(val(loss).size() == 1, "backward: loss must be scalar");
    require(tracked(loss), "backward: loss does not depend on any parameter");
    in_backward_ = true;
    if (real* g = gptr(loss.id)) g[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad && n.back && !n.grad.empty()) n.back();
    }
    // Flush leaf gradients into their parameters.
    for (Node& n : nodes_) {
        if (n.bound && !n.grad.empty()) {
            for (size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
    in_backward_ = false;
}

}  // namespace thumbqc::nn
