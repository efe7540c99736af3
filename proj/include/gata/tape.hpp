#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "gata/tensor.hpp"

namespace gata::nn {

// Reverse-mode autodiff over a fixed primitive catalog. One Tape instance
// records one forward pass; backward() walks the recording in reverse.
// Matmuls and reductions run through Eigen maps over the row-major storage.
template <class T>
class Tape {
public:
    using Var = int;
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<Mat>;
    using CMap = Eigen::Map<const Mat>;

    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ------------------------------------------------------------------
    // Leaves
    // ------------------------------------------------------------------

    Var leaf(Tensor<T> value, bool needs_grad = false) {
        return push(std::move(value), needs_grad, {});
    }

    Var param(Parameter<T>& p) {
        auto it = param_vars_.find(&p);
        if (it != param_vars_.end()) return it->second;
        Var v = push(p.value, p.trainable, {});
        param_vars_.emplace(&p, v);
        bound_.push_back({&p, v});
        return v;
    }

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    const Tensor<T>& grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }
    size_t size() const { return nodes_.size(); }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dims " + A.shape_str() + B.shape_str());
        Tensor<T> out(A.rows(), B.cols());
        map(out) = cmap(A) * cmap(B);
        return push(std::move(out), needs(a) || needs(b), {a, b}, [this, a, b](Node& n) {
            if (needs(a)) map(gref(a)) += cmap(n.grad) * cmap(val(b)).transpose();
            if (needs(b)) map(gref(b)) += cmap(val(a)).transpose() * cmap(n.grad);
        });
    }

    Var transpose(Var a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.cols(), A.rows());
        map(out) = cmap(A).transpose();
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (needs(a)) map(gref(a)) += cmap(n.grad).transpose();
        });
    }

    // ------------------------------------------------------------------
    // Pointwise and broadcast arithmetic
    // ------------------------------------------------------------------

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor<T> out = val(a);
        map(out) += cmap(val(b));
        return push(std::move(out), needs(a) || needs(b), {a, b}, [this, a, b](Node& n) {
            if (needs(a)) map(gref(a)) += cmap(n.grad);
            if (needs(b)) map(gref(b)) += cmap(n.grad);
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor<T> out = val(a);
        map(out) -= cmap(val(b));
        return push(std::move(out), needs(a) || needs(b), {a, b}, [this, a, b](Node& n) {
            if (needs(a)) map(gref(a)) += cmap(n.grad);
            if (needs(b)) map(gref(b)) -= cmap(n.grad);
        });
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor<T> out = val(a);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= val(b).v[i];
        return push(std::move(out), needs(a) || needs(b), {a, b}, [this, a, b](Node& n) {
            if (needs(a))
                for (size_t i = 0; i < n.grad.v.size(); ++i) gref(a).v[i] += n.grad.v[i] * val(b).v[i];
            if (needs(b))
                for (size_t i = 0; i < n.grad.v.size(); ++i) gref(b).v[i] += n.grad.v[i] * val(a).v[i];
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x *= c;
        return push(std::move(out), needs(a), {a}, [this, a, c](Node& n) {
            if (needs(a))
                for (size_t i = 0; i < n.grad.v.size(); ++i) gref(a).v[i] += n.grad.v[i] * c;
        });
    }

    // a: [m,n], b: [1,n] broadcast over rows
    Var add_rowvec(Var a, Var b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (B.rows() != 1 || B.cols() != A.cols()) throw std::invalid_argument("add_rowvec: shape");
        Tensor<T> out = A;
        map(out).rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(B.v.data(), B.cols());
        return push(std::move(out), needs(a) || needs(b), {a, b}, [this, a, b](Node& n) {
            if (needs(a)) map(gref(a)) += cmap(n.grad);
            if (needs(b))
                Eigen::Map<Eigen::RowVectorX<T>>(gref(b).v.data(), gref(b).cols()) +=
                    cmap(n.grad).colwise().sum();
        });
    }

    // a: [m,n], c: [m,1] scales each row
    Var mul_colvec(Var a, Var c) {
        const Tensor<T>&A = val(a), &C = val(c);
        if (C.cols() != 1 || C.rows() != A.rows()) throw std::invalid_argument("mul_colvec: shape");
        Tensor<T> out = A;
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j) out.at(i, j) *= C.v[static_cast<size_t>(i)];
        return push(std::move(out), needs(a) || needs(c), {a, c}, [this, a, c](Node& n) {
            const Tensor<T>&A = val(a), &C = val(c);
            if (needs(a))
                for (int i = 0; i < A.rows(); ++i)
                    for (int j = 0; j < A.cols(); ++j)
                        gref(a).at(i, j) += n.grad.at(i, j) * C.v[static_cast<size_t>(i)];
            if (needs(c))
                for (int i = 0; i < A.rows(); ++i) {
                    T acc = 0;
                    for (int j = 0; j < A.cols(); ++j) acc += n.grad.at(i, j) * A.at(i, j);
                    gref(c).v[static_cast<size_t>(i)] += acc;
                }
        });
    }

    // ------------------------------------------------------------------
    // Nonlinearities
    // ------------------------------------------------------------------

    Var tanh_(Var a) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x = std::tanh(x);
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (size_t i = 0; i < n.grad.v.size(); ++i)
                gref(a).v[i] += n.grad.v[i] * (T(1) - n.value.v[i] * n.value.v[i]);
        });
    }

    Var relu_(Var a) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x = x > T(0) ? x : T(0);
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (size_t i = 0; i < n.grad.v.size(); ++i)
                if (n.value.v[i] > T(0)) gref(a).v[i] += n.grad.v[i];
        });
    }

    Var sigmoid_(Var a) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x = T(1) / (T(1) + std::exp(-x));
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (size_t i = 0; i < n.grad.v.size(); ++i)
                gref(a).v[i] += n.grad.v[i] * n.value.v[i] * (T(1) - n.value.v[i]);
        });
    }

    // ------------------------------------------------------------------
    // Softmax, layer norm, pooling
    // ------------------------------------------------------------------

    // Row-wise softmax over the columns where mask != 0; masked outputs are 0.
    // mask size must equal cols (shared by all rows).
    Var softmax_rows(Var a, const std::vector<T>& mask) {
        const Tensor<T>& A = val(a);
        if (static_cast<int>(mask.size()) != A.cols()) throw std::invalid_argument("softmax_rows: mask size");
        if (std::all_of(mask.begin(), mask.end(), [](T m) { return m == T(0); }))
            throw std::invalid_argument("softmax_rows: fully masked");
        Tensor<T> out(A.rows(), A.cols());
        for (int i = 0; i < A.rows(); ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < A.cols(); ++j)
                if (mask[static_cast<size_t>(j)] != T(0)) mx = std::max(mx, A.at(i, j));
            T denom = 0;
            for (int j = 0; j < A.cols(); ++j)
                if (mask[static_cast<size_t>(j)] != T(0)) denom += std::exp(A.at(i, j) - mx);
            for (int j = 0; j < A.cols(); ++j)
                out.at(i, j) = mask[static_cast<size_t>(j)] != T(0) ? std::exp(A.at(i, j) - mx) / denom : T(0);
        }
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            const Tensor<T>& p = n.value;
            for (int i = 0; i < p.rows(); ++i) {
                T dot = 0;
                for (int j = 0; j < p.cols(); ++j) dot += n.grad.at(i, j) * p.at(i, j);
                for (int j = 0; j < p.cols(); ++j)
                    gref(a).at(i, j) += p.at(i, j) * (n.grad.at(i, j) - dot);
            }
        });
    }

    // Lower-triangular softmax for causal decoding: row i attends to j <= i.
    Var causal_softmax(Var a) {
        const Tensor<T>& A = val(a);
        if (A.rows() != A.cols()) throw std::invalid_argument("causal_softmax: square scores expected");
        Tensor<T> out(A.rows(), A.cols());
        for (int i = 0; i < A.rows(); ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j <= i; ++j) mx = std::max(mx, A.at(i, j));
            T denom = 0;
            for (int j = 0; j <= i; ++j) denom += std::exp(A.at(i, j) - mx);
            for (int j = 0; j <= i; ++j) out.at(i, j) = std::exp(A.at(i, j) - mx) / denom;
        }
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            const Tensor<T>& p = n.value;
            for (int i = 0; i < p.rows(); ++i) {
                T dot = 0;
                for (int j = 0; j <= i; ++j) dot += n.grad.at(i, j) * p.at(i, j);
                for (int j = 0; j <= i; ++j) gref(a).at(i, j) += p.at(i, j) * (n.grad.at(i, j) - dot);
            }
        });
    }

    // Per-row layer normalization with learned gain/bias (both [1,n]).
    Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
        const Tensor<T>& X = val(x);
        const int n = X.cols();
        if (val(gain).cols() != n || val(bias).cols() != n) throw std::invalid_argument("layer_norm: shape");
        Tensor<T> out(X.rows(), n);
        for (int i = 0; i < X.rows(); ++i) {
            T mu = 0;
            for (int j = 0; j < n; ++j) mu += X.at(i, j);
            mu /= static_cast<T>(n);
            T var = 0;
            for (int j = 0; j < n; ++j) var += (X.at(i, j) - mu) * (X.at(i, j) - mu);
            var /= static_cast<T>(n);
            T inv = T(1) / std::sqrt(var + eps);
            for (int j = 0; j < n; ++j)
                out.at(i, j) = (X.at(i, j) - mu) * inv * val(gain).v[static_cast<size_t>(j)] +
                               val(bias).v[static_cast<size_t>(j)];
        }
        return push(std::move(out), needs(x) || needs(gain) || needs(bias), {x, gain, bias},
                    [this, x, gain, bias, eps](Node& n) {
            const Tensor<T>& X = val(x);
            const int c = X.cols();
            for (int i = 0; i < X.rows(); ++i) {
                T mu = 0;
                for (int j = 0; j < c; ++j) mu += X.at(i, j);
                mu /= static_cast<T>(c);
                T var = 0;
                for (int j = 0; j < c; ++j) var += (X.at(i, j) - mu) * (X.at(i, j) - mu);
                var /= static_cast<T>(c);
                T inv = T(1) / std::sqrt(var + eps);
                // dy w.r.t. normalized value
                T mean_dg = 0, mean_dgx = 0;
                std::vector<T> dg(static_cast<size_t>(c)), xhat(static_cast<size_t>(c));
                for (int j = 0; j < c; ++j) {
                    xhat[static_cast<size_t>(j)] = (X.at(i, j) - mu) * inv;
                    dg[static_cast<size_t>(j)] = n.grad.at(i, j) * val(gain).v[static_cast<size_t>(j)];
                    mean_dg += dg[static_cast<size_t>(j)];
                    mean_dgx += dg[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
                }
                mean_dg /= static_cast<T>(c);
                mean_dgx /= static_cast<T>(c);
                if (needs(x))
                    for (int j = 0; j < c; ++j)
                        gref(x).at(i, j) += inv * (dg[static_cast<size_t>(j)] - mean_dg -
                                                   xhat[static_cast<size_t>(j)] * mean_dgx);
                if (needs(gain))
                    for (int j = 0; j < c; ++j)
                        gref(gain).v[static_cast<size_t>(j)] += n.grad.at(i, j) * xhat[static_cast<size_t>(j)];
                if (needs(bias))
                    for (int j = 0; j < c; ++j) gref(bias).v[static_cast<size_t>(j)] += n.grad.at(i, j);
            }
        });
    }

    // Mean of the rows where mask != 0; x: [L,H], mask length L -> [1,H].
    Var masked_mean_rows(Var x, const std::vector<T>& mask) {
        const Tensor<T>& X = val(x);
        if (static_cast<int>(mask.size()) != X.rows()) throw std::invalid_argument("masked_mean_rows: mask size");
        T count = 0;
        for (T m : mask) count += (m != T(0)) ? T(1) : T(0);
        if (count == T(0)) throw std::invalid_argument("masked_mean_rows: all-zero mask");
        Tensor<T> out(1, X.cols());
        for (int i = 0; i < X.rows(); ++i)
            if (mask[static_cast<size_t>(i)] != T(0))
                for (int j = 0; j < X.cols(); ++j) out.v[static_cast<size_t>(j)] += X.at(i, j);
        for (auto& v : out.v) v /= count;
        return push(std::move(out), needs(x), {x}, [this, x, mask, count](Node& n) {
            if (!needs(x)) return;
            const int c = val(x).cols();
            for (int i = 0; i < val(x).rows(); ++i)
                if (mask[static_cast<size_t>(i)] != T(0))
                    for (int j = 0; j < c; ++j)
                        gref(x).at(i, j) += n.grad.v[static_cast<size_t>(j)] / count;
        });
    }

    // Zeroes the rows where mask == 0 (keeps padded positions inert).
    Var mask_rows(Var x, const std::vector<T>& mask) {
        const Tensor<T>& X = val(x);
        if (static_cast<int>(mask.size()) != X.rows()) throw std::invalid_argument("mask_rows: mask size");
        Tensor<T> out = X;
        for (int i = 0; i < X.rows(); ++i)
            if (mask[static_cast<size_t>(i)] == T(0))
                for (int j = 0; j < X.cols(); ++j) out.at(i, j) = T(0);
        return push(std::move(out), needs(x), {x}, [this, x, mask](Node& n) {
            if (!needs(x)) return;
            for (int i = 0; i < n.grad.rows(); ++i)
                if (mask[static_cast<size_t>(i)] != T(0))
                    for (int j = 0; j < n.grad.cols(); ++j) gref(x).at(i, j) += n.grad.at(i, j);
        });
    }

    Var row_sums(Var a) {  // [m,n] -> [m,1]
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.rows(), 1);
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j) out.v[static_cast<size_t>(i)] += A.at(i, j);
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (int i = 0; i < val(a).rows(); ++i)
                for (int j = 0; j < val(a).cols(); ++j)
                    gref(a).at(i, j) += n.grad.v[static_cast<size_t>(i)];
        });
    }

    Var sum_all(Var a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(1, 1);
        for (T x : A.v) out.v[0] += x;
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (auto& g : gref(a).v) g += n.grad.v[0];
        });
    }

    Var mean_all(Var a) { return scale(sum_all(a), T(1) / static_cast<T>(val(a).numel())); }

    // ------------------------------------------------------------------
    // Shape ops
    // ------------------------------------------------------------------

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        int c = val(parts[0]).cols(), r = 0;
        bool ng = false;
        for (Var p : parts) {
            if (val(p).cols() != c) throw std::invalid_argument("concat_rows: col mismatch");
            r += val(p).rows();
            ng = ng || needs(p);
        }
        Tensor<T> out(r, c);
        int at = 0;
        for (Var p : parts) {
            std::copy(val(p).v.begin(), val(p).v.end(), out.v.begin() + static_cast<size_t>(at) * c);
            at += val(p).rows();
        }
        return push(std::move(out), ng, parts, [this, parts](Node& n) {
            int at = 0;
            const int c = n.value.cols();
            for (Var p : parts) {
                if (needs(p))
                    for (int i = 0; i < val(p).rows(); ++i)
                        for (int j = 0; j < c; ++j) gref(p).at(i, j) += n.grad.at(at + i, j);
                at += val(p).rows();
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        int r = val(parts[0]).rows(), c = 0;
        bool ng = false;
        for (Var p : parts) {
            if (val(p).rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
            c += val(p).cols();
            ng = ng || needs(p);
        }
        Tensor<T> out(r, c);
        int at = 0;
        for (Var p : parts) {
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < val(p).cols(); ++j) out.at(i, at + j) = val(p).at(i, j);
            at += val(p).cols();
        }
        return push(std::move(out), ng, parts, [this, parts](Node& n) {
            int at = 0;
            for (Var p : parts) {
                if (needs(p))
                    for (int i = 0; i < val(p).rows(); ++i)
                        for (int j = 0; j < val(p).cols(); ++j) gref(p).at(i, j) += n.grad.at(i, at + j);
                at += val(p).cols();
            }
        });
    }

    Var slice_rows(Var a, int r0, int r1) {
        const Tensor<T>& A = val(a);
        if (r0 < 0 || r1 > A.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: range");
        Tensor<T> out(r1 - r0, A.cols());
        std::copy(A.v.begin() + static_cast<size_t>(r0) * A.cols(),
                  A.v.begin() + static_cast<size_t>(r1) * A.cols(), out.v.begin());
        return push(std::move(out), needs(a), {a}, [this, a, r0](Node& n) {
            if (!needs(a)) return;
            for (int i = 0; i < n.grad.rows(); ++i)
                for (int j = 0; j < n.grad.cols(); ++j) gref(a).at(r0 + i, j) += n.grad.at(i, j);
        });
    }

    Var slice_cols(Var a, int c0, int c1) {
        const Tensor<T>& A = val(a);
        if (c0 < 0 || c1 > A.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: range");
        Tensor<T> out(A.rows(), c1 - c0);
        for (int i = 0; i < A.rows(); ++i)
            for (int j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
        return push(std::move(out), needs(a), {a}, [this, a, c0](Node& n) {
            if (!needs(a)) return;
            for (int i = 0; i < n.grad.rows(); ++i)
                for (int j = 0; j < n.grad.cols(); ++j) gref(a).at(i, c0 + j) += n.grad.at(i, j);
        });
    }

    Var reshape(Var a, int r, int c) {
        const Tensor<T>& A = val(a);
        if (static_cast<int64_t>(r) * c != A.numel()) throw std::invalid_argument("reshape: element count");
        Tensor<T> out;
        out.shape = {r, c};
        out.v = A.v;
        return push(std::move(out), needs(a), {a}, [this, a](Node& n) {
            if (!needs(a)) return;
            for (size_t i = 0; i < n.grad.v.size(); ++i) gref(a).v[i] += n.grad.v[i];
        });
    }

    // Row gather from an embedding table: out[k] = table[ids[k]].
    Var embedding(Var table, const std::vector<int>& ids) {
        const Tensor<T>& E = val(table);
        Tensor<T> out(static_cast<int>(ids.size()), E.cols());
        for (size_t k = 0; k < ids.size(); ++k) {
            if (ids[k] < 0 || ids[k] >= E.rows()) throw std::invalid_argument("embedding: id out of range");
            for (int j = 0; j < E.cols(); ++j) out.at(static_cast<int>(k), j) = E.at(ids[k], j);
        }
        return push(std::move(out), needs(table), {table}, [this, table, ids](Node& n) {
            if (!needs(table)) return;
            for (size_t k = 0; k < ids.size(); ++k)
                for (int j = 0; j < n.grad.cols(); ++j)
                    gref(table).at(ids[k], j) += n.grad.at(static_cast<int>(k), j);
        });
    }

    // im2col gather for 1-D "same" convolution with kernel K over [L,C] input.
    Var im2col(Var x, int kernel) {
        const Tensor<T>& X = val(x);
        const int L = X.rows(), C = X.cols(), half = kernel / 2;
        Tensor<T> out(L, C * kernel);
        for (int i = 0; i < L; ++i)
            for (int k = 0; k < kernel; ++k) {
                int src = i + k - half;
                if (src < 0 || src >= L) continue;
                for (int j = 0; j < C; ++j) out.at(i, k * C + j) = X.at(src, j);
            }
        return push(std::move(out), needs(x), {x}, [this, x, kernel](Node& n) {
            if (!needs(x)) return;
            const int L = val(x).rows(), C = val(x).cols(), half = kernel / 2;
            for (int i = 0; i < L; ++i)
                for (int k = 0; k < kernel; ++k) {
                    int src = i + k - half;
                    if (src < 0 || src >= L) continue;
                    for (int j = 0; j < C; ++j) gref(x).at(src, j) += n.grad.at(i, k * C + j);
                }
        });
    }

    // ------------------------------------------------------------------
    // Fused losses (numerically stable forms)
    // ------------------------------------------------------------------

    // -log softmax(z)[target] for a [1,n] logit row.
    Var cross_entropy_logits(Var z, int target) {
        const Tensor<T>& Z = val(z);
        if (Z.rows() != 1) throw std::invalid_argument("cross_entropy_logits: expects a row");
        if (target < 0 || target >= Z.cols()) throw std::invalid_argument("cross_entropy_logits: target");
        T mx = *std::max_element(Z.v.begin(), Z.v.end());
        T lse = 0;
        for (T x : Z.v) lse += std::exp(x - mx);
        lse = std::log(lse) + mx;
        Tensor<T> out(1, 1);
        out.v[0] = lse - Z.v[static_cast<size_t>(target)];
        return push(std::move(out), needs(z), {z}, [this, z, target](Node& n) {
            if (!needs(z)) return;
            const Tensor<T>& Z = val(z);
            T mx = *std::max_element(Z.v.begin(), Z.v.end());
            T denom = 0;
            for (T x : Z.v) denom += std::exp(x - mx);
            for (int j = 0; j < Z.cols(); ++j) {
                T p = std::exp(Z.v[static_cast<size_t>(j)] - mx) / denom;
                gref(z).v[static_cast<size_t>(j)] += n.grad.v[0] * (p - (j == target ? T(1) : T(0)));
            }
        });
    }

    // Binary cross entropy on a scalar logit.
    Var bce_with_logits(Var z, T label) {
        const Tensor<T>& Z = val(z);
        if (!Z.is_scalar()) throw std::invalid_argument("bce_with_logits: expects a scalar");
        T x = Z.v[0];
        Tensor<T> out(1, 1);
        out.v[0] = std::max(x, T(0)) - x * label + std::log1p(std::exp(-std::abs(x)));
        return push(std::move(out), needs(z), {z}, [this, z, label](Node& n) {
            if (!needs(z)) return;
            T x = val(z).v[0];
            T s = T(1) / (T(1) + std::exp(-x));
            gref(z).v[0] += n.grad.v[0] * (s - label);
        });
    }

    // Smooth-L1 (Huber) loss of a scalar prediction against a constant target.
    Var huber(Var pred, T target, T delta = T(1)) {
        const Tensor<T>& P = val(pred);
        if (!P.is_scalar()) throw std::invalid_argument("huber: expects a scalar");
        T d = P.v[0] - target;
        Tensor<T> out(1, 1);
        out.v[0] = std::abs(d) <= delta ? T(0.5) * d * d : delta * (std::abs(d) - T(0.5) * delta);
        return push(std::move(out), needs(pred), {pred}, [this, pred, target, delta](Node& n) {
            if (!needs(pred)) return;
            T d = val(pred).v[0] - target;
            T g = std::abs(d) <= delta ? d : (d > T(0) ? delta : -delta);
            gref(pred).v[0] += n.grad.v[0] * g;
        });
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    void backward(Var root) {
        Node& r = nodes_[static_cast<size_t>(root)];
        if (!r.value.is_scalar()) throw std::invalid_argument("backward: root must be scalar");
        for (auto& n : nodes_)
            if (n.needs_grad && n.grad.v.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        if (!r.needs_grad) return;  // constant graph
        r.grad.v[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back) n.back(n);
        }
        for (auto& [p, v] : bound_) {
            const Tensor<T>& g = nodes_[static_cast<size_t>(v)].grad;
            if (g.v.empty()) continue;
            for (size_t i = 0; i < g.v.size(); ++i) p->grad.v[i] += g.v[i];
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::function<void(Node&)> back;
    };

    bool needs(Var v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }

    Tensor<T>& gref(Var v) {
        Node& n = nodes_[static_cast<size_t>(v)];
        if (n.grad.v.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void check_same(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + val(a).shape_str() +
                                        " vs " + val(b).shape_str());
    }

    Var push(Tensor<T> value, bool needs_grad, std::vector<Var> parents,
             std::function<void(Node&)> back = {}) {
        (void)parents;
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    Map map(Tensor<T>& t) { return Map(t.v.data(), t.rows(), t.cols()); }
    CMap cmap(const Tensor<T>& t) const { return CMap(t.v.data(), t.rows(), t.cols()); }

    std::vector<Node> nodes_;
    std::map<Parameter<T>*, Var> param_vars_;
    std::vector<std::pair<Parameter<T>*, Var>> bound_;
};

}  // namespace gata::nn
