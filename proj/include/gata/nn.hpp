#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/tape.hpp"

namespace gata::nn {

// ============================================================================
// Composite layers
// ============================================================================

template <class T>
struct Linear {
    Parameter<T> W, b;

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng)
        : W(name + ".W", init_uniform<T>(in, out, rng)), b(name + ".b", Tensor<T>(1, out)) {}

    typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x) {
        return t.add_rowvec(t.matmul(x, t.param(W)), t.param(b));
    }
    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&W);
        out.push_back(&b);
    }
};

template <class T>
struct GruCell {
    Parameter<T> Wr, Ur, br, Wz, Uz, bz, Wn, Un, bn;

    GruCell() = default;
    GruCell(const std::string& name, int in, int hidden, Rng& rng)
        : Wr(name + ".Wr", init_uniform<T>(in, hidden, rng)),
          Ur(name + ".Ur", init_uniform<T>(hidden, hidden, rng)),
          br(name + ".br", Tensor<T>(1, hidden)),
          Wz(name + ".Wz", init_uniform<T>(in, hidden, rng)),
          Uz(name + ".Uz", init_uniform<T>(hidden, hidden, rng)),
          bz(name + ".bz", Tensor<T>(1, hidden)),
          Wn(name + ".Wn", init_uniform<T>(in, hidden, rng)),
          Un(name + ".Un", init_uniform<T>(hidden, hidden, rng)),
          bn(name + ".bn", Tensor<T>(1, hidden)) {}

    // x: [1,in], h: [1,hidden] -> [1,hidden]
    typename Tape<T>::Var step(Tape<T>& t, typename Tape<T>::Var x, typename Tape<T>::Var h) {
        using V = typename Tape<T>::Var;
        V r = t.sigmoid_(t.add_rowvec(t.add(t.matmul(x, t.param(Wr)), t.matmul(h, t.param(Ur))), t.param(br)));
        V z = t.sigmoid_(t.add_rowvec(t.add(t.matmul(x, t.param(Wz)), t.matmul(h, t.param(Uz))), t.param(bz)));
        V n = t.tanh_(t.add_rowvec(t.add(t.matmul(x, t.param(Wn)), t.mul(r, t.matmul(h, t.param(Un)))),
                                   t.param(bn)));
        // h' = z (.) h + (1 - z) (.) n
        V zh = t.mul(z, h);
        V one_minus_z = t.sub(t.leaf(Tensor<T>::full(1, val_cols(t, z), T(1))), z);
        return t.add(zh, t.mul(one_minus_z, n));
    }
    void collect(std::vector<Parameter<T>*>& out) {
        for (auto* p : {&Wr, &Ur, &br, &Wz, &Uz, &bz, &Wn, &Un, &bn}) out.push_back(p);
    }

private:
    static int val_cols(Tape<T>& t, typename Tape<T>::Var v) { return t.val(v).cols(); }
};

// Scaled dot-product attention with a key mask; q [Lq,H], k/v [Lk,H].
template <class T>
typename Tape<T>::Var attention(Tape<T>& t, typename Tape<T>::Var q, typename Tape<T>::Var k,
                                typename Tape<T>::Var v, const std::vector<T>& key_mask) {
    const int h = t.val(q).cols();
    auto scores = t.scale(t.matmul(q, t.transpose(k)), T(1) / std::sqrt(static_cast<T>(h)));
    return t.matmul(t.softmax_rows(scores, key_mask), v);
}

// 1-D "same" convolution over [L,Cin]; weight [Cin*K, Cout].
template <class T>
struct Conv1d {
    Parameter<T> W, b;
    int kernel = 5;

    Conv1d() = default;
    Conv1d(const std::string& name, int in, int out, int k, Rng& rng)
        : W(name + ".W", init_uniform<T>(in * k, out, rng)), b(name + ".b", Tensor<T>(1, out)), kernel(k) {}

    typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x) {
        return t.add_rowvec(t.matmul(t.im2col(x, kernel), t.param(W)), t.param(b));
    }
    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&W);
        out.push_back(&b);
    }
};

// Fixed sinusoidal positional encodings, masked rows zeroed.
template <class T>
Tensor<T> positional_encoding(int length, int dim, const std::vector<T>* mask = nullptr) {
    Tensor<T> pe(length, dim);
    for (int pos = 0; pos < length; ++pos) {
        if (mask && (*mask)[static_cast<size_t>(pos)] == T(0)) continue;
        for (int i = 0; i < dim; ++i) {
            double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / dim);
            pe.at(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

// ============================================================================
// Optimizers: RAdam (training default) and plain Adam (probe)
// ============================================================================

template <class T>
struct OptimConfig {
    T lr = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T clip_norm = T(5);  // <= 0 disables global-norm clipping
    bool rectified = true;
};

template <class T>
class Optimizer {
public:
    explicit Optimizer(OptimConfig<T> cfg = {}) : cfg_(cfg) {}

    const OptimConfig<T>& config() const { return cfg_; }
    int64_t steps_taken() const { return t_; }

    // Consumes the accumulated gradients (clip -> moment update) and zeroes
    // them afterwards. Optimizer state persists across calls.
    void step(const std::vector<Parameter<T>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->value.rows(), p->value.cols());
                v_.emplace_back(p->value.rows(), p->value.cols());
            }
        }
        if (m_.size() != params.size()) throw std::invalid_argument("Optimizer: parameter set changed");

        T scale = T(1);
        if (cfg_.clip_norm > T(0)) {
            double sq = 0;
            for (auto* p : params) {
                if (!p->trainable) continue;
                for (T g : p->grad.v) sq += static_cast<double>(g) * static_cast<double>(g);
            }
            double norm = std::sqrt(sq);
            if (norm > static_cast<double>(cfg_.clip_norm)) scale = static_cast<T>(cfg_.clip_norm / norm);
        }

        ++t_;
        const T b1t = std::pow(cfg_.beta1, static_cast<T>(t_));
        const T b2t = std::pow(cfg_.beta2, static_cast<T>(t_));
        const T rho_inf = T(2) / (T(1) - cfg_.beta2) - T(1);
        const T rho_t = rho_inf - T(2) * static_cast<T>(t_) * b2t / (T(1) - b2t);

        for (size_t i = 0; i < params.size(); ++i) {
            Parameter<T>& p = *params[i];
            if (!p.trainable) {
                p.zero_grad();
                continue;
            }
            for (size_t j = 0; j < p.value.v.size(); ++j) {
                T g = p.grad.v[j] * scale;
                m_[i].v[j] = cfg_.beta1 * m_[i].v[j] + (T(1) - cfg_.beta1) * g;
                v_[i].v[j] = cfg_.beta2 * v_[i].v[j] + (T(1) - cfg_.beta2) * g * g;
                T mhat = m_[i].v[j] / (T(1) - b1t);
                if (!cfg_.rectified) {
                    T vhat = std::sqrt(v_[i].v[j] / (T(1) - b2t));
                    p.value.v[j] -= cfg_.lr * mhat / (vhat + cfg_.eps);
                } else if (rho_t > T(4)) {
                    T vhat = std::sqrt(v_[i].v[j] / (T(1) - b2t));
                    T r = std::sqrt(((rho_t - T(4)) * (rho_t - T(2)) * rho_inf) /
                                    ((rho_inf - T(4)) * (rho_inf - T(2)) * rho_t));
                    p.value.v[j] -= cfg_.lr * r * mhat / (vhat + cfg_.eps);
                } else {
                    p.value.v[j] -= cfg_.lr * mhat;  // variance not yet tractable
                }
            }
            p.zero_grad();
        }
    }

private:
    OptimConfig<T> cfg_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

// Convenience: RAdam with the training defaults (lr 0.001, grad clip 5).
template <class T>
Optimizer<T> make_radam(T lr = T(0.001)) {
    OptimConfig<T> cfg;
    cfg.lr = lr;
    return Optimizer<T>(cfg);
}

// ============================================================================
// Finite-difference gradient verification (64-bit only)
// ============================================================================

// build: (Tape<double>&, Var leaf) -> scalar Var. Returns the max relative
// error between reverse-mode and central-difference gradients, where
// rel(a, b) = |a - b| / max(1, |a|, |b|).
template <class F>
double grad_check(F&& build, Tensor<double> x, double eps = 1e-5) {
    Tensor<double> analytic;
    {
        Tape<double> t;
        auto xv = t.leaf(x, true);
        auto y = build(t, xv);
        if (!t.val(y).is_scalar()) throw std::invalid_argument("grad_check: f must be scalar-valued");
        t.backward(y);
        analytic = t.grad(xv);
    }
    auto eval = [&](const Tensor<double>& xt) {
        Tape<double> t;
        auto y = build(t, t.leaf(xt, false));
        return t.val(y).v[0];
    };
    double worst = 0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        const double orig = x.v[i];
        x.v[i] = orig + eps;
        double fp = eval(x);
        x.v[i] = orig - eps;
        double fm = eval(x);
        x.v[i] = orig;
        double num = (fp - fm) / (2 * eps);
        double ana = analytic.v[i];
        double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
        worst = std::max(worst, rel);
    }
    return worst;
}

// ============================================================================
// Checkpoint archive: versioned manifest + little-endian row-major payload
// ============================================================================

namespace detail {

inline void put_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
inline void put_u64(std::ostream& os, uint64_t x) { os.write(reinterpret_cast<const char*>(&x), 8); }
inline uint32_t get_u32(std::istream& is) {
    uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    return x;
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 8);
    return x;
}

}  // namespace detail

constexpr uint32_t kCheckpointMagic = 0x43544147;  // "GATC"
constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const std::string& role,
                     const std::vector<Parameter<T>*>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    using namespace detail;
    put_u32(os, kCheckpointMagic);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(role.size()));
    os.write(role.data(), static_cast<std::streamsize>(role.size()));
    put_u64(os, params.size());
    uint64_t offset = 0;
    for (const auto* p : params) {
        put_u32(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        os.put(static_cast<char>(sizeof(T)));
        put_u32(os, 2);
        put_u64(os, static_cast<uint64_t>(p->value.rows()));
        put_u64(os, static_cast<uint64_t>(p->value.cols()));
        put_u64(os, offset);
        offset += p->value.v.size() * sizeof(T);
    }
    for (const auto* p : params)
        os.write(reinterpret_cast<const char*>(p->value.v.data()),
                 static_cast<std::streamsize>(p->value.v.size() * sizeof(T)));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// Loads by name into the given parameter set; shapes and dtype must match.
// Returns the stored role tag.
template <class T>
std::string load_checkpoint(const std::string& path, const std::vector<Parameter<T>*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    using namespace detail;
    if (get_u32(is) != kCheckpointMagic) throw std::runtime_error("load_checkpoint: bad magic");
    if (get_u32(is) != kCheckpointVersion) throw std::runtime_error("load_checkpoint: bad version");
    std::string role(get_u32(is), '\0');
    is.read(role.data(), static_cast<std::streamsize>(role.size()));
    uint64_t count = get_u64(is);

    struct Entry {
        uint8_t dtype;
        int rows, cols;
        uint64_t offset;
    };
    std::map<std::string, Entry> entries;
    for (uint64_t i = 0; i < count; ++i) {
        std::string name(get_u32(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        Entry e;
        e.dtype = static_cast<uint8_t>(is.get());
        uint32_t ndim = get_u32(is);
        if (ndim != 2) throw std::runtime_error("load_checkpoint: unsupported rank");
        e.rows = static_cast<int>(get_u64(is));
        e.cols = static_cast<int>(get_u64(is));
        e.offset = get_u64(is);
        entries.emplace(std::move(name), e);
    }
    const std::streampos payload = is.tellg();
    for (auto* p : params) {
        auto it = entries.find(p->name);
        if (it == entries.end()) throw std::runtime_error("load_checkpoint: missing tensor " + p->name);
        const Entry& e = it->second;
        if (e.dtype != sizeof(T)) throw std::runtime_error("load_checkpoint: dtype mismatch for " + p->name);
        if (e.rows != p->value.rows() || e.cols != p->value.cols())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + p->name);
        is.seekg(payload + static_cast<std::streamoff>(e.offset));
        is.read(reinterpret_cast<char*>(p->value.v.data()),
                static_cast<std::streamsize>(p->value.v.size() * sizeof(T)));
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return role;
}

inline std::string checkpoint_role(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint_role: cannot open " + path);
    using namespace detail;
    if (get_u32(is) != kCheckpointMagic) throw std::runtime_error("checkpoint_role: bad magic");
    get_u32(is);
    std::string role(get_u32(is), '\0');
    is.read(role.data(), static_cast<std::streamsize>(role.size()));
    return role;
}

}  // namespace gata::nn
