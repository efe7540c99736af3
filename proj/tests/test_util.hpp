#pragma once

// Shared test-side harness: finite-difference checks against module
// parameters and tiny vocab fixtures.

#include <vector>

#include "gata/nn.hpp"
#include "gata/vocab.hpp"

namespace testutil {

using gata::nn::Parameter;
using gata::nn::Tape;
using gata::nn::Tensor;

// Central-difference check of d(loss)/d(p) where the loss is rebuilt by
// `fwd` on a fresh tape each evaluation. Mutates and restores p.value.
template <class Builder>
double grad_check_param(Builder&& fwd, Parameter<double>& p, double eps = 1e-5) {
    p.zero_grad();
    {
        Tape<double> t;
        auto y = fwd(t);
        t.backward(y);
    }
    Tensor<double> analytic = p.grad;
    p.zero_grad();

    auto eval = [&] {
        Tape<double> t;
        auto y = fwd(t);
        return t.val(y).v[0];
    };
    double worst = 0;
    for (size_t i = 0; i < p.value.v.size(); ++i) {
        const double orig = p.value.v[i];
        p.value.v[i] = orig + eps;
        double fp = eval();
        p.value.v[i] = orig - eps;
        double fm = eval();
        p.value.v[i] = orig;
        double num = (fp - fm) / (2 * eps);
        double ana = analytic.v[i];
        double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
        worst = std::max(worst, rel);
    }
    return worst;
}

inline const gata::Vocab& tiny_vocab() {
    static const gata::Vocab v({"alpha", "beta", "gamma", "delta", "epsilon", "zeta"},
                               gata::Vocab::cooking().relations());
    return v;
}

inline const gata::WordVocab& tiny_words() {
    static const gata::WordVocab w([] {
        std::vector<std::string> words = {"alpha", "beta",  "gamma", "delta",
                                          "epsilon", "zeta", "take",  "go"};
        for (const auto& r : tiny_vocab().relations()) words.push_back(r);
        return words;
    }());
    return w;
}

}  // namespace testutil
