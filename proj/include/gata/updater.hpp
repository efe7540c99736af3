#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/encoders.hpp"
#include "gata/jsonio.hpp"
#include "gata/kgraph.hpp"
#include "gata/worldgen.hpp"

namespace gata::upd {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;

// Scoped RNG for constructor expressions (modules take Rng by lvalue ref).
inline std::unique_ptr<Rng> make_rng(uint64_t seed) { return std::make_unique<Rng>(seed); }

// ============================================================================
// Transformer decoder shared by observation generation and command generation:
// causal self-attention, two cross-attention layers, 3-layer MLP, projection
// ============================================================================

template <class T>
struct SeqDecoder {
    enc::EncoderConfig<T> cfg;
    enc::WordEmbedding<T>* wemb = nullptr;
    nn::Linear<T> in_proj;
    nn::Linear<T> self_q, self_k, self_v, self_o;
    Parameter<T> self_ln_g, self_ln_b;
    nn::Linear<T> mem1_q, mem1_k, mem1_v;
    nn::Linear<T> mem2_q, mem2_k, mem2_v;
    nn::Linear<T> mlp1, mlp2, mlp3;
    Parameter<T> mlp_ln_g, mlp_ln_b;
    nn::Linear<T> vocab_proj;

    SeqDecoder() = default;
    SeqDecoder(const std::string& name, const enc::EncoderConfig<T>& c, int vocab_size,
               enc::WordEmbedding<T>* words, Rng& rng)
        : cfg(c), wemb(words), in_proj(name + ".in", c.word_dim, c.hidden, rng),
          self_q(name + ".sq", c.hidden, c.hidden, rng), self_k(name + ".sk", c.hidden, c.hidden, rng),
          self_v(name + ".sv", c.hidden, c.hidden, rng), self_o(name + ".so", c.hidden, c.hidden, rng),
          self_ln_g(name + ".sln.g", Tensor<T>::full(1, c.hidden, T(1))),
          self_ln_b(name + ".sln.b", Tensor<T>(1, c.hidden)),
          mem1_q(name + ".m1q", c.hidden, c.hidden, rng), mem1_k(name + ".m1k", c.hidden, c.hidden, rng),
          mem1_v(name + ".m1v", c.hidden, c.hidden, rng),
          mem2_q(name + ".m2q", c.hidden, c.hidden, rng), mem2_k(name + ".m2k", c.hidden, c.hidden, rng),
          mem2_v(name + ".m2v", c.hidden, c.hidden, rng),
          mlp1(name + ".mlp1", 2 * c.hidden, c.hidden, rng), mlp2(name + ".mlp2", c.hidden, c.hidden, rng),
          mlp3(name + ".mlp3", c.hidden, c.hidden, rng),
          mlp_ln_g(name + ".mln.g", Tensor<T>::full(1, c.hidden, T(1))),
          mlp_ln_b(name + ".mln.b", Tensor<T>(1, c.hidden)),
          vocab_proj(name + ".out", c.hidden, vocab_size, rng) {}

    // prefix_ids -> logits [L, |V|]; mem1/mem2 are (reps, mask) memories.
    typename Tape<T>::Var decode(Tape<T>& t, const std::vector<int>& prefix_ids,
                                 typename Tape<T>::Var mem1, const std::vector<T>& mask1,
                                 typename Tape<T>::Var mem2, const std::vector<T>& mask2) {
        using V = typename Tape<T>::Var;
        if (prefix_ids.empty()) throw std::invalid_argument("SeqDecoder: empty prefix");
        const int L = static_cast<int>(prefix_ids.size());
        auto x = wemb->rows(t, prefix_ids);
        x = t.add(x, t.leaf(nn::positional_encoding<T>(L, cfg.word_dim)));
        x = in_proj.apply(t, x);
        {
            auto scores = t.scale(t.matmul(self_q.apply(t, x), t.transpose(self_k.apply(t, x))),
                                  T(1) / std::sqrt(static_cast<T>(cfg.hidden)));
            auto y = self_o.apply(t, t.matmul(t.causal_softmax(scores), self_v.apply(t, x)));
            x = t.layer_norm(t.add(y, x), t.param(self_ln_g), t.param(self_ln_b));
        }
        V a1 = nn::attention(t, mem1_q.apply(t, x), mem1_k.apply(t, mem1), mem1_v.apply(t, mem1), mask1);
        V a2 = nn::attention(t, mem2_q.apply(t, x), mem2_k.apply(t, mem2), mem2_v.apply(t, mem2), mask2);
        auto y = mlp3.apply(t, t.relu_(mlp2.apply(t, t.relu_(mlp1.apply(t, t.concat_cols({a1, a2}))))));
        x = t.layer_norm(t.add(y, x), t.param(mlp_ln_g), t.param(mlp_ln_b));
        return vocab_proj.apply(t, x);
    }

    void collect(std::vector<Parameter<T>*>& out) {
        for (auto* l : {&in_proj, &self_q, &self_k, &self_v, &self_o, &mem1_q, &mem1_k, &mem1_v,
                        &mem2_q, &mem2_k, &mem2_v, &mlp1, &mlp2, &mlp3, &vocab_proj})
            l->collect(out);
        for (auto* p : {&self_ln_g, &self_ln_b, &mlp_ln_g, &mlp_ln_b}) out.push_back(p);
    }
};

// ============================================================================
// Continuous graph updater: Delta-aggregation, GRU memory, belief decoder
// ============================================================================

template <class T>
struct GraphUpdater {
    const Vocab* vocab = nullptr;
    const WordVocab* words = nullptr;
    enc::EncoderConfig<T> cfg;

    enc::WordEmbedding<T> wemb;
    enc::TextEncoder<T> tenc;
    enc::GraphEncoder<T> genc;
    enc::Aggregator<T> aggr;
    nn::GruCell<T> gru;
    nn::Linear<T> fd1, fd2;

    GraphUpdater() = default;
    GraphUpdater(const GraphUpdater&) = delete;
    GraphUpdater& operator=(const GraphUpdater&) = delete;
    GraphUpdater(const std::string& name, const enc::EncoderConfig<T>& c, const Vocab& voc,
                 const WordVocab& wv, Rng& rng)
        : vocab(&voc), words(&wv), cfg(c),
          wemb(name, wv, c.word_dim, rng),
          tenc(name + ".tenc", c, &wemb, rng),
          genc(name + ".genc", c, voc, wv, &wemb, rng),
          aggr(name + ".aggr", c.hidden, rng),
          gru(name + ".gru", 4 * c.hidden, c.hidden, rng),
          fd1(name + ".fd1", c.hidden, c.hidden, rng),
          fd2(name + ".fd2", c.hidden, voc.num_relations() * voc.num_entities() * voc.num_entities(), rng) {}

    // Delta g: masked means of the two aggregator output pairs, size [1, 4H].
    typename Tape<T>::Var f_delta(Tape<T>& t, typename Tape<T>::Var graph_reps,
                                  const enc::TextReps<T>& obs, const enc::TextReps<T>& act) {
        std::vector<T> node_mask(static_cast<size_t>(vocab->num_entities()), T(1));
        auto [h_og, h_go] = aggr.aggregate(t, obs.reps, obs.mask, graph_reps, node_mask);
        auto [h_ag, h_ga] = aggr.aggregate(t, act.reps, act.mask, graph_reps, node_mask);
        return t.concat_cols({t.masked_mean_rows(h_og, obs.mask), t.masked_mean_rows(h_go, node_mask),
                              t.masked_mean_rows(h_ag, act.mask), t.masked_mean_rows(h_ga, node_mask)});
    }

    struct StepVars {
        typename Tape<T>::Var h = -1;                 // [1,H]
        typename Tape<T>::Var half = -1;              // [1, R*N*N], tanh-bounded
        std::vector<typename Tape<T>::Var> belief;    // 2R channels [N,N]
        typename Tape<T>::Var delta = -1;             // [1,4H]
    };

    // One recurrent update on the tape. belief_prev holds the 2R channels of
    // the previous belief; gradients flow through them when they were built
    // in-tape (BPTT) and stop when they are constant leaves.
    StepVars update_step(Tape<T>& t, typename Tape<T>::Var h_prev,
                         const std::vector<typename Tape<T>::Var>& belief_prev,
                         const std::vector<int>& obs_ids, const std::vector<int>& act_ids) {
        StepVars out;
        auto graph_reps = genc.encode(t, belief_prev);
        auto obs = tenc.encode(t, obs_ids);
        auto act = tenc.encode(t, act_ids);
        out.delta = f_delta(t, graph_reps, obs, act);
        out.h = gru.step(t, out.delta, h_prev);
        out.half = t.tanh_(fd2.apply(t, t.relu_(fd1.apply(t, out.h))));
        out.belief = split_half(t, out.half);
        return out;
    }

    // Splits the flat half tensor into R base channels plus R transposes.
    std::vector<typename Tape<T>::Var> split_half(Tape<T>& t, typename Tape<T>::Var half) {
        const int n = vocab->num_entities(), r = vocab->num_relations();
        std::vector<typename Tape<T>::Var> channels;
        channels.reserve(static_cast<size_t>(2 * r));
        for (int c = 0; c < r; ++c)
            channels.push_back(t.reshape(t.slice_cols(half, c * n * n, (c + 1) * n * n), n, n));
        for (int c = 0; c < r; ++c) channels.push_back(t.transpose(channels[static_cast<size_t>(c)]));
        return channels;
    }

    // --------------------------------------------------------------------
    // Play-time state (no gradients)
    // --------------------------------------------------------------------

    struct State {
        Tensor<T> h;
        kg::BeliefGraph belief;
    };

    kg::BeliefGraph belief_from_h(const Tensor<T>& h) {
        Tape<T> t;
        auto half = t.tanh_(fd2.apply(t, t.relu_(fd1.apply(t, t.leaf(h)))));
        const auto& half_vals = t.val(half).v;
        std::vector<double> h2(half_vals.begin(), half_vals.end());
        return kg::from_half_tensor(h2, vocab->num_relations(), vocab->num_entities());
    }

    State initial_state() {
        Tensor<T> h0(1, cfg.hidden);
        return {h0, belief_from_h(h0)};
    }

    State update_belief(const State& prev, const std::vector<std::string>& obs_tokens,
                        const std::vector<std::string>& act_tokens) {
        Tape<T> t;
        auto channels = genc.adjacency_leaves(t, prev.belief);
        auto sv = update_step(t, t.leaf(prev.h), channels, words->encode(obs_tokens),
                              words->encode(act_tokens));
        State next;
        next.h = t.val(sv.h);
        const auto& half_vals = t.val(sv.half).v;
        std::vector<double> h2(half_vals.begin(), half_vals.end());
        next.belief = kg::from_half_tensor(h2, vocab->num_relations(), vocab->num_entities());
        return next;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        wemb.collect(out);
        tenc.collect(out);
        genc.collect(out);
        aggr.collect(out);
        gru.collect(out);
        fd1.collect(out);
        fd2.collect(out);
    }
};

// Pooled bilinear discriminator: logit = a B b^T on [1,H] inputs.
template <class T>
struct BilinearDiscriminator {
    Parameter<T> B;

    BilinearDiscriminator() = default;
    BilinearDiscriminator(const std::string& name, int hidden, Rng& rng)
        : B(name + ".B", nn::init_uniform<T>(hidden, hidden, rng)) {}

    typename Tape<T>::Var logit(Tape<T>& t, typename Tape<T>::Var a, typename Tape<T>::Var b) {
        return t.matmul(t.matmul(a, t.param(B)), t.transpose(b));
    }
    void collect(std::vector<Parameter<T>*>& out) { out.push_back(&B); }
};

// ============================================================================
// Pretraining corpora plumbing
// ============================================================================

// (O_t, A_{t-1}) pairs in episode order; the reset observation enters as a
// pseudo-step with action "restart" so play-time and training distributions
// match.
struct UpdateStep {
    std::vector<std::string> obs;
    std::vector<std::string> action;
    kg::DiscreteGraph gseen_prev;  // for CG targets
    kg::DiscreteGraph gseen;
};

inline std::vector<std::vector<UpdateStep>> to_update_episodes(
    const std::vector<std::vector<world::TransitionRecord>>& episodes, const Vocab& vocab) {
    std::vector<std::vector<UpdateStep>> out;
    for (const auto& ep : episodes) {
        if (ep.empty()) continue;
        std::vector<UpdateStep> steps;
        steps.push_back({ep.front().obs_prev.tokens, {"restart"}, kg::DiscreteGraph(&vocab),
                         ep.front().gseen_prev});
        for (const auto& r : ep) steps.push_back({r.obs.tokens, r.action, r.gseen_prev, r.gseen});
        out.push_back(std::move(steps));
    }
    return out;
}

struct PretrainConfig {
    int epochs = 10;
    int unroll = 5;  // truncated BPTT window
    double lr = 0.001;
    double valid_fraction = 0.1;
    uint64_t seed = 1;
    int max_decode_len = 200;
};

struct PretrainMetrics {
    std::vector<double> epoch_train_loss;
    double valid_loss = 0;       // per-token NLL for OG/CG, mean BCE for COC
    double valid_metric = 0;     // token F1 (OG), accuracy (COC/AP/SP/DGI)
    double baseline = 0;         // task-specific reference (e.g. uniform NLL)
};

namespace detail {

template <class T>
std::vector<T> token_mask(size_t n) {
    return std::vector<T>(n, T(1));
}

inline std::pair<size_t, size_t> split_point(size_t n, double valid_fraction) {
    size_t valid = static_cast<size_t>(n * valid_fraction + 0.5);
    if (valid == 0 && n > 1) valid = 1;
    return {n - valid, valid};
}

inline double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
    if (pred.empty() && ref.empty()) return 1.0;
    std::map<std::string, int> counts;
    for (const auto& tok : ref) counts[tok]++;
    int overlap = 0;
    for (const auto& tok : pred) {
        auto it = counts.find(tok);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (pred.empty() || ref.empty() || overlap == 0) return 0.0;
    double precision = static_cast<double>(overlap) / pred.size();
    double recall = static_cast<double>(overlap) / ref.size();
    return 2 * precision * recall / (precision + recall);
}

}  // namespace detail

// ============================================================================
// Observation generation (OG) pretraining
// ============================================================================

template <class T>
struct OgModel {
    GraphUpdater<T> updater;
    SeqDecoder<T> decoder;

    OgModel(const enc::EncoderConfig<T>& cfg, const Vocab& voc, const WordVocab& wv, uint64_t seed)
        : updater("updater", cfg, voc, wv, *make_rng(seed)) {
        decoder = SeqDecoder<T>("og.dec", cfg, wv.size(), &updater.wemb, *make_rng(seed + 1));
    }
    OgModel(const OgModel&) = delete;
    OgModel& operator=(const OgModel&) = delete;

    void collect(std::vector<Parameter<T>*>& out) {
        updater.collect(out);
        decoder.collect(out);
    }

    // Teacher-forced NLL of obs under the decoder given the belief channels
    // produced at this step and the action representations.
    typename Tape<T>::Var step_loss(Tape<T>& t, const typename GraphUpdater<T>::StepVars& sv,
                                    const std::vector<int>& act_ids, const std::vector<int>& obs_ids) {
        auto graph_reps = updater.genc.encode(t, sv.belief);
        auto act = updater.tenc.encode(t, act_ids);
        std::vector<T> node_mask(static_cast<size_t>(updater.vocab->num_entities()), T(1));
        auto [h_ag, h_ga] = updater.aggr.aggregate(t, act.reps, act.mask, graph_reps, node_mask);

        std::vector<int> prefix = {WordVocab::kBos};
        prefix.insert(prefix.end(), obs_ids.begin(), obs_ids.end());
        std::vector<int> targets = obs_ids;
        targets.push_back(WordVocab::kEos);

        auto logits = decoder.decode(t, prefix, h_ga, node_mask, h_ag, act.mask);
        typename Tape<T>::Var loss = -1;
        for (size_t i = 0; i < targets.size(); ++i) {
            auto row = t.slice_rows(logits, static_cast<int>(i), static_cast<int>(i) + 1);
            auto ce = t.cross_entropy_logits(row, targets[i]);
            loss = i == 0 ? ce : t.add(loss, ce);
        }
        return t.scale(loss, T(1) / static_cast<T>(targets.size()));
    }

    // Next-token distribution over the vocabulary given the belief, the
    // previous action and a decoded prefix (causally masked).
    std::vector<T> next_token_distribution(const kg::BeliefGraph& belief,
                                           const std::vector<std::string>& act_tokens,
                                           const std::vector<std::string>& prefix_tokens) {
        if (prefix_tokens.empty() || prefix_tokens.front() != "<s>")
            throw std::invalid_argument("next_token_distribution: prefix must start with <s>");
        Tape<T> t;
        auto channels = updater.genc.adjacency_leaves(t, belief);
        auto graph_reps = updater.genc.encode(t, channels);
        auto act = updater.tenc.encode(t, updater.words->encode(act_tokens));
        std::vector<T> node_mask(static_cast<size_t>(updater.vocab->num_entities()), T(1));
        auto [h_ag, h_ga] = updater.aggr.aggregate(t, act.reps, act.mask, graph_reps, node_mask);
        auto logits = decoder.decode(t, updater.words->encode(prefix_tokens), h_ga, node_mask, h_ag,
                                     act.mask);
        auto probs = t.softmax_rows(t.slice_rows(logits, t.val(logits).rows() - 1, t.val(logits).rows()),
                                    std::vector<T>(static_cast<size_t>(updater.words->size()), T(1)));
        return t.val(probs).v;
    }

    // Greedy reconstruction of an observation from the current belief.
    std::vector<std::string> greedy_decode(const kg::BeliefGraph& belief,
                                           const std::vector<std::string>& act_tokens, int max_len) {
        Tape<T> t;
        auto channels = updater.genc.adjacency_leaves(t, belief);
        auto graph_reps = updater.genc.encode(t, channels);
        auto act = updater.tenc.encode(t, updater.words->encode(act_tokens));
        std::vector<T> node_mask(static_cast<size_t>(updater.vocab->num_entities()), T(1));
        auto [h_ag, h_ga] = updater.aggr.aggregate(t, act.reps, act.mask, graph_reps, node_mask);

        std::vector<int> prefix = {WordVocab::kBos};
        std::vector<std::string> out;
        for (int i = 0; i < max_len; ++i) {
            auto logits = decoder.decode(t, prefix, h_ga, node_mask, h_ag, act.mask);
            const auto& row = t.val(logits);
            int best = 0;
            for (int j = 1; j < row.cols(); ++j)
                if (row.at(row.rows() - 1, j) > row.at(row.rows() - 1, best)) best = j;
            if (best == WordVocab::kEos) break;
            prefix.push_back(best);
            out.push_back(updater.words->word(best));
        }
        return out;
    }
};

// Shared unrolled-training driver for the recurrent updater heads. The
// per-step loss closure sees the post-update StepVars and the record.
template <class T, class StepLossFn>
std::vector<double> run_tbptt(GraphUpdater<T>& updater, const std::vector<std::vector<UpdateStep>>& episodes,
                              const PretrainConfig& cfg, nn::Optimizer<T>& opt,
                              const std::vector<Parameter<T>*>& params, StepLossFn&& step_loss) {
    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0;
        int windows = 0;
        for (const auto& episode : episodes) {
            Tensor<T> h_val(1, updater.cfg.hidden);
            std::optional<kg::BeliefGraph> belief_val;  // recomputed lazily from h
            for (size_t start = 0; start < episode.size(); start += static_cast<size_t>(cfg.unroll)) {
                const size_t end = std::min(episode.size(), start + static_cast<size_t>(cfg.unroll));
                Tape<T> t;
                auto h = t.leaf(h_val);
                if (!belief_val) belief_val = updater.belief_from_h(h_val);
                auto belief = updater.genc.adjacency_leaves(t, *belief_val);
                typename Tape<T>::Var loss = -1;
                for (size_t i = start; i < end; ++i) {
                    const UpdateStep& stepdata = episode[i];
                    auto sv = updater.update_step(t, h, belief, updater.words->encode(stepdata.obs),
                                                  updater.words->encode(stepdata.action));
                    auto l = step_loss(t, sv, stepdata);
                    loss = i == start ? l : t.add(loss, l);
                    h = sv.h;
                    belief = sv.belief;
                }
                loss = t.scale(loss, T(1) / static_cast<T>(end - start));
                t.backward(loss);
                opt.step(params);
                total += static_cast<double>(t.val(loss).v[0]);
                ++windows;
                h_val = t.val(h);    // detach across windows
                belief_val.reset();  // rebuilt from the detached h at the next window
            }
        }
        epoch_losses.push_back(windows ? total / windows : 0.0);
    }
    return epoch_losses;
}

template <class T>
PretrainMetrics pretrain_og(OgModel<T>& model, const std::vector<world::TransitionRecord>& corpus,
                            const PretrainConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("pretrain_og: empty corpus");
    const Vocab& voc = *model.updater.vocab;
    const WordVocab& words = *model.updater.words;
    auto episodes = to_update_episodes(io::group_episodes(corpus), voc);
    auto [ntrain, nvalid] = detail::split_point(episodes.size(), cfg.valid_fraction);
    std::vector<std::vector<UpdateStep>> train(episodes.begin(), episodes.begin() + ntrain);
    std::vector<std::vector<UpdateStep>> valid(episodes.begin() + ntrain, episodes.end());

    std::vector<Parameter<T>*> params;
    model.collect(params);
    auto opt = nn::make_radam<T>(static_cast<T>(cfg.lr));

    PretrainMetrics m;
    m.baseline = std::log(static_cast<double>(words.size()));
    m.epoch_train_loss = run_tbptt(model.updater, train, cfg, opt, params,
                                   [&](Tape<T>& t, const typename GraphUpdater<T>::StepVars& sv,
                                       const UpdateStep& step) {
                                       return model.step_loss(t, sv, words.encode(step.action),
                                                              words.encode(step.obs));
                                   });

    // teacher-forced per-token NLL plus greedy token F1 on held-out episodes
    double nll = 0, f1 = 0;
    int steps = 0;
    for (const auto& episode : valid) {
        auto state = model.updater.initial_state();
        for (const auto& step : episode) {
            Tape<T> t;
            auto channels = model.updater.genc.adjacency_leaves(t, state.belief);
            auto sv = model.updater.update_step(t, t.leaf(state.h), channels,
                                                words.encode(step.obs), words.encode(step.action));
            auto loss = model.step_loss(t, sv, words.encode(step.action), words.encode(step.obs));
            nll += static_cast<double>(t.val(loss).v[0]);
            state.h = t.val(sv.h);
            const auto& hv = t.val(sv.half).v;
            state.belief = kg::from_half_tensor(std::vector<double>(hv.begin(), hv.end()),
                                                voc.num_relations(), voc.num_entities());
            f1 += detail::token_f1(model.greedy_decode(state.belief, step.action, cfg.max_decode_len),
                                   step.obs);
            ++steps;
        }
    }
    m.valid_loss = steps ? nll / steps : 0.0;
    m.valid_metric = steps ? f1 / steps : 0.0;
    return m;
}

// ============================================================================
// Contrastive observation classification (COC) pretraining
// ============================================================================

template <class T>
struct CocModel {
    GraphUpdater<T> updater;
    BilinearDiscriminator<T> disc;

    CocModel(const enc::EncoderConfig<T>& cfg, const Vocab& voc, const WordVocab& wv, uint64_t seed)
        : updater("updater", cfg, voc, wv, *make_rng(seed)) {
        disc = BilinearDiscriminator<T>("coc.disc", cfg.hidden, *make_rng(seed + 1));
    }
    CocModel(const CocModel&) = delete;
    CocModel& operator=(const CocModel&) = delete;

    void collect(std::vector<Parameter<T>*>& out) {
        updater.collect(out);
        disc.collect(out);
    }

    // Discrimination logit between an observation and the current belief.
    typename Tape<T>::Var logit(Tape<T>& t, const std::vector<typename Tape<T>::Var>& belief,
                                const std::vector<int>& obs_ids) {
        auto graph_reps = updater.genc.encode(t, belief);
        std::vector<T> node_mask(static_cast<size_t>(updater.vocab->num_entities()), T(1));
        auto obs = updater.tenc.encode(t, obs_ids);
        auto pooled_obs = t.masked_mean_rows(obs.reps, obs.mask);
        auto pooled_graph = t.masked_mean_rows(graph_reps, node_mask);
        return disc.logit(t, pooled_obs, pooled_graph);
    }
};

template <class T>
PretrainMetrics pretrain_coc(CocModel<T>& model, const std::vector<world::TransitionRecord>& corpus,
                             const PretrainConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("pretrain_coc: empty corpus");
    const Vocab& voc = *model.updater.vocab;
    const WordVocab& words = *model.updater.words;
    auto episodes = to_update_episodes(io::group_episodes(corpus), voc);
    auto [ntrain, nvalid] = detail::split_point(episodes.size(), cfg.valid_fraction);
    std::vector<std::vector<UpdateStep>> train(episodes.begin(), episodes.begin() + ntrain);
    std::vector<std::vector<UpdateStep>> valid(episodes.begin() + ntrain, episodes.end());

    // the corruption pool: every observation in the pre-training data
    std::vector<const std::vector<std::string>*> pool;
    for (const auto& ep : episodes)
        for (const auto& step : ep) pool.push_back(&step.obs);

    auto draw_negative = [&](Rng& rng, const std::vector<std::string>& positive) {
        for (int tries = 0; tries < 100; ++tries) {
            const auto* cand = pool[rng.below(pool.size())];
            if (*cand != positive) return cand;
        }
        throw std::runtime_error("pretrain_coc: could not draw a distinct corrupted observation");
    };

    std::vector<Parameter<T>*> params;
    model.collect(params);
    auto opt = nn::make_radam<T>(static_cast<T>(cfg.lr));

    PretrainMetrics m;
    m.baseline = std::log(2.0);  // undecided discriminator
    uint64_t draw_counter = 0;
    m.epoch_train_loss = run_tbptt(
        model.updater, train, cfg, opt, params,
        [&](Tape<T>& t, const typename GraphUpdater<T>::StepVars& sv, const UpdateStep& step) {
            Rng rng(cfg.seed ^ (0x517cc1b727220a95ull + draw_counter++));
            const auto* corrupted = draw_negative(rng, step.obs);
            auto pos = t.bce_with_logits(model.logit(t, sv.belief, words.encode(step.obs)), T(1));
            auto neg = t.bce_with_logits(model.logit(t, sv.belief, words.encode(*corrupted)), T(0));
            return t.scale(t.add(pos, neg), T(0.5));
        });

    double loss_sum = 0;
    int correct = 0, total = 0;
    uint64_t eval_counter = 1ull << 32;
    for (const auto& episode : valid) {
        auto state = model.updater.initial_state();
        for (const auto& step : episode) {
            Tape<T> t;
            auto channels = model.updater.genc.adjacency_leaves(t, state.belief);
            auto sv = model.updater.update_step(t, t.leaf(state.h), channels,
                                                words.encode(step.obs), words.encode(step.action));
            Rng rng(cfg.seed ^ (0x2545f4914f6cdd1dull + eval_counter++));
            const auto* corrupted = draw_negative(rng, step.obs);
            auto pos = model.logit(t, sv.belief, words.encode(step.obs));
            auto neg = model.logit(t, sv.belief, words.encode(*corrupted));
            loss_sum += 0.5 * (static_cast<double>(t.val(t.bce_with_logits(pos, T(1))).v[0]) +
                               static_cast<double>(t.val(t.bce_with_logits(neg, T(0))).v[0]));
            correct += t.val(pos).v[0] > T(0) ? 1 : 0;
            correct += t.val(neg).v[0] < T(0) ? 1 : 0;
            total += 2;
            state.h = t.val(sv.h);
            const auto& hv = t.val(sv.half).v;
            state.belief = kg::from_half_tensor(std::vector<double>(hv.begin(), hv.end()),
                                                voc.num_relations(), voc.num_entities());
        }
    }
    m.valid_loss = total ? loss_sum / (total / 2) : 0.0;
    m.valid_metric = total ? static_cast<double>(correct) / total : 0.0;
    return m;
}

// ============================================================================
// Command generation (CG): the discrete graph updater
// ============================================================================

template <class T>
struct CgModel {
    const Vocab* vocab = nullptr;
    const WordVocab* words = nullptr;
    enc::EncoderConfig<T> cfg;
    enc::WordEmbedding<T> wemb;
    enc::TextEncoder<T> tenc;
    enc::GraphEncoder<T> genc;
    enc::Aggregator<T> aggr;
    SeqDecoder<T> dec;

    CgModel(const enc::EncoderConfig<T>& c, const Vocab& voc, const WordVocab& wv, uint64_t seed)
        : vocab(&voc), words(&wv), cfg(c) {
        Rng rng(seed);
        wemb = enc::WordEmbedding<T>("cg", wv, c.word_dim, rng);
        tenc = enc::TextEncoder<T>("cg.tenc", c, &wemb, rng);
        genc = enc::GraphEncoder<T>("cg.genc", c, voc, wv, &wemb, rng);
        aggr = enc::Aggregator<T>("cg.aggr", c.hidden, rng);
        dec = SeqDecoder<T>("cg.dec", c, wv.size(), &wemb, rng);
    }
    CgModel(const CgModel&) = delete;
    CgModel& operator=(const CgModel&) = delete;

    void collect(std::vector<Parameter<T>*>& out) {
        wemb.collect(out);
        tenc.collect(out);
        genc.collect(out);
        aggr.collect(out);
        dec.collect(out);
    }

    struct Memories {
        typename Tape<T>::Var graph_side = -1, text_side = -1;
        std::vector<T> node_mask, text_mask;
    };

    Memories encode_context(Tape<T>& t, const kg::DiscreteGraph& g_prev,
                            const std::vector<int>& obs_ids) {
        Memories mem;
        auto channels = genc.adjacency_leaves(t, kg::to_dense(g_prev));
        auto reps = genc.encode(t, channels);
        auto obs = tenc.encode(t, obs_ids);
        mem.node_mask.assign(static_cast<size_t>(vocab->num_entities()), T(1));
        auto [h_og, h_go] = aggr.aggregate(t, obs.reps, obs.mask, reps, mem.node_mask);
        mem.graph_side = h_go;
        mem.text_side = h_og;
        mem.text_mask = obs.mask;
        return mem;
    }

    // Teacher-forced mean NLL of the framed target token sequence.
    typename Tape<T>::Var step_loss(Tape<T>& t, const kg::DiscreteGraph& g_prev,
                                    const std::vector<int>& obs_ids, const std::vector<int>& target) {
        if (target.size() < 2) throw std::invalid_argument("CgModel: target must be framed");
        auto mem = encode_context(t, g_prev, obs_ids);
        std::vector<int> prefix(target.begin(), target.end() - 1);
        auto logits = dec.decode(t, prefix, mem.graph_side, mem.node_mask, mem.text_side, mem.text_mask);
        typename Tape<T>::Var loss = -1;
        for (size_t i = 1; i < target.size(); ++i) {
            auto row = t.slice_rows(logits, static_cast<int>(i) - 1, static_cast<int>(i));
            auto ce = t.cross_entropy_logits(row, target[i]);
            loss = i == 1 ? ce : t.add(loss, ce);
        }
        return t.scale(loss, T(1) / static_cast<T>(target.size() - 1));
    }

    // Greedy decoding; returns the framed token string.
    std::vector<std::string> decode_commands(const kg::DiscreteGraph& g_prev,
                                             const std::vector<std::string>& obs_tokens, int max_len) {
        Tape<T> t;
        auto mem = encode_context(t, g_prev, words->encode(obs_tokens));
        std::vector<int> prefix = {WordVocab::kBos};
        std::vector<std::string> out = {"<s>"};
        for (int i = 0; i < max_len; ++i) {
            auto logits = dec.decode(t, prefix, mem.graph_side, mem.node_mask, mem.text_side, mem.text_mask);
            const auto& row = t.val(logits);
            int best = 0;
            for (int j = 1; j < row.cols(); ++j)
                if (row.at(row.rows() - 1, j) > row.at(row.rows() - 1, best)) best = j;
            prefix.push_back(best);
            out.push_back(words->word(best));
            if (best == WordVocab::kEos) break;
        }
        return out;
    }
};

// The discrete belief update: decode, parse robustly, apply. The previous
// action is accepted for interface parity with the continuous updater; the
// generator conditions on the observation and the previous graph.
template <class T>
kg::DiscreteGraph discrete_update(CgModel<T>& model, const kg::DiscreteGraph& g_prev,
                                  const std::vector<std::string>& obs_tokens,
                                  const std::vector<std::string>& act_tokens, int max_len = 200) {
    (void)act_tokens;
    auto tokens = model.decode_commands(g_prev, obs_tokens, max_len);
    auto parsed = kg::parse_commands(tokens, *model.vocab);
    return kg::apply_commands(g_prev, parsed.sequence);
}

template <class T>
PretrainMetrics pretrain_cg(CgModel<T>& model, const std::vector<world::TransitionRecord>& corpus,
                            const PretrainConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("pretrain_cg: empty corpus");
    const Vocab& voc = *model.vocab;
    const WordVocab& words = *model.words;
    auto episodes = to_update_episodes(io::group_episodes(corpus), voc);

    struct Sample {
        const UpdateStep* step;
        std::vector<int> target;
    };
    std::vector<Sample> samples;
    for (const auto& ep : episodes)
        for (const auto& step : ep)
            samples.push_back(
                {&step, words.encode(kg::serialize_commands(kg::diff_to_commands(step.gseen_prev, step.gseen), voc))});

    auto [ntrain, nvalid] = detail::split_point(samples.size(), cfg.valid_fraction);
    std::vector<Parameter<T>*> params;
    model.collect(params);
    auto opt = nn::make_radam<T>(static_cast<T>(cfg.lr));

    PretrainMetrics m;
    m.baseline = std::log(static_cast<double>(words.size()));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0;
        for (size_t i = 0; i < ntrain; ++i) {
            Tape<T> t;
            auto loss = model.step_loss(t, samples[i].step->gseen_prev, words.encode(samples[i].step->obs),
                                        samples[i].target);
            t.backward(loss);
            opt.step(params);
            total += static_cast<double>(t.val(loss).v[0]);
        }
        m.epoch_train_loss.push_back(ntrain ? total / static_cast<double>(ntrain) : 0.0);
    }

    double nll = 0;
    int exact = 0, count = 0;
    for (size_t i = ntrain; i < samples.size(); ++i) {
        Tape<T> t;
        auto loss = model.step_loss(t, samples[i].step->gseen_prev, words.encode(samples[i].step->obs),
                                    samples[i].target);
        nll += static_cast<double>(t.val(loss).v[0]);
        auto decoded = model.decode_commands(samples[i].step->gseen_prev, samples[i].step->obs,
                                             cfg.max_decode_len);
        exact += words.encode(decoded) == samples[i].target ? 1 : 0;
        ++count;
    }
    m.valid_loss = count ? nll / count : 0.0;
    m.valid_metric = count ? static_cast<double>(exact) / count : 0.0;
    return m;
}

// ============================================================================
// Graph-encoder pretraining: AP, SP, DGI
// ============================================================================

enum class GraphTask { ActionPrediction, StatePrediction, DeepGraphInfomax };

inline GraphTask parse_graph_task(const std::string& name) {
    if (name == "ap") return GraphTask::ActionPrediction;
    if (name == "sp") return GraphTask::StatePrediction;
    if (name == "dgi") return GraphTask::DeepGraphInfomax;
    throw std::invalid_argument("unknown graph-encoder pretraining task: " + name);
}

struct GraphSample {
    kg::DiscreteGraph g_prev, g_next;
    std::vector<std::vector<std::string>> candidate_texts;
    int action_idx = 0;
    std::vector<kg::DiscreteGraph> candidate_graphs;  // aligned with candidate_texts
};

// Replays game walkthroughs (with optional detours) recording, per step, the
// candidate list and the graph each candidate would lead to. AP and SP need
// this context, which the plain transition corpus does not carry.
inline std::vector<GraphSample> build_graph_pretrain_corpus(const std::vector<world::GameSpec>& specs,
                                                            bool use_full_graphs, double off_path_rate,
                                                            uint64_t seed) {
    std::vector<GraphSample> out;
    Rng top(seed);
    for (size_t gi = 0; gi < specs.size(); ++gi) {
        Rng rng = top.fork(gi);
        auto rr = world::reset(specs[gi]);
        world::GameState s = std::move(rr.state);
        std::deque<world::ActionCandidate> plan;
        for (auto& a : world::plan_from(s)) plan.push_back(a);

        while (s.status == world::Status::Ongoing && s.step_count < s.max_steps && !plan.empty()) {
            auto cands = world::candidates(s);
            GraphSample sample;
            sample.g_prev = use_full_graphs ? s.facts : s.seen;
            for (const auto& c : cands) {
                sample.candidate_texts.push_back(c.tokens);
                world::GameState probe = s;
                world::step(probe, c);
                sample.candidate_graphs.push_back(use_full_graphs ? probe.facts : probe.seen);
            }

            world::ActionCandidate action = plan.front();
            bool detoured = false;
            if (off_path_rate > 0.0 && rng.chance(off_path_rate)) {
                for (int tries = 0; tries < 10; ++tries) {
                    const auto& pickc = cands[rng.below(cands.size())];
                    world::GameState probe = s;
                    auto pr = world::step(probe, pickc);
                    if (probe.status == world::Status::Ongoing && !pr.done) {
                        action = pickc;
                        detoured = true;
                        break;
                    }
                }
            }
            sample.action_idx =
                static_cast<int>(std::find(cands.begin(), cands.end(), action) - cands.begin());
            auto sr = world::step(s, action);
            sample.g_next = use_full_graphs ? s.facts : s.seen;
            out.push_back(std::move(sample));

            if (detoured) {
                plan.clear();
                if (s.status == world::Status::Ongoing)
                    for (auto& a : world::plan_from(s)) plan.push_back(a);
            } else {
                plan.pop_front();
            }
            if (sr.done) break;
        }
    }
    return out;
}

template <class T>
struct GraphPretrainModel {
    const Vocab* vocab = nullptr;
    const WordVocab* words = nullptr;
    enc::EncoderConfig<T> cfg;
    enc::WordEmbedding<T> wemb;
    enc::TextEncoder<T> tenc;
    enc::GraphEncoder<T> genc;
    enc::Aggregator<T> aggr;
    enc::Scorer<T> scorer;
    BilinearDiscriminator<T> disc;

    GraphPretrainModel(const enc::EncoderConfig<T>& c, const Vocab& voc, const WordVocab& wv,
                       uint64_t seed)
        : vocab(&voc), words(&wv), cfg(c) {
        Rng rng(seed);
        wemb = enc::WordEmbedding<T>("gp", wv, c.word_dim, rng);
        tenc = enc::TextEncoder<T>("gp.tenc", c, &wemb, rng);
        genc = enc::GraphEncoder<T>("gp.genc", c, voc, wv, &wemb, rng);
        aggr = enc::Aggregator<T>("gp.aggr", c.hidden, rng);
        scorer = enc::Scorer<T>("gp.scorer", c.hidden, 2, rng);
        disc = BilinearDiscriminator<T>("gp.disc", c.hidden, rng);
    }
    GraphPretrainModel(const GraphPretrainModel&) = delete;
    GraphPretrainModel& operator=(const GraphPretrainModel&) = delete;

    void collect(std::vector<Parameter<T>*>& out) {
        wemb.collect(out);
        tenc.collect(out);
        genc.collect(out);
        aggr.collect(out);
        scorer.collect(out);
        disc.collect(out);
    }
};

namespace detail {

// AP/SP share the (state parts, candidate vectors) -> scores shape; this
// builds the loss and records whether the argmax hit the target.
template <class T>
typename Tape<T>::Var ranked_loss(Tape<T>& t, GraphPretrainModel<T>& model,
                                  const std::vector<std::pair<typename Tape<T>::Var, std::vector<T>>>& state,
                                  const std::vector<typename Tape<T>::Var>& cands, int target,
                                  bool* correct) {
    auto scores = model.scorer.score(t, state, cands);
    if (correct) {
        const auto& row = t.val(scores);
        int best = 0;
        for (int j = 1; j < row.cols(); ++j)
            if (row.at(0, j) > row.at(0, best)) best = j;
        *correct = best == target;
    }
    return t.cross_entropy_logits(scores, target);
}

template <class T>
typename Tape<T>::Var graph_task_loss(Tape<T>& t, GraphPretrainModel<T>& model, GraphTask task,
                                      const GraphSample& sample, Rng& rng, bool* correct,
                                      int* prediction_count) {
    using V = typename Tape<T>::Var;
    const int n = model.vocab->num_entities();
    std::vector<T> node_mask(static_cast<size_t>(n), T(1));
    auto encode_graph = [&](const kg::DiscreteGraph& g) {
        return model.genc.encode(t, model.genc.adjacency_leaves(t, kg::to_dense(g)));
    };

    if (task == GraphTask::ActionPrediction) {
        auto prev = encode_graph(sample.g_prev);
        auto next = encode_graph(sample.g_next);
        auto [a, b] = model.aggr.aggregate(t, prev, node_mask, next, node_mask);
        std::vector<V> cands;
        for (const auto& text : sample.candidate_texts) {
            auto reps = model.tenc.encode(t, model.words->encode(text));
            cands.push_back(t.masked_mean_rows(reps.reps, reps.mask));
        }
        if (prediction_count) *prediction_count = static_cast<int>(cands.size());
        return ranked_loss(t, model, {{a, node_mask}, {b, node_mask}}, cands, sample.action_idx, correct);
    }

    if (task == GraphTask::StatePrediction) {
        auto prev = encode_graph(sample.g_prev);
        auto act = model.tenc.encode(t, model.words->encode(sample.candidate_texts[static_cast<size_t>(
                                            sample.action_idx)]));
        auto [a, b] = model.aggr.aggregate(t, act.reps, act.mask, prev, node_mask);
        // candidate set: the true next graph plus distinct graphs reachable
        // via the other candidates
        std::vector<V> cands;
        int target = -1;
        for (size_t i = 0; i < sample.candidate_graphs.size(); ++i) {
            const auto& g = sample.candidate_graphs[i];
            if (static_cast<int>(i) == sample.action_idx) {
                target = static_cast<int>(cands.size());
            } else if (g == sample.g_next) {
                continue;  // indistinguishable from the positive
            }
            cands.push_back(t.masked_mean_rows(encode_graph(g), node_mask));
        }
        if (prediction_count) *prediction_count = static_cast<int>(cands.size());
        return ranked_loss(t, model, {{a, act.mask}, {b, node_mask}}, cands, target, correct);
    }

    // Deep graph infomax: real node reps vs row-shuffled corruption against
    // the pooled summary.
    auto reps = encode_graph(sample.g_next);
    auto summary = t.masked_mean_rows(reps, node_mask);
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    do {
        rng.shuffle(perm);
    } while (perm[0] == 0 && perm[1] == 1);  // avoid near-identity shuffles
    std::vector<V> shuffled_rows;
    for (int i = 0; i < n; ++i)
        shuffled_rows.push_back(t.slice_rows(reps, perm[static_cast<size_t>(i)],
                                             perm[static_cast<size_t>(i)] + 1));
    auto corrupted = t.concat_rows(shuffled_rows);

    V loss = -1;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        auto pos = model.disc.logit(t, t.slice_rows(reps, i, i + 1), summary);
        auto neg = model.disc.logit(t, t.slice_rows(corrupted, i, i + 1), summary);
        hits += t.val(pos).v[0] > T(0) ? 1 : 0;
        hits += t.val(neg).v[0] < T(0) ? 1 : 0;
        auto l = t.add(t.bce_with_logits(pos, T(1)), t.bce_with_logits(neg, T(0)));
        loss = i == 0 ? l : t.add(loss, l);
    }
    if (correct) *correct = hits * 2 >= 3 * n;  // majority of the 2n decisions
    if (prediction_count) *prediction_count = 2 * n;
    return t.scale(loss, T(1) / static_cast<T>(2 * n));
}

}  // namespace detail

template <class T>
PretrainMetrics pretrain_graph_encoder(GraphPretrainModel<T>& model, GraphTask task,
                                       const std::vector<GraphSample>& samples,
                                       const PretrainConfig& cfg) {
    if (samples.empty()) throw std::invalid_argument("pretrain_graph_encoder: empty corpus");
    auto usable = [&](const GraphSample& s) {
        return task != GraphTask::ActionPrediction || s.candidate_texts.size() > 1;
    };
    std::vector<const GraphSample*> pool;
    for (const auto& s : samples)
        if (usable(s)) pool.push_back(&s);
    auto [ntrain, nvalid] = detail::split_point(pool.size(), cfg.valid_fraction);

    std::vector<Parameter<T>*> params;
    model.collect(params);
    auto opt = nn::make_radam<T>(static_cast<T>(cfg.lr));

    PretrainMetrics m;
    double candidate_total = 0;
    int candidate_count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0;
        Rng rng(cfg.seed + static_cast<uint64_t>(epoch) * 7919);
        for (size_t i = 0; i < ntrain; ++i) {
            Tape<T> t;
            auto loss = detail::graph_task_loss(t, model, task, *pool[i], rng, nullptr, nullptr);
            t.backward(loss);
            opt.step(params);
            total += static_cast<double>(t.val(loss).v[0]);
        }
        m.epoch_train_loss.push_back(ntrain ? total / static_cast<double>(ntrain) : 0.0);
    }

    double loss_sum = 0;
    int correct = 0, count = 0;
    Rng rng(cfg.seed ^ 0xabcdef12345ull);
    for (size_t i = ntrain; i < pool.size(); ++i) {
        Tape<T> t;
        bool ok = false;
        int ncand = 0;
        auto loss = detail::graph_task_loss(t, model, task, *pool[i], rng, &ok, &ncand);
        loss_sum += static_cast<double>(t.val(loss).v[0]);
        correct += ok ? 1 : 0;
        candidate_total += ncand;
        ++candidate_count;
        ++count;
    }
    m.valid_loss = count ? loss_sum / count : 0.0;
    m.valid_metric = count ? static_cast<double>(correct) / count : 0.0;
    m.baseline = candidate_count ? 1.0 / (candidate_total / candidate_count) : 0.0;
    return m;
}

// ----------------------------------------------------------------------------
// Parameter transplants (pretrained encoders initialize the action selector)
// ----------------------------------------------------------------------------

template <class T, class Src, class Dst>
void copy_module_params(Src& src, Dst& dst) {
    std::vector<Parameter<T>*> a, b;
    src.collect(a);
    dst.collect(b);
    if (a.size() != b.size()) throw std::invalid_argument("copy_module_params: structure mismatch");
    for (size_t i = 0; i < a.size(); ++i) {
        if (!a[i]->value.same_shape(b[i]->value))
            throw std::invalid_argument("copy_module_params: shape mismatch at " + a[i]->name);
        b[i]->value = a[i]->value;
    }
}

}  // namespace gata::upd
