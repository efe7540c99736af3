#pragma once

#include <algorithm>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/updater.hpp"

namespace gata::rl {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;

// ============================================================================
// Configuration (defaults are the published training constants)
// ============================================================================

struct TrainConfig {
    double gamma = 0.9;
    int nstep_min = 1, nstep_max = 3;
    double eps_start = 1.0, eps_end = 0.1;
    int eps_anneal_episodes = 20000;
    size_t buffer_capacity = 500000;
    double priority_alpha = 0.6;
    double is_beta_start = 0.4, is_beta_end = 1.0;
    int batch_size = 64;
    int update_every_steps = 50;   // F
    int target_sync_episodes = 500;
    int warmup_episodes = 100;
    int eval_every_episodes = 1000;  // E
    int patience = 3;                // P
    double traj_tolerance = 0.1;     // tau
    bool filter_mean_per_step = true;  // false: compare mean episode returns
    int max_episode_steps = 50;
    int episodes = 100000;  // NB_EPISODES
    double lr = 0.001;
    uint64_t seed = 1;
    bool use_text = true;
    int burn_in = 4, seq_update = 4;          // DRQN replay windows
    double count_gamma = 0.5, count_lambda = 0.1;  // episodic exploration bonus
};

enum class VariantKind { TrDqn, TrDrqn, TrDrqnPlus, GataOg, GataCoc, GataGtp, GataGtf };

struct AgentVariant {
    VariantKind kind = VariantKind::TrDqn;
    bool use_text = true;
    bool use_graph = false;
    bool recurrent = false;
    bool count_bonus = false;

    static AgentVariant make(VariantKind kind, bool text_flag = true) {
        AgentVariant v;
        v.kind = kind;
        switch (kind) {
            case VariantKind::TrDqn:
                v.use_text = true;
                break;
            case VariantKind::TrDrqn:
                v.use_text = true;
                v.recurrent = true;
                break;
            case VariantKind::TrDrqnPlus:
                v.use_text = true;
                v.recurrent = true;
                v.count_bonus = true;
                break;
            case VariantKind::GataOg:
            case VariantKind::GataCoc:
            case VariantKind::GataGtp:
            case VariantKind::GataGtf:
                v.use_graph = true;
                v.use_text = text_flag;
                break;
        }
        return v;
    }
};

inline AgentVariant parse_variant(const std::string& name, bool text_flag = true) {
    if (name == "tr-dqn") return AgentVariant::make(VariantKind::TrDqn);
    if (name == "tr-drqn") return AgentVariant::make(VariantKind::TrDrqn);
    if (name == "tr-drqn+") return AgentVariant::make(VariantKind::TrDrqnPlus);
    if (name == "gata-og") return AgentVariant::make(VariantKind::GataOg, text_flag);
    if (name == "gata-coc") return AgentVariant::make(VariantKind::GataCoc, text_flag);
    if (name == "gata-gtp") return AgentVariant::make(VariantKind::GataGtp, text_flag);
    if (name == "gata-gtf") return AgentVariant::make(VariantKind::GataGtf, text_flag);
    throw std::invalid_argument("unknown agent variant: " + name);
}

inline const char* variant_name(VariantKind k) {
    switch (k) {
        case VariantKind::TrDqn: return "tr-dqn";
        case VariantKind::TrDrqn: return "tr-drqn";
        case VariantKind::TrDrqnPlus: return "tr-drqn+";
        case VariantKind::GataOg: return "gata-og";
        case VariantKind::GataCoc: return "gata-coc";
        case VariantKind::GataGtp: return "gata-gtp";
        case VariantKind::GataGtf: return "gata-gtf";
    }
    return "?";
}

// ============================================================================
// Replay storage
// ============================================================================

// Immutable view of the inputs the selector saw when it acted. GATA
// variants keep only the 64-float recurrent state; the frozen updater
// reconstructs the belief tensor on demand.
template <class T>
struct Snapshot {
    std::vector<std::string> obs;
    std::vector<std::vector<std::string>> candidates;
    Tensor<T> updater_h;          // continuous-belief variants
    kg::DiscreteGraph dgraph;     // discrete-graph variants
};

template <class T>
struct ReplayItem {
    Snapshot<T> state;
    int action = 0;
    double reward = 0;  // learning reward (includes any exploration bonus)
    bool done = false;
    int episode = 0;
    int step = 0;
    double priority = 1.0;
};

template <class T>
class ReplayBuffer {
public:
    ReplayBuffer(size_t capacity, double alpha) : capacity_(capacity), alpha_(alpha) {}

    size_t size() const { return items_.size(); }
    const ReplayItem<T>& at(size_t i) const { return items_[i]; }

    double mean_step_reward() const { return items_.empty() ? 0.0 : reward_sum_ / items_.size(); }
    double mean_episode_return() const { return episodes_ ? return_sum_ / episodes_ : 0.0; }
    bool empty() const { return items_.empty(); }

    // Admits a whole trajectory; evicts oldest episodes past capacity.
    void push_episode(std::vector<ReplayItem<T>> episode) {
        double prio = max_priority_;
        double ep_return = 0;
        for (auto& item : episode) {
            item.priority = prio;
            reward_sum_ += item.reward;
            ep_return += item.reward;
            items_.push_back(std::move(item));
        }
        return_sum_ += ep_return;
        ++episodes_;
        episode_bounds_.push_back(items_.size());
        while (items_.size() > capacity_ && episode_bounds_.size() > 1) {
            size_t drop = episode_bounds_.front();
            for (size_t i = 0; i < drop; ++i) {
                reward_sum_ -= items_.front().reward;
                items_.pop_front();
            }
            episode_bounds_.pop_front();
            for (auto& b : episode_bounds_) b -= drop;
            --episodes_;  // return_sum_ kept approximate after eviction
        }
    }

    // Priority-proportional sampling (p^alpha); returns indices and
    // importance weights normalized by the batch maximum.
    std::pair<std::vector<size_t>, std::vector<double>> sample(int batch, double beta, Rng& rng) const {
        if (items_.size() < static_cast<size_t>(batch))
            throw std::invalid_argument("ReplayBuffer: fewer items than batch size");
        std::vector<double> prefix(items_.size());
        double acc = 0;
        for (size_t i = 0; i < items_.size(); ++i) {
            acc += std::pow(items_[i].priority, alpha_);
            prefix[i] = acc;
        }
        std::vector<size_t> idx(static_cast<size_t>(batch));
        std::vector<double> weights(static_cast<size_t>(batch));
        double wmax = 0;
        for (int b = 0; b < batch; ++b) {
            double u = rng.real01() * acc;
            size_t i = static_cast<size_t>(std::lower_bound(prefix.begin(), prefix.end(), u) -
                                           prefix.begin());
            if (i >= items_.size()) i = items_.size() - 1;
            idx[static_cast<size_t>(b)] = i;
            double p = std::pow(items_[i].priority, alpha_) / acc;
            weights[static_cast<size_t>(b)] = std::pow(items_.size() * p, -beta);
            wmax = std::max(wmax, weights[static_cast<size_t>(b)]);
        }
        if (wmax > 0)
            for (auto& w : weights) w /= wmax;
        return {idx, weights};
    }

    void update_priority(size_t i, double td_error) {
        items_[i].priority = std::abs(td_error) + 1e-6;
        max_priority_ = std::max(max_priority_, items_[i].priority);
    }

    // Count of consecutive same-episode items starting at i (including i).
    size_t run_length(size_t i) const {
        size_t n = 0;
        const int ep = items_[i].episode;
        while (i + n < items_.size() && items_[i + n].episode == ep) ++n;
        return n;
    }

private:
    size_t capacity_;
    double alpha_;
    std::deque<ReplayItem<T>> items_;
    std::deque<size_t> episode_bounds_;  // cumulative item counts per stored episode
    double max_priority_ = 1.0;
    double reward_sum_ = 0.0;
    double return_sum_ = 0.0;
    int episodes_ = 0;
};

// ============================================================================
// Action selection and targets
// ============================================================================

// Admission rule for finished trajectories: the cache's average score must
// exceed tau times the buffer's average (an empty buffer admits anything).
inline bool admit_trajectory(double cache_mean, double buffer_mean, double tau, bool buffer_empty) {
    return buffer_empty || cache_mean > tau * buffer_mean;
}

// Epsilon-greedy over a score row; greedy ties break to the lowest index.
inline int select_action(const std::vector<double>& scores, double epsilon, Rng& rng) {
    if (scores.empty()) throw std::invalid_argument("select_action: no candidates");
    if (rng.real01() < epsilon) return static_cast<int>(rng.below(scores.size()));
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// n-step Double-Q target starting at buffer index i:
//   sum_{k<m} gamma^k r_{t+k} + [not terminal] gamma^m Q_target(s_{t+m}, argmax_a Q_online)
// with m = min(n, steps to termination).
template <class T, class QOnline, class QTarget>
double nstep_double_q_target(const ReplayBuffer<T>& buffer, size_t i, int n, double gamma,
                             QOnline&& online_q, QTarget&& target_q) {
    double acc = 0, discount = 1.0;
    for (int k = 0; k < n; ++k) {
        const auto& item = buffer.at(i + static_cast<size_t>(k));
        acc += discount * item.reward;
        if (item.done) return acc;
        discount *= gamma;
    }
    const auto& boot = buffer.at(i + static_cast<size_t>(n));
    auto online = online_q(boot.state);
    int best = 0;
    for (size_t a = 1; a < online.size(); ++a)
        if (online[a] > online[static_cast<size_t>(best)]) best = static_cast<int>(a);
    auto target = target_q(boot.state);
    return acc + discount * target[static_cast<size_t>(best)];
}

// Episodic counting bonus for Tr-DRQN+: lambda * N(o)^-gamma_c, reset per
// episode, learning signal only.
class ObservationCounter {
public:
    void reset() { counts_.clear(); }

    double bonus(const std::vector<std::string>& obs_tokens, double lambda, double gamma_c) {
        uint64_t h = 1469598103934665603ull;
        for (const auto& tok : obs_tokens) {
            for (unsigned char c : tok) {
                h ^= c;
                h *= 1099511628211ull;
            }
            h ^= 0x20;
            h *= 1099511628211ull;
        }
        int count = ++counts_[h];
        return lambda * std::pow(static_cast<double>(count), -gamma_c);
    }

private:
    std::map<uint64_t, int> counts_;
};

// ============================================================================
// The action-selector network bundle
// ============================================================================

template <class T>
struct ActionSelector {
    const Vocab* vocab = nullptr;
    const WordVocab* words = nullptr;
    enc::EncoderConfig<T> cfg;
    AgentVariant variant;

    enc::WordEmbedding<T> wemb;
    enc::TextEncoder<T> tenc;
    std::optional<enc::GraphEncoder<T>> genc;
    std::optional<enc::Aggregator<T>> aggr;
    enc::Scorer<T> scorer;
    std::optional<nn::GruCell<T>> policy_gru;

    ActionSelector(const enc::EncoderConfig<T>& c, AgentVariant var, const Vocab& voc,
                   const WordVocab& wv, uint64_t seed)
        : vocab(&voc), words(&wv), cfg(c), variant(var) {
        Rng rng(seed);
        wemb = enc::WordEmbedding<T>("sel", wv, c.word_dim, rng);
        tenc = enc::TextEncoder<T>("sel.tenc", c, &wemb, rng);
        if (var.use_graph) {
            genc.emplace("sel.genc", c, voc, wv, &wemb, rng);
            if (var.use_text) aggr.emplace("sel.aggr", c.hidden, rng);
        }
        const int parts = var.use_graph && var.use_text ? 2 : 1;
        scorer = enc::Scorer<T>("sel.scorer", c.hidden, var.recurrent ? 1 : parts, rng);
        if (var.recurrent) policy_gru.emplace("sel.gru", c.hidden, c.hidden, rng);
    }
    ActionSelector(const ActionSelector&) = delete;
    ActionSelector& operator=(const ActionSelector&) = delete;

    void collect(std::vector<Parameter<T>*>& out) {
        wemb.collect(out);
        tenc.collect(out);
        if (genc) genc->collect(out);
        if (aggr) aggr->collect(out);
        scorer.collect(out);
        if (policy_gru) policy_gru->collect(out);
    }

    // Builds the pooled state vector for a snapshot. The graph input enters
    // as constant leaves: play-time beliefs are detached by construction.
    typename Tape<T>::Var pooled_state(Tape<T>& t, const Snapshot<T>& snap,
                                       upd::GraphUpdater<T>* frozen_updater) {
        using V = typename Tape<T>::Var;
        std::vector<std::pair<V, std::vector<T>>> parts;
        std::optional<enc::TextReps<T>> text;
        if (variant.use_text) text = tenc.encode(t, words->encode(snap.obs));

        if (variant.use_graph) {
            kg::BeliefGraph belief;
            if (variant.kind == VariantKind::GataOg || variant.kind == VariantKind::GataCoc) {
                if (!frozen_updater) throw std::invalid_argument("ActionSelector: missing frozen updater");
                belief = frozen_updater->belief_from_h(snap.updater_h);
            } else {
                belief = kg::to_dense(snap.dgraph);
            }
            auto reps = genc->encode(t, genc->adjacency_leaves(t, belief));
            std::vector<T> node_mask(static_cast<size_t>(vocab->num_entities()), T(1));
            if (variant.use_text) {
                auto [h_og, h_go] = aggr->aggregate(t, text->reps, text->mask, reps, node_mask);
                parts.push_back({h_go, node_mask});
                parts.push_back({h_og, text->mask});
            } else {
                parts.push_back({reps, node_mask});
            }
        } else {
            parts.push_back({text->reps, text->mask});
        }
        return scorer.pooled_state(t, parts);
    }

    std::vector<typename Tape<T>::Var> candidate_vectors(Tape<T>& t, const Snapshot<T>& snap) {
        std::vector<std::vector<int>> ids;
        ids.reserve(snap.candidates.size());
        for (const auto& c : snap.candidates) ids.push_back(words->encode(c));
        return enc::pool_candidates(t, tenc, ids);
    }

    // Feedforward Q values for one snapshot.
    typename Tape<T>::Var q_row(Tape<T>& t, const Snapshot<T>& snap,
                                upd::GraphUpdater<T>* frozen_updater) {
        auto state_vec = pooled_state(t, snap, frozen_updater);
        if (variant.recurrent)
            throw std::logic_error("q_row: recurrent variants need an explicit policy state");
        return scorer.score_pooled(t, state_vec, candidate_vectors(t, snap));
    }

    // Recurrent Q values: advances the policy state and scores candidates.
    std::pair<typename Tape<T>::Var, typename Tape<T>::Var> q_row_recurrent(
        Tape<T>& t, const Snapshot<T>& snap, typename Tape<T>::Var policy_h,
        upd::GraphUpdater<T>* frozen_updater) {
        auto state_vec = pooled_state(t, snap, frozen_updater);
        auto h = policy_gru->step(t, state_vec, policy_h);
        return {scorer.score_pooled(t, h, candidate_vectors(t, snap)), h};
    }

    std::vector<double> q_values(const Snapshot<T>& snap, upd::GraphUpdater<T>* frozen_updater) {
        Tape<T> t;
        auto row = q_row(t, snap, frozen_updater);
        std::vector<double> out;
        for (T v : t.val(row).v) out.push_back(static_cast<double>(v));
        return out;
    }
};

// FNV-1a over parameter bytes; freezing checks compare this across training.
template <class T>
uint64_t param_hash(const std::vector<Parameter<T>*>& params) {
    uint64_t h = 1469598103934665603ull;
    for (const auto* p : params)
        for (T x : p->value.v) {
            unsigned char bytes[sizeof(T)];
            std::memcpy(bytes, &x, sizeof(T));
            for (unsigned char c : bytes) {
                h ^= c;
                h *= 1099511628211ull;
            }
        }
    return h;
}

// ============================================================================
// The training loop (prioritized n-step Double-Q with trajectory filtering
// and checkpoint patience)
// ============================================================================

struct CurveRow {
    int episode = 0;
    double train_score = 0;
    double valid_score = 0;
    double epsilon = 0;
    double loss = 0;
};

struct TrainResult {
    std::vector<CurveRow> curves;
    double best_valid = 0;
    double final_train_mean = 0;  // mean normalized score over the last quarter
    std::vector<double> episode_scores;
};

template <class T>
class Agent {
public:
    Agent(const enc::EncoderConfig<T>& cfg, AgentVariant variant, const TrainConfig& tc,
          const Vocab& voc, const WordVocab& wv, upd::GraphUpdater<T>* frozen_updater = nullptr,
          upd::CgModel<T>* frozen_cg = nullptr)
        : cfg_(cfg), variant_(variant), tc_(tc), vocab_(&voc), words_(&wv),
          updater_(frozen_updater), cg_(frozen_cg),
          online_(cfg, variant, voc, wv, tc.seed),
          target_(cfg, variant, voc, wv, tc.seed + 1),
          buffer_(tc.buffer_capacity, tc.priority_alpha) {
        online_.collect(online_params_);
        target_.collect(target_params_);
        sync_target();
        if ((variant.kind == VariantKind::GataOg || variant.kind == VariantKind::GataCoc) && !updater_)
            throw std::invalid_argument("Agent: GATA variants need a pretrained updater");
        if (variant.kind == VariantKind::GataGtp && !cg_)
            throw std::invalid_argument("Agent: GATA-GTP needs a pretrained command generator");
    }

    ActionSelector<T>& online() { return online_; }
    const std::vector<Parameter<T>*>& online_params() const { return online_params_; }
    ReplayBuffer<T>& buffer() { return buffer_; }
    const TrainConfig& config() const { return tc_; }

    void sync_target() {
        for (size_t i = 0; i < online_params_.size(); ++i)
            target_params_[i]->value = online_params_[i]->value;
    }

    bool target_matches_online() const {
        for (size_t i = 0; i < online_params_.size(); ++i)
            if (!(target_params_[i]->value.v == online_params_[i]->value.v)) return false;
        return true;
    }

    // --------------------------------------------------------------------
    // Environment interaction
    // --------------------------------------------------------------------

    struct EpisodeStats {
        int score = 0;
        int max_score = 1;
        int steps = 0;
        bool won = false;
    };

    // Plays one episode. With learn=true transitions are cached and the
    // trajectory filter decides admission to the replay buffer.
    EpisodeStats play_episode(const world::GameSpec& spec, double epsilon, Rng& rng, bool learn,
                              int episode_index) {
        auto rr = world::reset(spec);
        world::GameState gs = std::move(rr.state);
        gs.max_steps = tc_.max_episode_steps;

        typename upd::GraphUpdater<T>::State ustate;
        kg::DiscreteGraph dbelief(vocab_);
        if (uses_continuous_belief()) {
            ustate = updater_->initial_state();
            ustate = updater_->update_belief(ustate, rr.obs.tokens, {"restart"});
        } else if (variant_.kind == VariantKind::GataGtp) {
            dbelief = upd::discrete_update(*cg_, dbelief, rr.obs.tokens, {"restart"});
        }

        Tensor<T> policy_h(1, cfg_.hidden);  // recurrent policy state, reset each episode
        counter_.reset();
        std::vector<ReplayItem<T>> cache;
        auto obs = rr.obs;
        auto cands = rr.candidates;
        EpisodeStats stats;
        stats.max_score = spec.max_score;

        while (gs.status == world::Status::Ongoing && gs.step_count < tc_.max_episode_steps) {
            Snapshot<T> snap = make_snapshot(gs, obs, cands, ustate, dbelief);
            std::vector<double> q;
            if (variant_.recurrent) {
                Tape<T> t;
                auto [row, h] = online_.q_row_recurrent(t, snap, t.leaf(policy_h), updater_);
                policy_h = t.val(h);
                q.assign(t.val(row).v.begin(), t.val(row).v.end());
            } else {
                q = online_.q_values(snap, updater_);
            }
            int a = select_action(q, epsilon, rng);
            auto action = cands[static_cast<size_t>(a)];
            auto sr = world::step(gs, action);
            stats.score += sr.reward;

            double learn_reward = sr.reward;
            if (learn && variant_.count_bonus)
                learn_reward += counter_.bonus(sr.obs.tokens, tc_.count_lambda, tc_.count_gamma);

            if (learn) {
                ReplayItem<T> item;
                item.state = std::move(snap);
                item.action = a;
                item.reward = learn_reward;
                item.done = sr.done;
                item.episode = episode_index;
                item.step = gs.step_count - 1;
                cache.push_back(std::move(item));
            }

            if (uses_continuous_belief())
                ustate = updater_->update_belief(ustate, sr.obs.tokens, action.tokens);
            else if (variant_.kind == VariantKind::GataGtp)
                dbelief = upd::discrete_update(*cg_, dbelief, sr.obs.tokens, action.tokens);

            obs = sr.obs;
            cands = sr.candidates;
            ++global_steps_;
            if (learn && global_steps_ % tc_.update_every_steps == 0 &&
                episode_index > tc_.warmup_episodes &&
                buffer_.size() >= static_cast<size_t>(tc_.batch_size))
                learn_step();
            if (sr.done) break;
        }
        stats.steps = gs.step_count;
        stats.won = gs.status == world::Status::Won;

        if (learn && !cache.empty()) {
            double cache_mean, buffer_mean;
            if (tc_.filter_mean_per_step) {
                double sum = 0;
                for (const auto& item : cache) sum += item.reward;
                cache_mean = sum / cache.size();
                buffer_mean = buffer_.mean_step_reward();
            } else {
                double sum = 0;
                for (const auto& item : cache) sum += item.reward;
                cache_mean = sum;
                buffer_mean = buffer_.mean_episode_return();
            }
            if (admit_trajectory(cache_mean, buffer_mean, tc_.traj_tolerance, buffer_.empty()))
                buffer_.push_episode(std::move(cache));
        }
        return stats;
    }

    // --------------------------------------------------------------------
    // Algorithm: outer loop with trajectory filter, target sync, patience
    // --------------------------------------------------------------------

    TrainResult train(const std::vector<world::GameSpec>& train_games,
                      const std::vector<world::GameSpec>& valid_games) {
        if (train_games.empty()) throw std::invalid_argument("Agent::train: empty game set");
        Rng rng(tc_.seed);
        TrainResult result;
        std::vector<Tensor<T>> best_params;
        double best_valid = -1.0;
        int patience_count = 0;
        std::deque<double> recent_scores;

        for (int e = 1; e <= tc_.episodes; ++e) {
            const auto& spec = train_games[rng.below(train_games.size())];
            double eps = epsilon_at(e);
            auto stats = play_episode(spec, eps, rng, /*learn=*/true, e);
            double norm = static_cast<double>(stats.score) / std::max(1, stats.max_score);
            result.episode_scores.push_back(norm);
            recent_scores.push_back(norm);
            if (recent_scores.size() > 100) recent_scores.pop_front();

            if (e % tc_.target_sync_episodes == 0) sync_target();

            if (e % tc_.eval_every_episodes == 0) {
                double v = valid_games.empty() ? 0.0 : evaluate(valid_games);
                double train_mean = 0;
                for (double s : recent_scores) train_mean += s;
                train_mean /= recent_scores.empty() ? 1 : recent_scores.size();
                result.curves.push_back({e, train_mean, v, eps, recent_loss_mean()});

                if (v >= best_valid) {
                    best_valid = v;
                    best_params.clear();
                    for (auto* p : online_params_) best_params.push_back(p->value);
                    patience_count = 0;
                } else {
                    ++patience_count;
                    if (patience_count >= tc_.patience) {
                        for (size_t i = 0; i < online_params_.size(); ++i)
                            online_params_[i]->value = best_params[i];
                        patience_count = 0;
                    }
                }
            }
        }
        // report the best checkpoint
        if (!best_params.empty())
            for (size_t i = 0; i < online_params_.size(); ++i) online_params_[i]->value = best_params[i];
        result.best_valid = std::max(best_valid, 0.0);
        size_t quarter = std::max<size_t>(1, result.episode_scores.size() / 4);
        double tail = 0;
        for (size_t i = result.episode_scores.size() - quarter; i < result.episode_scores.size(); ++i)
            tail += result.episode_scores[i];
        result.final_train_mean = tail / quarter;
        return result;
    }

    // Greedy evaluation: one episode per game, normalized score average.
    double evaluate(const std::vector<world::GameSpec>& games) {
        Rng rng(tc_.seed ^ 0x5eedull);
        double total = 0;
        for (const auto& spec : games) {
            auto stats = play_episode(spec, 0.0, rng, /*learn=*/false, 0);
            total += static_cast<double>(stats.score) / std::max(1, stats.max_score);
        }
        return games.empty() ? 0.0 : total / games.size();
    }

    double epsilon_at(int episode) const {
        double f = std::min(1.0, static_cast<double>(episode) / tc_.eps_anneal_episodes);
        return tc_.eps_start + f * (tc_.eps_end - tc_.eps_start);
    }

    double beta_at(int learn_calls) const {
        double denom = std::max(1.0, static_cast<double>(tc_.episodes) *
                                         tc_.max_episode_steps / tc_.update_every_steps);
        double f = std::min(1.0, learn_calls / denom);
        return tc_.is_beta_start + f * (tc_.is_beta_end - tc_.is_beta_start);
    }

    // --------------------------------------------------------------------
    // Learning step
    // --------------------------------------------------------------------

    void learn_step() {
        ++learn_calls_;
        Rng rng(tc_.seed ^ (0x1ea4ull + static_cast<uint64_t>(learn_calls_)));
        if (variant_.recurrent) {
            learn_step_recurrent(rng);
            return;
        }
        auto [idx, weights] = buffer_.sample(tc_.batch_size, beta_at(learn_calls_), rng);

        auto online_fn = [&](const Snapshot<T>& s) { return online_.q_values(s, updater_); };
        auto target_fn = [&](const Snapshot<T>& s) { return target_.q_values(s, updater_); };

        double loss_total = 0;
        for (size_t b = 0; b < idx.size(); ++b) {
            const auto& item = buffer_.at(idx[b]);
            int n = tc_.nstep_min + static_cast<int>(rng.below(
                        static_cast<uint64_t>(tc_.nstep_max - tc_.nstep_min + 1)));
            double y = nstep_double_q_target(buffer_, idx[b], n, tc_.gamma, online_fn, target_fn);

            Tape<T> t;
            auto row = online_.q_row(t, item.state, updater_);
            auto q_sa = t.slice_cols(row, item.action, item.action + 1);
            auto loss = t.scale(t.huber(q_sa, static_cast<T>(y)),
                                static_cast<T>(weights[b] / tc_.batch_size));
            t.backward(loss);
            double td = static_cast<double>(t.val(q_sa).v[0]) - y;
            buffer_.update_priority(idx[b], td);
            loss_total += static_cast<double>(t.val(loss).v[0]);
        }
        if (!opt_) opt_ = std::make_unique<nn::Optimizer<T>>(nn::make_radam<T>(static_cast<T>(tc_.lr)));
        opt_->step(online_params_);
        push_loss(loss_total);
    }

private:
    bool uses_continuous_belief() const {
        return variant_.kind == VariantKind::GataOg || variant_.kind == VariantKind::GataCoc;
    }

    Snapshot<T> make_snapshot(const world::GameState& gs, const world::Observation& obs,
                              const std::vector<world::ActionCandidate>& cands,
                              const typename upd::GraphUpdater<T>::State& ustate,
                              const kg::DiscreteGraph& dbelief) {
        Snapshot<T> snap;
        snap.obs = obs.tokens;
        for (const auto& c : cands) snap.candidates.push_back(c.tokens);
        if (uses_continuous_belief()) snap.updater_h = ustate.h;
        else if (variant_.kind == VariantKind::GataGtp) snap.dgraph = dbelief;
        else if (variant_.kind == VariantKind::GataGtf) snap.dgraph = gs.facts;
        return snap;
    }

    // R2D2-style sequence replay: burn-in to warm the recurrent state, then
    // n-step targets on the update segment.
    void learn_step_recurrent(Rng& rng) {
        const int window = tc_.burn_in + tc_.seq_update;
        std::vector<size_t> starts;
        std::vector<double> weights;
        double beta = beta_at(learn_calls_);
        // sample sequence starts by priority, rejecting windows that cross
        // episode boundaries (short episodes shrink the burn-in)
        int wanted = std::max(1, tc_.batch_size / tc_.seq_update);
        for (int tries = 0; tries < wanted * 20 && static_cast<int>(starts.size()) < wanted; ++tries) {
            auto [idx, w] = buffer_.sample(1, beta, rng);
            size_t i = idx[0];
            size_t run = buffer_.run_length(i);
            if (static_cast<int>(run) < std::min(window, tc_.seq_update + 1)) continue;
            starts.push_back(i);
            weights.push_back(w[0]);
        }
        if (starts.empty()) return;

        double loss_total = 0;
        for (size_t s = 0; s < starts.size(); ++s) {
            size_t start = starts[s];
            size_t run = buffer_.run_length(start);
            int burn = std::min<int>(tc_.burn_in, static_cast<int>(run) - tc_.seq_update);
            burn = std::max(burn, 0);
            int updates = std::min<int>(tc_.seq_update, static_cast<int>(run) - burn);
            int lookahead = std::min<int>(static_cast<int>(run), burn + updates + tc_.nstep_max);

            Tape<T> t;
            auto h_online = t.leaf(Tensor<T>(1, cfg_.hidden));
            auto h_target = t.leaf(Tensor<T>(1, cfg_.hidden));
            std::vector<typename Tape<T>::Var> rows_online(static_cast<size_t>(lookahead), -1);
            std::vector<std::vector<double>> rows_target(static_cast<size_t>(lookahead));
            std::vector<std::vector<double>> rows_online_val(static_cast<size_t>(lookahead));
            for (int k = 0; k < lookahead; ++k) {
                const auto& item = buffer_.at(start + static_cast<size_t>(k));
                auto [row_o, ho] = online_.q_row_recurrent(t, item.state, h_online, updater_);
                h_online = ho;
                auto [row_t, ht] = target_.q_row_recurrent(t, item.state, h_target, updater_);
                h_target = ht;
                rows_online[static_cast<size_t>(k)] = row_o;
                const auto& ov = t.val(row_o).v;
                rows_online_val[static_cast<size_t>(k)].assign(ov.begin(), ov.end());
                const auto& tv = t.val(row_t).v;
                rows_target[static_cast<size_t>(k)].assign(tv.begin(), tv.end());
            }

            typename Tape<T>::Var loss = -1;
            double td_for_priority = 0;
            int losses = 0;
            for (int k = burn; k < burn + updates; ++k) {
                const auto& item = buffer_.at(start + static_cast<size_t>(k));
                int n = tc_.nstep_min + static_cast<int>(rng.below(
                            static_cast<uint64_t>(tc_.nstep_max - tc_.nstep_min + 1)));
                double acc = 0, discount = 1.0;
                bool terminal = false;
                int m = 0;
                for (; m < n; ++m) {
                    if (k + m >= lookahead) break;
                    const auto& it2 = buffer_.at(start + static_cast<size_t>(k + m));
                    acc += discount * it2.reward;
                    if (it2.done) {
                        terminal = true;
                        ++m;
                        break;
                    }
                    discount *= tc_.gamma;
                }
                if (!terminal && k + m < lookahead) {
                    const auto& ov = rows_online_val[static_cast<size_t>(k + m)];
                    int best = 0;
                    for (size_t a = 1; a < ov.size(); ++a)
                        if (ov[a] > ov[static_cast<size_t>(best)]) best = static_cast<int>(a);
                    acc += discount * rows_target[static_cast<size_t>(k + m)][static_cast<size_t>(best)];
                }
                auto q_sa = t.slice_cols(rows_online[static_cast<size_t>(k)], item.action, item.action + 1);
                auto l = t.scale(t.huber(q_sa, static_cast<T>(acc)),
                                 static_cast<T>(weights[s] / (starts.size() * std::max(1, updates))));
                loss = losses == 0 ? l : t.add(loss, l);
                ++losses;
                td_for_priority += std::abs(static_cast<double>(t.val(q_sa).v[0]) - acc);
            }
            if (losses == 0) continue;
            t.backward(loss);
            buffer_.update_priority(start, td_for_priority / losses);
            loss_total += static_cast<double>(t.val(loss).v[0]);
        }
        if (!opt_) opt_ = std::make_unique<nn::Optimizer<T>>(nn::make_radam<T>(static_cast<T>(tc_.lr)));
        opt_->step(online_params_);
        push_loss(loss_total);
    }

    void push_loss(double l) {
        recent_losses_.push_back(l);
        if (recent_losses_.size() > 50) recent_losses_.pop_front();
    }
    double recent_loss_mean() const {
        if (recent_losses_.empty()) return 0.0;
        double s = 0;
        for (double l : recent_losses_) s += l;
        return s / recent_losses_.size();
    }

    enc::EncoderConfig<T> cfg_;
    AgentVariant variant_;
    TrainConfig tc_;
    const Vocab* vocab_;
    const WordVocab* words_;
    upd::GraphUpdater<T>* updater_;
    upd::CgModel<T>* cg_;
    ActionSelector<T> online_;
    ActionSelector<T> target_;
    std::vector<Parameter<T>*> online_params_, target_params_;
    ReplayBuffer<T> buffer_;
    std::unique_ptr<nn::Optimizer<T>> opt_;
    ObservationCounter counter_;
    int64_t global_steps_ = 0;
    int64_t learn_calls_ = 0;
    std::deque<double> recent_losses_;
};

// Uniform-random play baseline for the same game set.
inline double random_baseline(const std::vector<world::GameSpec>& games, int episodes_per_game,
                              uint64_t seed) {
    Rng rng(seed);
    double total = 0;
    int count = 0;
    for (const auto& spec : games) {
        for (int e = 0; e < episodes_per_game; ++e) {
            auto rr = world::reset(spec);
            world::GameState gs = std::move(rr.state);
            auto cands = rr.candidates;
            int score = 0;
            while (gs.status == world::Status::Ongoing && gs.step_count < 50) {
                auto sr = world::step(gs, cands[rng.below(cands.size())]);
                score += sr.reward;
                cands = sr.candidates;
                if (sr.done) break;
            }
            total += static_cast<double>(score) / std::max(1, spec.max_score);
            ++count;
        }
    }
    return count ? total / count : 0.0;
}

}  // namespace gata::rl
