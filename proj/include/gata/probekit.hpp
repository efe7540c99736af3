#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/agent.hpp"

namespace gata::probe {

using nn::Tensor;

// ============================================================================
// Dataset construction
// ============================================================================

enum class Source { BeliefOg, BeliefCoc, GroundTruth, Random };

inline Source parse_source(const std::string& name) {
    if (name == "belief-og") return Source::BeliefOg;
    if (name == "belief-coc") return Source::BeliefCoc;
    if (name == "ground-truth") return Source::GroundTruth;
    if (name == "random") return Source::Random;
    throw std::invalid_argument("unknown probe source: " + name);
}

inline const char* source_name(Source s) {
    switch (s) {
        case Source::BeliefOg: return "belief-og";
        case Source::BeliefCoc: return "belief-coc";
        case Source::GroundTruth: return "ground-truth";
        case Source::Random: return "random";
    }
    return "?";
}

// Coarse entity classes used to sample plausible negative pairs.
inline int entity_type(const Vocab& vocab, int id) {
    const std::string& name = vocab.entity_name(id);
    auto in = [&](const std::vector<std::string>& xs) {
        return std::find(xs.begin(), xs.end(), name) != xs.end();
    };
    if (in(world::room_names())) return 0;
    if (name == "player") return 1;
    if (name == "cookbook" || name == "meal") return 2;
    if (in(world::ingredient_names())) return 3;
    if (in(world::appliance_names()) || name == "knife") return 4;
    if (in(world::container_names()) || in(world::support_names())) return 5;
    if (name == "wooden door" || name == "glass door") return 6;
    return 7;  // state words
}

struct ProbeSample {
    int node_i = 0, node_j = 0;
    std::vector<double> input;   // [2R graph slice; h_i; h_j]
    std::vector<int> labels;     // R_base binary labels
    bool positive = false;
    std::string game_id;
};

struct ProbeDataset {
    std::vector<ProbeSample> train, test;
    int input_dim = 0;
};

// Full adjacency values for one step under the chosen source.
struct StepGraph {
    std::vector<double> values;  // [2R][N][N]
    int n = 0, r = 0;

    double at(int channel, int i, int j) const {
        return values[(static_cast<size_t>(channel) * n + i) * n + j];
    }
};

template <class T>
ProbeDataset build_probe_dataset(const std::vector<world::GameSpec>& games, size_t train_games,
                                 Source source, upd::GraphUpdater<T>* updater,
                                 const Tensor<double>& node_embeddings, uint64_t seed) {
    const Vocab& voc = Vocab::cooking();
    const int N = voc.num_entities(), R = voc.num_relations();
    if (node_embeddings.rows() != N)
        throw std::invalid_argument("build_probe_dataset: embedding table must cover all entities");
    if ((source == Source::BeliefOg || source == Source::BeliefCoc) && !updater)
        throw std::invalid_argument("build_probe_dataset: belief sources need a frozen updater");

    ProbeDataset out;
    out.input_dim = 2 * R + 2 * node_embeddings.cols();
    Rng rng(seed);

    using Pair = std::pair<int, int>;
    for (size_t gi = 0; gi < games.size(); ++gi) {
        const auto& spec = games[gi];
        std::string game_id = std::to_string(spec.difficulty) + "-" + std::to_string(spec.seed);
        auto& sink = gi < train_games ? out.train : out.test;

        // Pass A: per step, which pairs are related and with which labels.
        std::vector<std::map<Pair, std::vector<int>>> related_by_step;
        {
            auto rr = world::reset(spec);
            world::GameState gs = std::move(rr.state);
            auto snapshot = [&]() {
                std::map<Pair, std::vector<int>> m;
                for (const auto& t : gs.seen.triples()) m[{t.head, t.tail}].push_back(t.rel);
                related_by_step.push_back(std::move(m));
            };
            snapshot();
            for (const auto& action : world::walkthrough(spec)) {
                auto sr = world::step(gs, action);
                snapshot();
                if (sr.done) break;
            }
        }
        const int steps = static_cast<int>(related_by_step.size());

        // One positive per (pair, game) at a random related step. The matched
        // negative prefers the same pair at a step where it is unrelated, so
        // the probe cannot ride on pair identity; a corpus-plausible pair at
        // the positive's step is the fallback for always-related pairs.
        std::map<Pair, std::vector<int>> pos_steps, neg_steps;
        for (int s = 0; s < steps; ++s)
            for (const auto& [pair, rels] : related_by_step[static_cast<size_t>(s)])
                pos_steps[pair].push_back(s);
        for (const auto& [pair, srel] : pos_steps)
            for (int s = 0; s < steps; ++s)
                if (!related_by_step[static_cast<size_t>(s)].count(pair)) neg_steps[pair].push_back(s);

        struct Planned {
            Pair pair;
            std::vector<int> labels;
            bool positive;
        };
        // Pair-matched sampling: a pair enters the dataset only when it also
        // has steps where it is unrelated; each positive step comes with two
        // negative steps of the same pair. Identical pair features on both
        // sides leave the graph slice as the only usable signal, and the
        // negative majority parks the no-signal fixed point at the all-zero
        // prediction.
        constexpr size_t kSamplesPerPair = 8;
        std::vector<std::vector<Planned>> schedule(static_cast<size_t>(steps));
        const std::vector<int> zero(static_cast<size_t>(R), 0);
        for (const auto& [pair, srel] : pos_steps) {
            auto nit = neg_steps.find(pair);
            if (nit == neg_steps.end() || nit->second.empty()) continue;  // always related: skip
            std::vector<int> rel_pick = srel;
            std::vector<int> unrel_pick = nit->second;
            rng.shuffle(rel_pick);
            rng.shuffle(unrel_pick);
            size_t k = std::min({kSamplesPerPair, rel_pick.size(), unrel_pick.size() / 2});
            if (k == 0 && !rel_pick.empty() && unrel_pick.size() >= 1) k = 1;
            for (size_t s = 0; s < k; ++s) {
                int ps = rel_pick[s];
                std::vector<int> labels = zero;
                for (int r : related_by_step[static_cast<size_t>(ps)].at(pair))
                    labels[static_cast<size_t>(r)] = 1;
                schedule[static_cast<size_t>(ps)].push_back({pair, labels, true});
                schedule[static_cast<size_t>(unrel_pick[2 * s % unrel_pick.size()])].push_back(
                    {pair, zero, false});
                schedule[static_cast<size_t>(unrel_pick[(2 * s + 1) % unrel_pick.size()])].push_back(
                    {pair, zero, false});
            }
        }

        // Pass B: replay once more, materializing the scheduled samples with
        // the chosen source's adjacency values.
        auto rr = world::reset(spec);
        world::GameState gs = std::move(rr.state);
        typename upd::GraphUpdater<T>::State ustate;
        if (updater) {
            ustate = updater->initial_state();
            ustate = updater->update_belief(ustate, rr.obs.tokens, {"restart"});
        }

        auto step_graph = [&]() {
            StepGraph g;
            g.n = N;
            g.r = R;
            if (source == Source::GroundTruth) {
                g.values = kg::to_dense(gs.seen).values();
            } else if (source == Source::Random) {
                // standard-normal draw, fixed for this step throughout training
                g.values.resize(static_cast<size_t>(2 * R) * N * N);
                for (size_t k = 0; k + 1 < g.values.size(); k += 2) {
                    double u1 = std::max(rng.real01(), 1e-12), u2 = rng.real01();
                    double rad = std::sqrt(-2.0 * std::log(u1));
                    g.values[k] = rad * std::cos(6.283185307179586 * u2);
                    g.values[k + 1] = rad * std::sin(6.283185307179586 * u2);
                }
            } else {
                g.values = ustate.belief.values();
            }
            return g;
        };

        auto emit_step = [&](int s) {
            if (schedule[static_cast<size_t>(s)].empty()) return;
            StepGraph graph = step_graph();
            for (const auto& plan : schedule[static_cast<size_t>(s)]) {
                ProbeSample sample;
                sample.node_i = plan.pair.first;
                sample.node_j = plan.pair.second;
                sample.positive = plan.positive;
                sample.game_id = game_id;
                sample.labels = plan.labels;
                for (int c = 0; c < 2 * R; ++c)
                    sample.input.push_back(graph.at(c, sample.node_i, sample.node_j));
                for (int d = 0; d < node_embeddings.cols(); ++d)
                    sample.input.push_back(node_embeddings.at(sample.node_i, d));
                for (int d = 0; d < node_embeddings.cols(); ++d)
                    sample.input.push_back(node_embeddings.at(sample.node_j, d));
                sink.push_back(std::move(sample));
            }
        };

        int s = 0;
        emit_step(s++);
        for (const auto& action : world::walkthrough(spec)) {
            auto sr = world::step(gs, action);
            if (updater) ustate = updater->update_belief(ustate, sr.obs.tokens, action.tokens);
            emit_step(s++);
            if (sr.done) break;
        }
    }
    return out;
}

// ============================================================================
// The linear probe
// ============================================================================

struct ProbeModel {
    nn::Parameter<double> W, b;  // [input_dim, R], [1, R]

    ProbeModel() = default;
    ProbeModel(int input_dim, int relations, uint64_t seed)
        : W("probe.W", nn::init_uniform<double>(input_dim, relations, *upd::make_rng(seed))),
          b("probe.b", Tensor<double>(1, relations)) {}

    std::vector<double> logits(const std::vector<double>& input) const {
        std::vector<double> out(static_cast<size_t>(W.value.cols()));
        for (int r = 0; r < W.value.cols(); ++r) {
            double acc = b.value.at(0, r);
            for (size_t k = 0; k < input.size(); ++k)
                acc += input[k] * W.value.at(static_cast<int>(k), r);
            out[static_cast<size_t>(r)] = acc;
        }
        return out;
    }
};

struct ProbeTrainConfig {
    int epochs = 10;
    double lr = 0.0001;  // Adam, non-rectified
    uint64_t seed = 1;
};

inline ProbeModel train_probe(const ProbeDataset& dataset, const ProbeTrainConfig& cfg = {}) {
    if (dataset.train.empty()) throw std::invalid_argument("train_probe: empty dataset");
    const int R = static_cast<int>(dataset.train.front().labels.size());
    ProbeModel model(dataset.input_dim, R, cfg.seed);

    nn::OptimConfig<double> oc;
    oc.lr = cfg.lr;
    oc.clip_norm = 0;
    oc.rectified = false;  // plain Adam for the probe
    nn::Optimizer<double> opt(oc);
    std::vector<nn::Parameter<double>*> params = {&model.W, &model.b};

    std::vector<size_t> order(dataset.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.seed ^ 0x9e37ull);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t idx : order) {
            const auto& s = dataset.train[idx];
            auto z = model.logits(s.input);
            // closed-form BCE gradient (summed over labels): sigma(z) - y
            for (int r = 0; r < R; ++r) {
                double g = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(r)])) -
                           static_cast<double>(s.labels[static_cast<size_t>(r)]);
                for (size_t k = 0; k < s.input.size(); ++k)
                    model.W.grad.at(static_cast<int>(k), r) += g * s.input[k];
                model.b.grad.at(0, r) += g;
            }
            opt.step(params);
        }
    }
    return model;
}

// Mean BCE of the probe on a sample set (training diagnostics).
inline double probe_loss(const ProbeModel& model, const std::vector<ProbeSample>& samples) {
    if (samples.empty()) return 0.0;
    double total = 0;
    for (const auto& s : samples) {
        auto z = model.logits(s.input);
        for (size_t r = 0; r < z.size(); ++r) {
            double y = s.labels[r];
            total += std::max(z[r], 0.0) - z[r] * y + std::log1p(std::exp(-std::abs(z[r])));
        }
    }
    return total / (samples.size() * samples.front().labels.size());
}

struct ProbeMetrics {
    double em_pos = 0, em_neg = 0, em_avg = 0;
    double f1_pos = 0, f1_neg = 0, f1_avg = 0;
};

inline ProbeMetrics eval_probe(const ProbeModel& model, const std::vector<ProbeSample>& samples) {
    double em[2] = {0, 0}, f1[2] = {0, 0};
    int count[2] = {0, 0};
    for (const auto& s : samples) {
        auto z = model.logits(s.input);
        int bucket = s.positive ? 0 : 1;
        bool exact = true;
        int overlap = 0, predicted = 0, actual = 0;
        for (size_t r = 0; r < z.size(); ++r) {
            int pred = z[r] > 0.0 ? 1 : 0;  // sigmoid threshold 0.5
            exact &= pred == s.labels[r];
            predicted += pred;
            actual += s.labels[r];
            overlap += pred && s.labels[r];
        }
        em[bucket] += exact ? 1 : 0;
        if (predicted == 0 && actual == 0) f1[bucket] += 1.0;
        else if (overlap > 0) f1[bucket] += 2.0 * overlap / (predicted + actual);
        ++count[bucket];
    }
    ProbeMetrics m;
    m.em_pos = count[0] ? em[0] / count[0] : 0;
    m.em_neg = count[1] ? em[1] / count[1] : 0;
    m.em_avg = 0.5 * (m.em_pos + m.em_neg);
    m.f1_pos = count[0] ? f1[0] / count[0] : 0;
    m.f1_neg = count[1] ? f1[1] / count[1] : 0;
    m.f1_avg = 0.5 * (m.f1_pos + m.f1_neg);
    return m;
}

// ============================================================================
// Heatmap export: labeled CSV plus a rasterized PPM image
// ============================================================================

namespace detail {

// 5x7 bitmap glyphs for the characters entity names use.
inline const std::array<uint8_t, 7>& glyph(char c) {
    static const std::map<char, std::array<uint8_t, 7>> font = {
        {'a', {0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f, 0x00}}, {'b', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x1e, 0x00}},
        {'c', {0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e, 0x00}}, {'d', {0x01, 0x01, 0x0f, 0x11, 0x11, 0x0f, 0x00}},
        {'e', {0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e, 0x00}}, {'f', {0x06, 0x08, 0x1c, 0x08, 0x08, 0x08, 0x00}},
        {'g', {0x00, 0x0f, 0x11, 0x0f, 0x01, 0x0e, 0x00}}, {'h', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x00}},
        {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x0e, 0x00}}, {'j', {0x02, 0x00, 0x06, 0x02, 0x12, 0x0c, 0x00}},
        {'k', {0x10, 0x12, 0x14, 0x18, 0x14, 0x12, 0x00}}, {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e, 0x00}},
        {'m', {0x00, 0x1a, 0x15, 0x15, 0x15, 0x15, 0x00}}, {'n', {0x00, 0x1e, 0x11, 0x11, 0x11, 0x11, 0x00}},
        {'o', {0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e, 0x00}}, {'p', {0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10, 0x00}},
        {'q', {0x00, 0x0f, 0x11, 0x0f, 0x01, 0x01, 0x00}}, {'r', {0x00, 0x16, 0x18, 0x10, 0x10, 0x10, 0x00}},
        {'s', {0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e, 0x00}}, {'t', {0x08, 0x1c, 0x08, 0x08, 0x09, 0x06, 0x00}},
        {'u', {0x00, 0x11, 0x11, 0x11, 0x13, 0x0d, 0x00}}, {'v', {0x00, 0x11, 0x11, 0x11, 0x0a, 0x04, 0x00}},
        {'w', {0x00, 0x11, 0x11, 0x15, 0x15, 0x0a, 0x00}}, {'x', {0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x00}},
        {'y', {0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e, 0x00}}, {'z', {0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x1f, 0x00}}, {'-', {0x00, 0x00, 0x00, 0x0e, 0x00, 0x00, 0x00}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    auto it = font.find(c);
    static const std::array<uint8_t, 7> blank = {0x00, 0x1f, 0x11, 0x11, 0x11, 0x1f, 0x00};
    return it == font.end() ? blank : it->second;
}

struct Canvas {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;

    Canvas(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 255) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        size_t i = (static_cast<size_t>(y) * width + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void text(int x, int y, const std::string& s) {
        for (size_t k = 0; k < s.size(); ++k) {
            const auto& g = glyph(s[k]);
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (g[static_cast<size_t>(row)] & (0x10 >> col))
                        set(x + static_cast<int>(k) * 6 + col, y + row, 0, 0, 0);
        }
    }

    void vertical_text(int x, int y, const std::string& s) {
        for (size_t k = 0; k < s.size(); ++k) {
            const auto& g = glyph(s[k]);
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (g[static_cast<size_t>(row)] & (0x10 >> col))
                        set(x + col, y + static_cast<int>(k) * 8 + row, 0, 0, 0);
        }
    }

    void save_ppm(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("heatmap: cannot open " + path);
        os << "P6\n" << width << " " << height << "\n255\n";
        os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    }
};

}  // namespace detail

// Writes the N x N slice for one relation as a labeled CSV and a rasterized
// image. An optional mean tensor (same layout) is subtracted first.
inline void export_heatmap(const std::vector<double>& values, int num_relations, int num_entities,
                           const std::string& relation, const Vocab& vocab,
                           const std::vector<double>* mean, const std::string& csv_path,
                           const std::string& image_path) {
    const int N = num_entities;
    const int rel = vocab.relation_id(relation);  // throws on unknown relation
    if (values.size() != static_cast<size_t>(2 * num_relations) * N * N)
        throw std::invalid_argument("export_heatmap: tensor size mismatch");
    if (mean && mean->size() != values.size())
        throw std::invalid_argument("export_heatmap: mean tensor size mismatch");

    std::vector<double> slice(static_cast<size_t>(N) * N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            size_t k = (static_cast<size_t>(rel) * N + i) * N + j;
            slice[static_cast<size_t>(i) * N + j] = values[k] - (mean ? (*mean)[k] : 0.0);
        }

    {
        std::ofstream os(csv_path, std::ios::trunc);
        if (!os) throw std::runtime_error("export_heatmap: cannot open " + csv_path);
        os << "entity";
        for (int j = 0; j < N; ++j) os << "," << vocab.entity_name(j);
        os << "\n";
        os.precision(17);
        for (int i = 0; i < N; ++i) {
            os << vocab.entity_name(i);
            for (int j = 0; j < N; ++j) os << "," << slice[static_cast<size_t>(i) * N + j];
            os << "\n";
        }
    }

    const int cell = 12, margin = 90;
    detail::Canvas canvas(margin + N * cell, margin + N * cell);
    double peak = 1e-9;
    for (double v : slice) peak = std::max(peak, std::abs(v));
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            double v = slice[static_cast<size_t>(i) * N + j] / peak;  // [-1, 1]
            uint8_t r = static_cast<uint8_t>(v > 0 ? 255 : 255 + v * 255);
            uint8_t g = static_cast<uint8_t>(255 - std::abs(v) * 255);
            uint8_t b = static_cast<uint8_t>(v < 0 ? 255 : 255 - v * 255);
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x)
                    canvas.set(margin + j * cell + x, margin + i * cell + y, r, g, b);
        }
    }
    for (int i = 0; i < N; ++i) {
        canvas.text(2, margin + i * cell + 2, vocab.entity_name(i).substr(0, 14));
        canvas.vertical_text(margin + i * cell + 3, 2, vocab.entity_name(i).substr(0, 11));
    }
    canvas.save_ppm(image_path);
}

inline void export_heatmap(const kg::BeliefGraph& belief, const std::string& relation,
                           const Vocab& vocab, const std::vector<double>* mean,
                           const std::string& csv_path, const std::string& image_path) {
    export_heatmap(belief.values(), belief.num_relations(), belief.num_entities(), relation, vocab,
                   mean, csv_path, image_path);
}

}  // namespace gata::probe
