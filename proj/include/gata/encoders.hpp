#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/kgraph.hpp"
#include "gata/nn.hpp"
#include "gata/vocab.hpp"

namespace gata::enc {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;

template <class T>
struct EncoderConfig {
    int word_dim = 300;
    int hidden = 64;       // H
    int gcn_layers = 6;
    int node_emb_dim = 100;
    int rel_emb_dim = 32;
    int bases = 3;
    int conv_layers = 5;
    int kernel = 5;

    static EncoderConfig tiny() {  // for gradient checks
        EncoderConfig c;
        c.word_dim = 12;
        c.hidden = 8;
        c.gcn_layers = 2;
        c.node_emb_dim = 6;
        c.rel_emb_dim = 4;
        c.conv_layers = 2;
        c.kernel = 3;
        return c;
    }
};

// Text reps plus their token mask; masked rows are zero by construction.
template <class T>
struct TextReps {
    typename Tape<T>::Var reps = -1;  // [L, H]
    std::vector<T> mask;
};

// ============================================================================
// Word embeddings (trainable by default, frozen when loaded from file)
// ============================================================================

template <class T>
struct WordEmbedding {
    Parameter<T> table;

    WordEmbedding() = default;
    WordEmbedding(const std::string& name, const WordVocab& vocab, int dim, Rng& rng)
        : table(name + ".words", nn::init_embedding<T>(vocab.size(), dim, rng)) {}

    typename Tape<T>::Var rows(Tape<T>& t, const std::vector<int>& ids) {
        return t.embedding(t.param(table), ids);
    }
    void collect(std::vector<Parameter<T>*>& out) { out.push_back(&table); }

    // Plain-text vectors, one "word v1 .. vD" line each; loaded words freeze
    // the whole table.
    void load_pretrained(const std::string& path, const WordVocab& vocab) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("word vectors: cannot open " + path);
        std::string line;
        int dim = table.value.cols();
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string word;
            ls >> word;
            int id = vocab.id(word);
            if (id == WordVocab::kUnk) continue;
            for (int j = 0; j < dim; ++j) {
                double x;
                if (!(ls >> x)) throw std::runtime_error("word vectors: short line for " + word);
                table.value.at(id, j) = static_cast<T>(x);
            }
        }
        table.trainable = false;
    }
};

// ============================================================================
// Text encoder: conv stack + single-head self-attention + MLP, layer norm
// after each component, positional encodings at block input
// ============================================================================

template <class T>
struct TextEncoder {
    EncoderConfig<T> cfg;
    WordEmbedding<T>* wemb = nullptr;
    std::vector<nn::Conv1d<T>> convs;
    std::vector<Parameter<T>> conv_ln_g, conv_ln_b;
    nn::Linear<T> att_q, att_k, att_v, att_o;
    Parameter<T> att_ln_g, att_ln_b;
    nn::Linear<T> mlp1, mlp2;
    Parameter<T> mlp_ln_g, mlp_ln_b;

    TextEncoder() = default;
    TextEncoder(const std::string& name, const EncoderConfig<T>& c, WordEmbedding<T>* words, Rng& rng)
        : cfg(c), wemb(words) {
        for (int i = 0; i < c.conv_layers; ++i) {
            int in = i == 0 ? c.word_dim : c.hidden;
            convs.emplace_back(name + ".conv" + std::to_string(i), in, c.hidden, c.kernel, rng);
            conv_ln_g.emplace_back(name + ".conv" + std::to_string(i) + ".ln.g",
                                   Tensor<T>::full(1, c.hidden, T(1)));
            conv_ln_b.emplace_back(name + ".conv" + std::to_string(i) + ".ln.b", Tensor<T>(1, c.hidden));
        }
        att_q = {name + ".att.q", c.hidden, c.hidden, rng};
        att_k = {name + ".att.k", c.hidden, c.hidden, rng};
        att_v = {name + ".att.v", c.hidden, c.hidden, rng};
        att_o = {name + ".att.o", c.hidden, c.hidden, rng};
        att_ln_g = {name + ".att.ln.g", Tensor<T>::full(1, c.hidden, T(1))};
        att_ln_b = {name + ".att.ln.b", Tensor<T>(1, c.hidden)};
        mlp1 = {name + ".mlp1", c.hidden, c.hidden, rng};
        mlp2 = {name + ".mlp2", c.hidden, c.hidden, rng};
        mlp_ln_g = {name + ".mlp.ln.g", Tensor<T>::full(1, c.hidden, T(1))};
        mlp_ln_b = {name + ".mlp.ln.b", Tensor<T>(1, c.hidden)};
    }

    TextReps<T> encode(Tape<T>& t, const std::vector<int>& token_ids,
                       const std::vector<T>* token_mask = nullptr) {
        if (token_ids.empty()) throw std::invalid_argument("TextEncoder: empty input");
        const int L = static_cast<int>(token_ids.size());
        std::vector<T> mask = token_mask ? *token_mask : std::vector<T>(static_cast<size_t>(L), T(1));

        auto x = wemb->rows(t, token_ids);
        x = t.add(x, t.leaf(nn::positional_encoding<T>(L, cfg.word_dim, &mask)));
        x = t.mask_rows(x, mask);

        for (size_t i = 0; i < convs.size(); ++i) {
            auto y = t.relu_(convs[i].apply(t, x));
            if (i > 0) y = t.add(y, x);
            y = t.layer_norm(y, t.param(conv_ln_g[i]), t.param(conv_ln_b[i]));
            x = t.mask_rows(y, mask);
        }
        {
            auto q = att_q.apply(t, x), k = att_k.apply(t, x), v = att_v.apply(t, x);
            auto y = att_o.apply(t, nn::attention(t, q, k, v, mask));
            y = t.layer_norm(t.add(y, x), t.param(att_ln_g), t.param(att_ln_b));
            x = t.mask_rows(y, mask);
        }
        {
            auto y = mlp2.apply(t, t.relu_(mlp1.apply(t, x)));
            y = t.layer_norm(t.add(y, x), t.param(mlp_ln_g), t.param(mlp_ln_b));
            x = t.mask_rows(y, mask);
        }
        return {x, std::move(mask)};
    }

    void collect(std::vector<Parameter<T>*>& out) {
        for (size_t i = 0; i < convs.size(); ++i) {
            convs[i].collect(out);
            out.push_back(&conv_ln_g[i]);
            out.push_back(&conv_ln_b[i]);
        }
        for (auto* l : {&att_q, &att_k, &att_v, &att_o, &mlp1, &mlp2}) l->collect(out);
        for (auto* p : {&att_ln_g, &att_ln_b, &mlp_ln_g, &mlp_ln_b}) out.push_back(p);
    }
};

// ============================================================================
// Graph encoder: R-GCN with relation-label conditioning, basis decomposition
// and highway gates; tanh keeps hidden values in (-1, 1)
// ============================================================================

template <class T>
struct GraphEncoder {
    EncoderConfig<T> cfg;
    WordEmbedding<T>* wemb = nullptr;
    int num_entities = 0, num_channels = 0, rel_feat_dim = 0;
    Tensor<T> node_name_mix, rel_name_mix;  // constant row-stochastic mixers

    Parameter<T> node_emb, rel_emb;
    nn::Linear<T> input_proj;
    struct Layer {
        std::vector<Parameter<T>> basis_h;  // [H, H] per basis
        std::vector<Parameter<T>> basis_e;  // [rel_feat, H] per basis
        Parameter<T> coeff;                 // [2R, bases]
        Parameter<T> self_h, self_e;        // W0 split
        nn::Linear<T> gate;
    };
    std::vector<Layer> layers;

    GraphEncoder() = default;
    GraphEncoder(const std::string& name, const EncoderConfig<T>& c, const Vocab& vocab,
                 const WordVocab& words, WordEmbedding<T>* we, Rng& rng)
        : cfg(c), wemb(we) {
        num_entities = vocab.num_entities();
        num_channels = 2 * vocab.num_relations();
        rel_feat_dim = c.rel_emb_dim + c.word_dim;

        node_name_mix = Tensor<T>(num_entities, we->table.value.rows());
        for (int i = 0; i < num_entities; ++i) {
            auto toks = tokenize(vocab.entity_name(i));
            for (const auto& tok : toks)
                node_name_mix.at(i, words.id(tok)) += T(1) / static_cast<T>(toks.size());
        }
        rel_name_mix = Tensor<T>(num_channels, we->table.value.rows());
        for (int r = 0; r < num_channels; ++r) {
            // inverse channels reuse the base relation's label
            const std::string& label = vocab.relation_name(r % vocab.num_relations());
            rel_name_mix.at(r, words.id(label)) = T(1);
        }

        node_emb = {name + ".nodes", nn::init_embedding<T>(num_entities, c.node_emb_dim, rng)};
        rel_emb = {name + ".rels", nn::init_embedding<T>(num_channels, c.rel_emb_dim, rng)};
        input_proj = {name + ".in", c.node_emb_dim + c.word_dim, c.hidden, rng};
        for (int l = 0; l < c.gcn_layers; ++l) {
            Layer layer;
            const std::string ln = name + ".l" + std::to_string(l);
            for (int b = 0; b < c.bases; ++b) {
                layer.basis_h.emplace_back(ln + ".Vh" + std::to_string(b),
                                           nn::init_uniform<T>(c.hidden, c.hidden, rng));
                layer.basis_e.emplace_back(ln + ".Ve" + std::to_string(b),
                                           nn::init_uniform<T>(rel_feat_dim, c.hidden, rng));
            }
            layer.coeff = {ln + ".a", nn::init_uniform<T>(num_channels, c.bases, rng)};
            layer.self_h = {ln + ".W0h", nn::init_uniform<T>(c.hidden, c.hidden, rng)};
            layer.self_e = {ln + ".W0e", nn::init_uniform<T>(rel_feat_dim, c.hidden, rng)};
            layer.gate = {ln + ".gate", c.hidden, c.hidden, rng};
            layers.push_back(std::move(layer));
        }
    }

    // adj: 2R channel matrices [N,N], entry [head][tail]; aggregation follows
    // incoming edges, so each channel is transposed once up front.
    typename Tape<T>::Var encode(Tape<T>& t, const std::vector<typename Tape<T>::Var>& adj,
                                 const std::vector<T>* node_mask = nullptr) {
        using V = typename Tape<T>::Var;
        if (static_cast<int>(adj.size()) != num_channels)
            throw std::invalid_argument("GraphEncoder: expected " + std::to_string(num_channels) +
                                        " adjacency channels");
        const int N = num_entities, H = cfg.hidden, R2 = num_channels;
        std::vector<T> mask = node_mask ? *node_mask : std::vector<T>(static_cast<size_t>(N), T(1));

        std::vector<V> incoming(adj.size());
        for (size_t r = 0; r < adj.size(); ++r) {
            if (t.val(adj[r]).rows() != N || t.val(adj[r]).cols() != N)
                throw std::invalid_argument("GraphEncoder: channel shape mismatch");
            incoming[r] = t.transpose(adj[r]);
        }

        auto words = t.param(wemb->table);
        auto h0 = t.concat_cols({t.param(node_emb), t.matmul(t.leaf(node_name_mix), words)});
        auto E = t.concat_cols({t.param(rel_emb), t.matmul(t.leaf(rel_name_mix), words)});
        // tanh here keeps the highway blend inside (-1, 1) at every layer
        auto h = t.mask_rows(t.tanh_(input_proj.apply(t, h0)), mask);

        auto ones_n1 = t.leaf(Tensor<T>::full(N, 1, T(1)));
        auto ones_row_r = t.leaf(Tensor<T>::full(1, R2, T(1)));

        for (auto& layer : layers) {
            // basis-combined per-relation projections of node features
            std::vector<V> pstack;
            for (int b = 0; b < cfg.bases; ++b)
                pstack.push_back(t.reshape(t.matmul(h, t.param(layer.basis_h[b])), 1, N * H));
            auto comb = t.matmul(t.param(layer.coeff), t.concat_rows(pstack));  // [2R, N*H]

            // basis-combined relation-feature projections
            V e_comb = -1;
            for (int b = 0; b < cfg.bases; ++b) {
                auto part = t.mul_colvec(t.matmul(E, t.param(layer.basis_e[b])),
                                         t.slice_cols(t.param(layer.coeff), b, b + 1));
                e_comb = b == 0 ? part : t.add(e_comb, part);  // [2R, H]
            }

            V msg = -1;
            for (int r = 0; r < R2; ++r) {
                auto proj = t.reshape(t.slice_rows(comb, r, r + 1), N, H);
                auto m = t.matmul(incoming[static_cast<size_t>(r)], proj);
                auto weight_sums = t.row_sums(incoming[static_cast<size_t>(r)]);  // [N,1]
                m = t.add(m, t.matmul(weight_sums, t.slice_rows(e_comb, r, r + 1)));
                msg = r == 0 ? m : t.add(msg, m);
            }

            // self term appears once per relation: 2R * W0h h + sum_r W0e E_r
            auto self_h = t.scale(t.matmul(h, t.param(layer.self_h)), static_cast<T>(R2));
            auto self_e = t.matmul(ones_n1, t.matmul(ones_row_r, t.matmul(E, t.param(layer.self_e))));
            auto pre = t.add(t.add(msg, self_h), self_e);
            auto cand = t.tanh_(pre);
            auto g = t.sigmoid_(layer.gate.apply(t, cand));
            auto keep = t.sub(t.leaf(Tensor<T>::full(N, H, T(1))), g);
            h = t.mask_rows(t.add(t.mul(g, cand), t.mul(keep, h)), mask);
        }
        return h;
    }

    // Adjacency channels for a fixed belief tensor (play-time inputs).
    std::vector<typename Tape<T>::Var> adjacency_leaves(Tape<T>& t, const kg::BeliefGraph& g) const {
        if (g.num_channels() != num_channels || g.num_entities() != num_entities)
            throw std::invalid_argument("GraphEncoder: belief tensor shape mismatch");
        std::vector<typename Tape<T>::Var> out;
        const int N = num_entities;
        for (int c = 0; c < num_channels; ++c) {
            Tensor<T> slice(N, N);
            const double* src = g.channel(c);
            for (int i = 0; i < N * N; ++i) slice.v[static_cast<size_t>(i)] = static_cast<T>(src[i]);
            out.push_back(t.leaf(std::move(slice)));
        }
        return out;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&node_emb);
        out.push_back(&rel_emb);
        input_proj.collect(out);
        for (auto& l : layers) {
            for (auto& p : l.basis_h) out.push_back(&p);
            for (auto& p : l.basis_e) out.push_back(&p);
            out.push_back(&l.coeff);
            out.push_back(&l.self_h);
            out.push_back(&l.self_e);
            l.gate.collect(out);
        }
    }
};

// ============================================================================
// Bi-directional attention aggregator (trilinear similarity)
// ============================================================================

template <class T>
struct Aggregator {
    nn::Linear<T> proj_a, proj_b;      // into the shared space
    Parameter<T> tri_a, tri_b, tri_ab; // trilinear weight split: [H,1], [H,1], [1,H]
    nn::Linear<T> out_a, out_b;        // 4H -> H projections

    Aggregator() = default;
    Aggregator(const std::string& name, int hidden, Rng& rng)
        : proj_a(name + ".pa", hidden, hidden, rng),
          proj_b(name + ".pb", hidden, hidden, rng),
          tri_a(name + ".wa", nn::init_uniform<T>(hidden, 1, rng)),
          tri_b(name + ".wb", nn::init_uniform<T>(hidden, 1, rng)),
          tri_ab(name + ".wab", nn::init_uniform<T>(1, hidden, rng)),
          out_a(name + ".oa", 4 * hidden, hidden, rng),
          out_b(name + ".ob", 4 * hidden, hidden, rng) {}

    // a: [La,H] with mask_a, b: [Lb,H] with mask_b ->
    //   first:  [La,H] (a attended by b), second: [Lb,H] (b attended by a)
    std::pair<typename Tape<T>::Var, typename Tape<T>::Var> aggregate(
        Tape<T>& t, typename Tape<T>::Var a, const std::vector<T>& mask_a,
        typename Tape<T>::Var b, const std::vector<T>& mask_b) {
        using V = typename Tape<T>::Var;
        const int La = t.val(a).rows(), Lb = t.val(b).rows();

        V ap = t.mask_rows(proj_a.apply(t, a), mask_a);
        V bp = t.mask_rows(proj_b.apply(t, b), mask_b);

        auto ones_a = t.leaf(Tensor<T>::full(La, 1, T(1)));
        auto ones_b = t.leaf(Tensor<T>::full(1, Lb, T(1)));
        V sim = t.matmul(t.matmul(ap, t.param(tri_a)), ones_b);
        sim = t.add(sim, t.matmul(ones_a, t.transpose(t.matmul(bp, t.param(tri_b)))));
        V a_scaled = t.mul(ap, t.matmul(ones_a, t.param(tri_ab)));
        sim = t.add(sim, t.matmul(a_scaled, t.transpose(bp)));  // [La, Lb]

        V sim_b = t.softmax_rows(sim, mask_b);                  // rows over b
        V sim_a = t.softmax_rows(t.transpose(sim), mask_a);     // rows over a, [Lb, La]

        V P = t.matmul(sim_b, bp);                      // [La,H]
        V Q = t.matmul(t.matmul(sim_b, sim_a), ap);     // [La,H]
        V a_out = t.concat_cols({ap, P, t.mul(ap, P), t.mul(ap, Q)});
        a_out = t.mask_rows(out_a.apply(t, a_out), mask_a);

        V Pb = t.matmul(sim_a, ap);                     // [Lb,H]
        V Qb = t.matmul(t.matmul(sim_a, sim_b), bp);    // [Lb,H]
        V b_out = t.concat_cols({bp, Pb, t.mul(bp, Pb), t.mul(bp, Qb)});
        b_out = t.mask_rows(out_b.apply(t, b_out), mask_b);
        return {a_out, b_out};
    }

    void collect(std::vector<Parameter<T>*>& out) {
        for (auto* l : {&proj_a, &proj_b, &out_a, &out_b}) l->collect(out);
        for (auto* p : {&tri_a, &tri_b, &tri_ab}) out.push_back(p);
    }
};

// ============================================================================
// Candidate scorer: self-attention over state reps, pooling, 2-layer MLP
// ============================================================================

template <class T>
struct Scorer {
    nn::Linear<T> att_q, att_k, att_v, att_o;
    nn::Linear<T> mlp1, mlp2;
    int state_parts = 1;

    Scorer() = default;
    Scorer(const std::string& name, int hidden, int parts, Rng& rng)
        : att_q(name + ".q", hidden, hidden, rng),
          att_k(name + ".k", hidden, hidden, rng),
          att_v(name + ".v", hidden, hidden, rng),
          att_o(name + ".o", hidden, hidden, rng),
          mlp1(name + ".mlp1", (parts + 1) * hidden, hidden, rng),
          mlp2(name + ".mlp2", hidden, 1, rng),
          state_parts(parts) {}

    // Self-attention then masked mean pooling over each state part; the
    // concatenated result is the state vector fed to the MLP.
    typename Tape<T>::Var pooled_state(
        Tape<T>& t, const std::vector<std::pair<typename Tape<T>::Var, std::vector<T>>>& state) {
        using V = typename Tape<T>::Var;
        if (static_cast<int>(state.size()) != state_parts)
            throw std::invalid_argument("Scorer: wrong number of state parts");
        std::vector<V> pooled;
        for (const auto& [reps, mask] : state) {
            auto q = att_q.apply(t, reps), k = att_k.apply(t, reps), v = att_v.apply(t, reps);
            auto sa = att_o.apply(t, nn::attention(t, q, k, v, mask));
            pooled.push_back(t.masked_mean_rows(sa, mask));
        }
        return pooled.size() == 1 ? pooled[0] : t.concat_cols(pooled);
    }

    typename Tape<T>::Var score_pooled(Tape<T>& t, typename Tape<T>::Var state_vec,
                                       const std::vector<typename Tape<T>::Var>& candidates) {
        using V = typename Tape<T>::Var;
        if (candidates.empty()) throw std::invalid_argument("Scorer: no candidates");
        std::vector<V> scores;
        for (V cand : candidates) {
            auto x = t.concat_cols({state_vec, cand});
            scores.push_back(mlp2.apply(t, t.relu_(mlp1.apply(t, x))));
        }
        return scores.size() == 1 ? scores[0] : t.concat_cols(scores);
    }

    // state: one or two (reps, mask) pairs; candidates: pooled [1,H] rows.
    // Returns a [1, N_C] row of scores.
    typename Tape<T>::Var score(Tape<T>& t,
                                const std::vector<std::pair<typename Tape<T>::Var, std::vector<T>>>& state,
                                const std::vector<typename Tape<T>::Var>& candidates) {
        return score_pooled(t, pooled_state(t, state), candidates);
    }

    void collect(std::vector<Parameter<T>*>& out) {
        for (auto* l : {&att_q, &att_k, &att_v, &att_o, &mlp1, &mlp2}) l->collect(out);
    }
};

// Pools candidate token reps into one [1,H] row per candidate.
template <class T>
std::vector<typename Tape<T>::Var> pool_candidates(Tape<T>& t, TextEncoder<T>& enc,
                                                   const std::vector<std::vector<int>>& candidate_ids) {
    std::vector<typename Tape<T>::Var> out;
    out.reserve(candidate_ids.size());
    for (const auto& ids : candidate_ids) {
        auto reps = enc.encode(t, ids);
        out.push_back(t.masked_mean_rows(reps.reps, reps.mask));
    }
    return out;
}

}  // namespace gata::enc
