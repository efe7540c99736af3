#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gata/encoders.hpp"
#include "test_util.hpp"

using namespace gata;
using namespace gata::enc;
using testutil::grad_check_param;
using testutil::tiny_vocab;
using testutil::tiny_words;

using TapeD = nn::Tape<double>;
using VarD = TapeD::Var;

namespace {

struct Fixture {
    EncoderConfig<double> cfg = EncoderConfig<double>::tiny();
    Rng rng{99};
    WordEmbedding<double> wemb{"w", tiny_words(), EncoderConfig<double>::tiny().word_dim, rng};
    TextEncoder<double> text{"t", cfg, &wemb, rng};
    GraphEncoder<double> graph{"g", cfg, tiny_vocab(), tiny_words(), &wemb, rng};
    Aggregator<double> aggr{"a", cfg.hidden, rng};
    Scorer<double> scorer1{"s1", cfg.hidden, 1, rng};
};

std::vector<VarD> random_adjacency(TapeD& t, int channels, int n, Rng& rng, bool needs_grad = false) {
    std::vector<VarD> adj;
    for (int c = 0; c < channels; ++c) {
        nn::Tensor<double> m(n, n);
        for (auto& x : m.v) x = rng.real01() * 2.0 - 1.0;
        adj.push_back(t.leaf(std::move(m), needs_grad));
    }
    return adj;
}

}  // namespace

// ---------------------------------------------------------------------------
// graph encoder
// ---------------------------------------------------------------------------

TEST_CASE("graph encoder: zero adjacency isolates nodes (self term only)") {
    Fixture f;
    const int n = tiny_vocab().num_entities();
    auto run = [&] {
        TapeD t;
        std::vector<VarD> adj;
        for (int c = 0; c < f.graph.num_channels; ++c) adj.push_back(t.leaf(nn::Tensor<double>(n, n)));
        return t.val(f.graph.encode(t, adj)).v;
    };
    auto base = run();
    // perturbing node 3's embedding must leave all other nodes untouched
    for (int j = 0; j < f.cfg.node_emb_dim; ++j) f.graph.node_emb.value.at(3, j) += 0.37;
    auto after = run();
    const int H = f.cfg.hidden;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < H; ++j) {
            if (i == 3) continue;
            REQUIRE(after[static_cast<size_t>(i * H + j)] == base[static_cast<size_t>(i * H + j)]);
        }
    bool changed = false;
    for (int j = 0; j < H; ++j) changed |= after[static_cast<size_t>(3 * H + j)] != base[static_cast<size_t>(3 * H + j)];
    REQUIRE(changed);
}

TEST_CASE("graph encoder: saturated-low highway gates reproduce the input representations") {
    Fixture f;
    for (auto& layer : f.graph.layers)
        std::fill(layer.gate.b.value.v.begin(), layer.gate.b.value.v.end(), -1e3);
    const int n = tiny_vocab().num_entities();
    Rng arng(7);
    TapeD t;
    auto adj = random_adjacency(t, f.graph.num_channels, n, arng);
    auto out = f.graph.encode(t, adj);

    // expected: tanh(input_proj([node_emb; name word means])) never updated
    auto words = t.param(f.wemb.table);
    auto h0 = t.concat_cols({t.param(f.graph.node_emb), t.matmul(t.leaf(f.graph.node_name_mix), words)});
    auto expect = t.tanh_(f.graph.input_proj.apply(t, h0));
    for (size_t i = 0; i < t.val(out).v.size(); ++i)
        REQUIRE_THAT(t.val(out).v[i], Catch::Matchers::WithinAbs(t.val(expect).v[i], 1e-12));
}

TEST_CASE("graph encoder: permuting nodes permutes outputs") {
    Fixture f;
    const int n = tiny_vocab().num_entities(), H = f.cfg.hidden;
    std::vector<int> perm = {2, 0, 5, 1, 4, 3};

    Rng arng(13);
    nn::Tensor<double> base_adj[20];
    for (int c = 0; c < f.graph.num_channels; ++c) {
        base_adj[c] = nn::Tensor<double>(n, n);
        for (auto& x : base_adj[c].v) x = arng.real01() * 2.0 - 1.0;
    }
    std::vector<double> out_base;
    {
        TapeD t;
        std::vector<VarD> adj;
        for (int c = 0; c < f.graph.num_channels; ++c) adj.push_back(t.leaf(base_adj[c]));
        out_base = t.val(f.graph.encode(t, adj)).v;
    }

    // permute embeddings, name mixers and adjacency consistently
    auto node_emb = f.graph.node_emb.value;
    auto name_mix = f.graph.node_name_mix;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < f.cfg.node_emb_dim; ++j)
            f.graph.node_emb.value.at(i, j) = node_emb.at(perm[static_cast<size_t>(i)], j);
        for (int j = 0; j < name_mix.cols(); ++j)
            f.graph.node_name_mix.at(i, j) = name_mix.at(perm[static_cast<size_t>(i)], j);
    }
    std::vector<double> out_perm;
    {
        TapeD t;
        std::vector<VarD> adj;
        for (int c = 0; c < f.graph.num_channels; ++c) {
            nn::Tensor<double> m(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    m.at(i, j) = base_adj[c].at(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
            adj.push_back(t.leaf(std::move(m)));
        }
        out_perm = t.val(f.graph.encode(t, adj)).v;
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < H; ++j)
            REQUIRE_THAT(out_perm[static_cast<size_t>(i * H + j)],
                         Catch::Matchers::WithinAbs(
                             out_base[static_cast<size_t>(perm[static_cast<size_t>(i)] * H + j)], 1e-9));
}

TEST_CASE("graph encoder: hidden values stay inside (-1, 1)") {
    Fixture f;
    Rng arng(5);
    TapeD t;
    auto adj = random_adjacency(t, f.graph.num_channels, tiny_vocab().num_entities(), arng);
    auto out = f.graph.encode(t, adj);
    for (double v : t.val(out).v) {
        REQUIRE(v < 1.0);
        REQUIRE(v > -1.0);
    }
}

TEST_CASE("graph encoder: zero-adjacency padded nodes do not change real-node outputs") {
    Fixture f;
    const int n = tiny_vocab().num_entities(), H = f.cfg.hidden;
    Rng arng(31);
    // node n-1 is padding: zero rows and columns everywhere
    nn::Tensor<double> chans[20];
    for (int c = 0; c < f.graph.num_channels; ++c) {
        chans[c] = nn::Tensor<double>(n, n);
        for (int i = 0; i + 1 < n; ++i)
            for (int j = 0; j + 1 < n; ++j) chans[c].at(i, j) = arng.real01() - 0.5;
    }
    auto run = [&](const std::vector<double>* mask) {
        TapeD t;
        std::vector<VarD> adj;
        for (int c = 0; c < f.graph.num_channels; ++c) adj.push_back(t.leaf(chans[c]));
        return t.val(f.graph.encode(t, adj, mask)).v;
    };
    auto full = run(nullptr);
    std::vector<double> mask(static_cast<size_t>(n), 1.0);
    mask.back() = 0.0;
    auto masked = run(&mask);
    for (int i = 0; i + 1 < n; ++i)
        for (int j = 0; j < H; ++j)
            REQUIRE(masked[static_cast<size_t>(i * H + j)] == full[static_cast<size_t>(i * H + j)]);
}

TEST_CASE("graph encoder rejects wrong channel counts") {
    Fixture f;
    TapeD t;
    std::vector<VarD> adj = {t.leaf(nn::Tensor<double>(6, 6))};
    REQUIRE_THROWS_AS(f.graph.encode(t, adj), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// text encoder
// ---------------------------------------------------------------------------

TEST_CASE("text encoder: output is L x H for any L >= 1") {
    Fixture f;
    for (int L : {1, 2, 7}) {
        TapeD t;
        std::vector<int> ids(static_cast<size_t>(L), tiny_words().id("alpha"));
        auto reps = f.text.encode(t, ids);
        REQUIRE(t.val(reps.reps).rows() == L);
        REQUIRE(t.val(reps.reps).cols() == f.cfg.hidden);
        REQUIRE(t.val(reps.reps).all_finite());
    }
    TapeD t;
    REQUIRE_THROWS_AS(f.text.encode(t, {}), std::invalid_argument);
}

TEST_CASE("text encoder: appended padding never changes unpadded positions") {
    Fixture f;
    std::vector<int> ids = tiny_words().encode({"take", "alpha", "go"});
    std::vector<double> base;
    {
        TapeD t;
        base = t.val(f.text.encode(t, ids).reps).v;
    }
    std::vector<int> padded = ids;
    padded.push_back(WordVocab::kPad);
    padded.push_back(WordVocab::kPad);
    std::vector<double> mask = {1, 1, 1, 0, 0};
    TapeD t;
    auto reps = f.text.encode(t, padded, &mask);
    // padded keys contribute exact zeros; GEMM reduction order may still
    // differ across lengths, so compare to double round-off
    for (size_t i = 0; i < base.size(); ++i)
        REQUIRE_THAT(t.val(reps.reps).v[i], Catch::Matchers::WithinAbs(base[i], 1e-12));
    // masked rows are zero
    for (int i = 3; i < 5; ++i)
        for (int j = 0; j < f.cfg.hidden; ++j) REQUIRE(t.val(reps.reps).at(i, j) == 0.0);
}

TEST_CASE("text encoder: deterministic for a fixed seed") {
    auto run = [] {
        Fixture f;
        TapeD t;
        auto reps = f.text.encode(t, tiny_words().encode({"take", "beta"}));
        return t.val(reps.reps).v;
    };
    REQUIRE(run() == run());
}

// ---------------------------------------------------------------------------
// aggregator
// ---------------------------------------------------------------------------

TEST_CASE("aggregator: zero trilinear weights give uniform attention (mean rows)") {
    Fixture f;
    for (auto* p : {&f.aggr.tri_a, &f.aggr.tri_b, &f.aggr.tri_ab})
        std::fill(p->value.v.begin(), p->value.v.end(), 0.0);
    // expose P directly: out_a = [0 I 0 0] selecting the P block
    std::fill(f.aggr.out_a.W.value.v.begin(), f.aggr.out_a.W.value.v.end(), 0.0);
    std::fill(f.aggr.out_a.b.value.v.begin(), f.aggr.out_a.b.value.v.end(), 0.0);
    const int H = f.cfg.hidden;
    for (int j = 0; j < H; ++j) f.aggr.out_a.W.value.at(H + j, j) = 1.0;

    Rng arng(3);
    TapeD t;
    auto a = t.leaf(nn::init_uniform<double>(3, H, arng));
    auto b = t.leaf(nn::init_uniform<double>(5, H, arng));
    std::vector<double> ma(3, 1.0), mb(5, 1.0);
    auto [a_out, b_out] = f.aggr.aggregate(t, a, ma, b, mb);

    // P rows must equal the mean of the projected b rows
    auto bp = t.mask_rows(f.aggr.proj_b.apply(t, b), mb);
    std::vector<double> mean(static_cast<size_t>(H), 0.0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < H; ++j) mean[static_cast<size_t>(j)] += t.val(bp).at(i, j) / 5.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < H; ++j)
            REQUIRE_THAT(t.val(a_out).at(i, j),
                         Catch::Matchers::WithinAbs(mean[static_cast<size_t>(j)], 1e-9));
    (void)b_out;
}

TEST_CASE("aggregator matches a direct loop evaluation") {
    Fixture f;
    const int H = f.cfg.hidden, La = 3, Lb = 4;
    Rng arng(17);
    auto A = nn::init_uniform<double>(La, H, arng);
    auto B = nn::init_uniform<double>(Lb, H, arng);
    std::vector<double> ma(La, 1.0), mb(Lb, 1.0);

    TapeD t;
    auto [a_out, b_out] = f.aggr.aggregate(t, t.leaf(A), ma, t.leaf(B), mb);

    // oracle: straight loops over the aggregation formulas
    auto lin = [&](const nn::Linear<double>& l, const nn::Tensor<double>& X) {
        nn::Tensor<double> Y(X.rows(), H);
        for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < H; ++j) {
                double acc = l.b.value.at(0, j);
                for (int k = 0; k < X.cols(); ++k) acc += X.at(i, k) * l.W.value.at(k, j);
                Y.at(i, j) = acc;
            }
        return Y;
    };
    auto AP = lin(f.aggr.proj_a, A), BP = lin(f.aggr.proj_b, B);
    nn::Tensor<double> S(La, Lb);
    for (int i = 0; i < La; ++i)
        for (int j = 0; j < Lb; ++j) {
            double s = 0;
            for (int k = 0; k < H; ++k) {
                s += AP.at(i, k) * f.aggr.tri_a.value.at(k, 0);
                s += BP.at(j, k) * f.aggr.tri_b.value.at(k, 0);
                s += AP.at(i, k) * BP.at(j, k) * f.aggr.tri_ab.value.at(0, k);
            }
            S.at(i, j) = s;
        }
    auto softmax_rows = [](const nn::Tensor<double>& X) {
        nn::Tensor<double> P(X.rows(), X.cols());
        for (int i = 0; i < X.rows(); ++i) {
            double mx = -1e300, den = 0;
            for (int j = 0; j < X.cols(); ++j) mx = std::max(mx, X.at(i, j));
            for (int j = 0; j < X.cols(); ++j) den += std::exp(X.at(i, j) - mx);
            for (int j = 0; j < X.cols(); ++j) P.at(i, j) = std::exp(X.at(i, j) - mx) / den;
        }
        return P;
    };
    nn::Tensor<double> St(Lb, La);
    for (int i = 0; i < La; ++i)
        for (int j = 0; j < Lb; ++j) St.at(j, i) = S.at(i, j);
    auto SG = softmax_rows(S);   // [La, Lb]
    auto SO = softmax_rows(St);  // [Lb, La]

    auto matmulT = [](const nn::Tensor<double>& X, const nn::Tensor<double>& Y) {
        nn::Tensor<double> Z(X.rows(), Y.cols());
        for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < Y.cols(); ++j) {
                double acc = 0;
                for (int k = 0; k < X.cols(); ++k) acc += X.at(i, k) * Y.at(k, j);
                Z.at(i, j) = acc;
            }
        return Z;
    };
    auto P = matmulT(SG, BP);
    auto Q = matmulT(matmulT(SG, SO), AP);
    nn::Tensor<double> cat(La, 4 * H);
    for (int i = 0; i < La; ++i)
        for (int j = 0; j < H; ++j) {
            cat.at(i, j) = AP.at(i, j);
            cat.at(i, H + j) = P.at(i, j);
            cat.at(i, 2 * H + j) = AP.at(i, j) * P.at(i, j);
            cat.at(i, 3 * H + j) = AP.at(i, j) * Q.at(i, j);
        }
    auto expect = lin(f.aggr.out_a, cat);
    for (int i = 0; i < La; ++i)
        for (int j = 0; j < H; ++j)
            REQUIRE_THAT(t.val(a_out).at(i, j), Catch::Matchers::WithinAbs(expect.at(i, j), 1e-6));
    (void)b_out;
}

// ---------------------------------------------------------------------------
// scorer
// ---------------------------------------------------------------------------

TEST_CASE("scorer: output length, duplicate candidates, permutation equivariance") {
    Fixture f;
    Rng arng(23);
    const int H = f.cfg.hidden;
    TapeD t;
    auto state = t.leaf(nn::init_uniform<double>(5, H, arng));
    std::vector<double> smask(5, 1.0);
    auto c0 = t.leaf(nn::init_uniform<double>(1, H, arng));
    auto c1 = t.leaf(nn::init_uniform<double>(1, H, arng));
    auto c2 = t.leaf(nn::init_uniform<double>(1, H, arng));

    auto scores = f.scorer1.score(t, {{state, smask}}, {c0, c1, c2, c1});
    REQUIRE(t.val(scores).cols() == 4);
    REQUIRE(t.val(scores).at(0, 1) == t.val(scores).at(0, 3));  // duplicated candidate

    auto permuted = f.scorer1.score(t, {{state, smask}}, {c2, c0, c1});
    REQUIRE(t.val(permuted).at(0, 0) == t.val(scores).at(0, 2));
    REQUIRE(t.val(permuted).at(0, 1) == t.val(scores).at(0, 0));
    REQUIRE(t.val(permuted).at(0, 2) == t.val(scores).at(0, 1));

    REQUIRE_THROWS_AS(f.scorer1.score(t, {{state, smask}}, {}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// end-to-end gradient checks (criterion material)
// ---------------------------------------------------------------------------

TEST_CASE("encoder stacks pass grad_check at 1e-4") {
    Fixture f;
    const int n = tiny_vocab().num_entities();
    Rng arng(41);

    SECTION("graph encoder w.r.t. adjacency input") {
        nn::Tensor<double> chan0(n, n);
        for (auto& x : chan0.v) x = arng.real01() - 0.5;
        nn::Tensor<double> others[20];
        for (int c = 1; c < f.graph.num_channels; ++c) {
            others[c] = nn::Tensor<double>(n, n);
            for (auto& x : others[c].v) x = arng.real01() - 0.5;
        }
        REQUIRE(nn::grad_check([&](TapeD& t, VarD v) {
                    std::vector<VarD> adj{v};
                    for (int c = 1; c < f.graph.num_channels; ++c) adj.push_back(t.leaf(others[c]));
                    return t.sum_all(f.graph.encode(t, adj));
                }, chan0) <= 1e-4);
    }
    SECTION("graph encoder w.r.t. deep parameters") {
        TapeD warm;  // fixed random adjacency shared by all evaluations
        nn::Tensor<double> chans[20];
        for (int c = 0; c < f.graph.num_channels; ++c) {
            chans[c] = nn::Tensor<double>(n, n);
            for (auto& x : chans[c].v) x = arng.real01() - 0.5;
        }
        auto fwd = [&](TapeD& t) {
            std::vector<VarD> adj;
            for (int c = 0; c < f.graph.num_channels; ++c) adj.push_back(t.leaf(chans[c]));
            return t.sum_all(f.graph.encode(t, adj));
        };
        REQUIRE(grad_check_param(fwd, f.graph.layers[0].basis_h[0]) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.graph.layers[1].coeff) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.graph.node_emb) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.graph.rel_emb) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.wemb.table) <= 1e-4);
    }
    SECTION("text encoder w.r.t. parameters") {
        std::vector<int> ids = tiny_words().encode({"take", "alpha", "go", "beta"});
        auto fwd = [&](TapeD& t) { return t.sum_all(f.text.encode(t, ids).reps); };
        REQUIRE(grad_check_param(fwd, f.text.convs[0].W) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.text.att_q.W) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.text.mlp1.W) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.text.mlp_ln_g) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.wemb.table) <= 1e-4);
    }
    SECTION("aggregator w.r.t. input and trilinear weights") {
        const int H = f.cfg.hidden;
        auto B = nn::init_uniform<double>(4, H, arng);
        std::vector<double> ma(3, 1.0), mb(4, 1.0);
        REQUIRE(nn::grad_check([&](TapeD& t, VarD v) {
                    auto [ao, bo] = f.aggr.aggregate(t, v, ma, t.leaf(B), mb);
                    return t.add(t.sum_all(ao), t.sum_all(bo));
                }, nn::init_uniform<double>(3, H, arng)) <= 1e-4);
        auto A = nn::init_uniform<double>(3, H, arng);
        auto fwd = [&](TapeD& t) {
            auto [ao, bo] = f.aggr.aggregate(t, t.leaf(A), ma, t.leaf(B), mb);
            return t.add(t.sum_all(ao), t.sum_all(bo));
        };
        REQUIRE(grad_check_param(fwd, f.aggr.tri_ab) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.aggr.out_b.W) <= 1e-4);
    }
    SECTION("scorer w.r.t. state reps and mlp") {
        const int H = f.cfg.hidden;
        auto C0 = nn::init_uniform<double>(1, H, arng);
        auto C1 = nn::init_uniform<double>(1, H, arng);
        std::vector<double> smask(4, 1.0);
        REQUIRE(nn::grad_check([&](TapeD& t, VarD v) {
                    auto s = f.scorer1.score(t, {{v, smask}}, {t.leaf(C0), t.leaf(C1)});
                    return t.cross_entropy_logits(s, 1);
                }, nn::init_uniform<double>(4, H, arng)) <= 1e-4);
        auto S = nn::init_uniform<double>(4, H, arng);
        auto fwd = [&](TapeD& t) {
            auto s = f.scorer1.score(t, {{t.leaf(S), smask}}, {t.leaf(C0), t.leaf(C1)});
            return t.cross_entropy_logits(s, 0);
        };
        REQUIRE(grad_check_param(fwd, f.scorer1.mlp1.W) <= 1e-4);
        REQUIRE(grad_check_param(fwd, f.scorer1.att_v.W) <= 1e-4);
    }
}
