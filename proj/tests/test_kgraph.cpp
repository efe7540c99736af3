#include <catch2/catch_amalgamated.hpp>

#include "gata/kgraph.hpp"
#include "gata/rng.hpp"

using namespace gata;
using namespace gata::kg;

namespace {

DiscreteGraph random_graph(Rng& rng, int max_triples) {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph g(&voc);
    int n = static_cast<int>(rng.below(static_cast<uint64_t>(max_triples + 1)));
    for (int i = 0; i < n; ++i)
        g.add({rng.range(0, voc.num_entities() - 1), rng.range(0, voc.num_entities() - 1),
               rng.range(0, voc.num_relations() - 1)});
    return g;
}

// The seven update operations of the shed/backyard transition.
CommandSequence shed_commands() {
    CommandSequence seq;
    seq.commands = {
        {Verb::Add, "player", "shed", "at"},
        {Verb::Add, "shed", "backyard", "west_of"},
        {Verb::Add, "wooden door", "shed", "east_of"},
        {Verb::Add, "toolbox", "shed", "in"},
        {Verb::Add, "toolbox", "closed", "is"},
        {Verb::Add, "workbench", "shed", "in"},
        {Verb::Delete, "player", "backyard", "at"},
    };
    return seq;
}

const char* kShedCanonical =
    "<s> add player shed at <|> add shed backyard west_of <|> add toolbox closed is <|> "
    "add toolbox shed in <|> add wooden door shed east_of <|> add workbench shed in <|> "
    "delete player backyard at </s>";

}  // namespace

TEST_CASE("tokenize lowercases and isolates punctuation") {
    auto toks = tokenize("You take the Carrot.");
    REQUIRE(toks == std::vector<std::string>{"you", "take", "the", "carrot", "."});
}

TEST_CASE("discrete graph basics") {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph g(&voc);
    g.add("player", "kitchen", "at");
    g.add("player", "kitchen", "at");
    REQUIRE(g.size() == 1);
    REQUIRE(g.contains("player", "kitchen", "at"));
    g.remove("player", "kitchen", "at");
    REQUIRE(g.empty());
    REQUIRE_THROWS_AS(g.add({0, 0, 99}), std::invalid_argument);
}

TEST_CASE("parse decodes multi-token node names by longest vocabulary prefix") {
    const Vocab& voc = Vocab::cooking();
    auto res = parse_commands(tokenize("<s> add player shed at <|> delete player backyard at </s>"), voc);
    REQUIRE(res.dropped == 0);
    REQUIRE(res.sequence.commands.size() == 2);
    REQUIRE(res.sequence.commands[0] == UpdateCommand{Verb::Add, "player", "shed", "at"});
    REQUIRE(res.sequence.commands[1] == UpdateCommand{Verb::Delete, "player", "backyard", "at"});

    auto res2 = parse_commands(tokenize("<s> add wooden door shed east_of </s>"), voc);
    REQUIRE(res2.sequence.commands ==
            std::vector<UpdateCommand>{{Verb::Add, "wooden door", "shed", "east_of"}});
}

TEST_CASE("parse tolerates empty frames, truncation and garbage") {
    const Vocab& voc = Vocab::cooking();
    REQUIRE(parse_commands(tokenize("<s> </s>"), voc).sequence.commands.empty());

    // missing framing tokens still decode
    auto res = parse_commands(tokenize("add player shed at"), voc);
    REQUIRE(res.sequence.commands.size() == 1);

    // unparsable segments are dropped and counted
    auto res2 = parse_commands(
        tokenize("<s> add nonsense thing at <|> add player shed at <|> frobnicate </s>"), voc);
    REQUIRE(res2.sequence.commands.size() == 1);
    REQUIRE(res2.dropped == 2);
}

TEST_CASE("shed transition serializes to the canonical byte string") {
    const Vocab& voc = Vocab::cooking();
    auto tokens = serialize_commands(shed_commands(), voc);
    REQUIRE(join_tokens(tokens) == kShedCanonical);

    // the published operation order parses to the same command set
    auto paper_order = parse_commands(
        tokenize("<s> add player shed at <|> add shed backyard west_of <|> add wooden door shed "
                 "east_of <|> add toolbox shed in <|> add toolbox closed is <|> add workbench "
                 "shed in <|> delete player backyard at </s>"),
        voc);
    REQUIRE(paper_order.dropped == 0);
    REQUIRE(canonicalize(paper_order.sequence) == canonicalize(shed_commands()));
}

TEST_CASE("empty sequence serializes to bare frame") {
    REQUIRE(join_tokens(serialize_commands({}, Vocab::cooking())) == "<s> </s>");
}

TEST_CASE("serialize rejects out-of-vocabulary names") {
    CommandSequence seq;
    seq.commands.push_back({Verb::Add, "player", "spaceship", "at"});
    REQUIRE_THROWS_AS(serialize_commands(seq, Vocab::cooking()), std::invalid_argument);
}

TEST_CASE("apply: idempotent adds, ignored deletes") {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph g(&voc);
    CommandSequence seq;
    seq.commands.push_back({Verb::Add, "player", "shed", "at"});
    auto g1 = apply_commands(g, seq);
    REQUIRE(g1.size() == 1);
    REQUIRE(apply_commands(g1, seq) == g1);

    DiscreteGraph h(&voc);
    h.add("carrot", "fridge", "in");
    CommandSequence del;
    del.commands.push_back({Verb::Delete, "knife", "counter", "on"});
    REQUIRE(apply_commands(h, del) == h);
}

TEST_CASE("apply of shed commands moves the player to the shed") {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph prev(&voc);
    prev.add("player", "backyard", "at");
    auto next = apply_commands(prev, shed_commands());
    REQUIRE(next.contains("player", "shed", "at"));
    REQUIRE_FALSE(next.contains("player", "backyard", "at"));
    REQUIRE(next.size() == 6);
}

TEST_CASE("diff: identical graphs produce empty sequence; player move produces add+delete") {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph a(&voc), b(&voc);
    a.add("player", "backyard", "at");
    b.add("player", "shed", "at");
    REQUIRE(diff_to_commands(a, a).commands.empty());
    auto seq = diff_to_commands(a, b);
    REQUIRE(seq.commands == std::vector<UpdateCommand>{{Verb::Add, "player", "shed", "at"},
                                                       {Verb::Delete, "player", "backyard", "at"}});
}

TEST_CASE("diff rejects vocabulary mismatch") {
    Vocab other({"x", "y"}, Vocab::cooking().relations());
    DiscreteGraph a(&Vocab::cooking()), b(&other);
    REQUIRE_THROWS_AS(diff_to_commands(a, b), std::invalid_argument);
}

TEST_CASE("apply(diff) round-trip on random graph pairs") {
    Rng rng(17);
    for (int it = 0; it < 1000; ++it) {
        DiscreteGraph g = random_graph(rng, 30);
        DiscreteGraph h = random_graph(rng, 30);
        REQUIRE(apply_commands(g, diff_to_commands(g, h)) == h);
    }
}

TEST_CASE("parse(serialize) equals canonicalize on random sequences") {
    const Vocab& voc = Vocab::cooking();
    Rng rng(23);
    for (int it = 0; it < 500; ++it) {
        CommandSequence seq;
        int n = static_cast<int>(rng.below(10));
        for (int i = 0; i < n; ++i) {
            seq.commands.push_back({rng.chance(0.5) ? Verb::Add : Verb::Delete,
                                    voc.entity_name(rng.range(0, voc.num_entities() - 1)),
                                    voc.entity_name(rng.range(0, voc.num_entities() - 1)),
                                    voc.relation_name(rng.range(0, voc.num_relations() - 1))});
        }
        auto tokens = serialize_commands(seq, voc);
        auto parsed = parse_commands(tokens, voc);
        REQUIRE(parsed.dropped == 0);
        REQUIRE(parsed.sequence == canonicalize(seq));
        // serialize(parse) is the identity on canonical strings
        REQUIRE(serialize_commands(parsed.sequence, voc) == tokens);
        // canonical order: all adds precede deletes
        bool seen_delete = false;
        for (const auto& c : parsed.sequence.commands) {
            if (c.verb == Verb::Delete) seen_delete = true;
            if (seen_delete) REQUIRE(c.verb == Verb::Delete);
        }
    }
}

TEST_CASE("from_half_tensor forces transpose channels and validates range") {
    const int R = kRelationCount, N = 6;
    std::vector<double> h2(static_cast<size_t>(R) * N * N, 0.0);
    auto g0 = from_half_tensor(h2, R, N);
    for (double v : g0.values()) REQUIRE(v == 0.0);

    h2[(2 * N + 1) * N + 4] = 0.3;  // channel 2, i=1, j=4
    auto g = from_half_tensor(h2, R, N);
    REQUIRE(g.at(2, 1, 4) == 0.3);
    REQUIRE(g.at(2 + R, 4, 1) == 0.3);

    Rng rng(5);
    for (auto& v : h2) v = rng.real01() * 2.0 - 1.0;
    auto gr = from_half_tensor(h2, R, N);
    for (int r = 0; r < R; ++r)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) REQUIRE(gr.at(r + R, j, i) == gr.at(r, i, j));

    h2[0] = 1.5;
    REQUIRE_THROWS_AS(from_half_tensor(h2, R, N), std::invalid_argument);
}

TEST_CASE("to_dense encodes triples and their inverses") {
    const Vocab& voc = Vocab::cooking();
    DiscreteGraph g(&voc);
    auto empty = to_dense(g);
    for (double v : empty.values()) REQUIRE(v == 0.0);

    g.add("apple", "fridge", "at");
    auto d = to_dense(g);
    int nonzero = 0;
    for (double v : d.values()) nonzero += v != 0.0;
    REQUIRE(nonzero == 2);
    REQUIRE(d.at(voc.relation_id("at"), voc.entity_id("apple"), voc.entity_id("fridge")) == 1.0);
    REQUIRE(d.at(voc.relation_id("at") + kRelationCount, voc.entity_id("fridge"),
                 voc.entity_id("apple")) == 1.0);
}

TEST_CASE("dense of apply(diff) equals dense of target") {
    Rng rng(99);
    for (int it = 0; it < 50; ++it) {
        DiscreteGraph g = random_graph(rng, 20);
        DiscreteGraph h = random_graph(rng, 20);
        REQUIRE(to_dense(apply_commands(g, diff_to_commands(g, h))) == to_dense(h));
    }
}
