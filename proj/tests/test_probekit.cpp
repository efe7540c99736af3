#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "gata/probekit.hpp"

using namespace gata;
using namespace gata::probe;

namespace {

std::vector<world::GameSpec> probe_games(int n) {
    // mixed difficulty mirrors the multi-room probing corpus
    std::vector<world::GameSpec> out;
    for (int i = 0; i < n; ++i)
        out.push_back(world::generate_game(1 + i % 4, 1000 + static_cast<uint64_t>(i)));
    return out;
}

nn::Tensor<double> fixed_embeddings(int dim = 16) {
    Rng rng(555);
    return nn::init_embedding<double>(Vocab::cooking().num_entities(), dim, rng);
}

}  // namespace

TEST_CASE("probe dataset: ground-truth inputs one-hot encode their labels") {
    auto games = probe_games(3);
    auto ds = build_probe_dataset<double>(games, 2, Source::GroundTruth, nullptr, fixed_embeddings(), 7);
    REQUIRE_FALSE(ds.train.empty());
    REQUIRE_FALSE(ds.test.empty());
    const int R = kRelationCount;
    for (const auto& s : ds.train) {
        if (!s.positive) {
            for (int r = 0; r < R; ++r) {
                REQUIRE(s.labels[static_cast<size_t>(r)] == 0);
                REQUIRE(s.input[static_cast<size_t>(r)] == 0.0);  // unrelated pair
            }
            continue;
        }
        bool any = false;
        for (int r = 0; r < R; ++r) {
            REQUIRE(s.input[static_cast<size_t>(r)] == static_cast<double>(s.labels[static_cast<size_t>(r)]));
            any |= s.labels[static_cast<size_t>(r)] == 1;
        }
        REQUIRE(any);
    }
}

TEST_CASE("probe dataset: split by game ids is disjoint") {
    auto games = probe_games(4);
    auto ds = build_probe_dataset<double>(games, 3, Source::GroundTruth, nullptr, fixed_embeddings(), 9);
    std::set<std::string> train_ids, test_ids;
    for (const auto& s : ds.train) train_ids.insert(s.game_id);
    for (const auto& s : ds.test) test_ids.insert(s.game_id);
    for (const auto& id : test_ids) REQUIRE(train_ids.count(id) == 0);
}

TEST_CASE("probe dataset rejects belief sources without an updater") {
    auto games = probe_games(1);
    REQUIRE_THROWS_AS(
        build_probe_dataset<double>(games, 1, Source::BeliefOg, nullptr, fixed_embeddings(), 3),
        std::invalid_argument);
}

TEST_CASE("ground-truth probe separates train split almost perfectly") {
    auto games = probe_games(24);
    auto ds = build_probe_dataset<double>(games, 20, Source::GroundTruth, nullptr, fixed_embeddings(), 11);
    auto model = train_probe(ds, {});
    auto train_m = eval_probe(model, ds.train);
    REQUIRE(0.5 * (train_m.em_pos + train_m.em_neg) > 0.95);
    auto test_m = eval_probe(model, ds.test);
    REQUIRE(test_m.em_avg > 0.85);
    REQUIRE_THROWS_AS(train_probe(ProbeDataset{}, {}), std::invalid_argument);
}

TEST_CASE("random-source probe collapses to the all-zero signature") {
    auto games = probe_games(24);
    auto ds = build_probe_dataset<double>(games, 20, Source::Random, nullptr, fixed_embeddings(), 13);
    auto model = train_probe(ds, {});
    auto m = eval_probe(model, ds.test);
    REQUIRE(m.em_pos <= 0.05);
    REQUIRE(m.em_neg >= 0.95);
}

TEST_CASE("probe training loss decreases over epochs") {
    auto games = probe_games(4);
    auto ds = build_probe_dataset<double>(games, 3, Source::GroundTruth, nullptr, fixed_embeddings(), 15);
    ProbeTrainConfig one;
    one.epochs = 1;
    auto m1 = train_probe(ds, one);
    ProbeTrainConfig ten;
    ten.epochs = 10;
    auto m10 = train_probe(ds, ten);
    REQUIRE(probe_loss(m10, ds.train) < probe_loss(m1, ds.train));
}

TEST_CASE("probe metrics on a hand-labeled fixture") {
    // 4 samples, R labels; model = identity on first R inputs with bias -0.5
    const int R = kRelationCount;
    ProbeModel model(2 * R, R, 1);
    std::fill(model.W.value.v.begin(), model.W.value.v.end(), 0.0);
    for (int r = 0; r < R; ++r) model.W.value.at(r, r) = 1.0;
    std::fill(model.b.value.v.begin(), model.b.value.v.end(), -0.5);

    auto sample = [&](std::vector<int> labels, std::vector<double> slice, bool positive) {
        ProbeSample s;
        s.labels = std::move(labels);
        s.input = std::move(slice);
        s.input.resize(static_cast<size_t>(2 * R), 0.0);
        s.positive = positive;
        return s;
    };
    std::vector<int> zero(static_cast<size_t>(R), 0);

    std::vector<ProbeSample> fixture;
    {
        auto l = zero; l[4] = 1;                        // predicted 4 correct
        auto x = std::vector<double>(static_cast<size_t>(R), 0.0); x[4] = 1.0;
        fixture.push_back(sample(l, x, true));
    }
    {
        auto l = zero; l[2] = 1;                        // predicts nothing: EM miss, F1 0
        fixture.push_back(sample(l, std::vector<double>(static_cast<size_t>(R), 0.0), true));
    }
    {
        auto l = zero; l[1] = 1; l[3] = 1;              // predicts only 1: EM miss, F1 = 2/3
        auto x = std::vector<double>(static_cast<size_t>(R), 0.0); x[1] = 1.0;
        fixture.push_back(sample(l, x, true));
    }
    fixture.push_back(sample(zero, std::vector<double>(static_cast<size_t>(R), 0.0), false));  // exact

    auto m = eval_probe(model, fixture);
    REQUIRE_THAT(m.em_pos, Catch::Matchers::WithinAbs(1.0 / 3, 1e-12));
    REQUIRE_THAT(m.em_neg, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(m.f1_pos, Catch::Matchers::WithinAbs((1.0 + 0.0 + 2.0 / 3.0) / 3, 1e-12));
    REQUIRE_THAT(m.f1_neg, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(m.em_avg, Catch::Matchers::WithinAbs(0.5 * (1.0 / 3 + 1.0), 1e-12));

    // metrics are order invariant
    std::reverse(fixture.begin(), fixture.end());
    auto m2 = eval_probe(model, fixture);
    REQUIRE(m2.em_avg == m.em_avg);
    REQUIRE(m2.f1_avg == m.f1_avg);
}

TEST_CASE("perfect and all-zero predictors hit the documented extremes") {
    const int R = kRelationCount;
    std::vector<ProbeSample> fixture;
    ProbeSample pos;
    pos.labels.assign(static_cast<size_t>(R), 0);
    pos.labels[5] = 1;
    pos.input.assign(static_cast<size_t>(R), 0.0);
    pos.input[5] = 1.0;
    pos.positive = true;
    fixture.push_back(pos);
    ProbeSample neg;
    neg.labels.assign(static_cast<size_t>(R), 0);
    neg.input.assign(static_cast<size_t>(R), 0.0);
    neg.positive = false;
    fixture.push_back(neg);

    ProbeModel perfect(R, R, 1);
    std::fill(perfect.W.value.v.begin(), perfect.W.value.v.end(), 0.0);
    for (int r = 0; r < R; ++r) perfect.W.value.at(r, r) = 10.0;
    std::fill(perfect.b.value.v.begin(), perfect.b.value.v.end(), -5.0);
    auto pm = eval_probe(perfect, fixture);
    REQUIRE(pm.em_avg == 1.0);
    REQUIRE(pm.f1_avg == 1.0);

    ProbeModel zeros(R, R, 1);
    std::fill(zeros.W.value.v.begin(), zeros.W.value.v.end(), 0.0);
    std::fill(zeros.b.value.v.begin(), zeros.b.value.v.end(), -1.0);
    auto zm = eval_probe(zeros, fixture);
    REQUIRE(zm.em_pos == 0.0);
    REQUIRE(zm.em_neg == 1.0);
}

TEST_CASE("heatmap export: csv round-trips slice values, image is a valid ppm") {
    const Vocab& voc = Vocab::cooking();
    kg::DiscreteGraph g(&voc);
    g.add("player", "kitchen", "at");
    g.add("carrot", "fridge", "in");
    auto dense = kg::to_dense(g);

    const std::string csv = "hm_test.csv", ppm = "hm_test.ppm";
    export_heatmap(dense, "at", voc, nullptr, csv, ppm);

    std::ifstream is(csv);
    REQUIRE(is.good());
    std::string header;
    std::getline(is, header);
    // header: "entity" + N labels
    int commas = static_cast<int>(std::count(header.begin(), header.end(), ','));
    REQUIRE(commas == voc.num_entities());
    int rows = 0;
    std::string line;
    bool binary = true;
    double at_value = -1;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string name;
        std::getline(ls, name, ',');
        std::string cellv;
        int col = 0;
        while (std::getline(ls, cellv, ',')) {
            double v = std::stod(cellv);
            if (v != 0.0 && v != 1.0) binary = false;
            if (name == "player" && col == voc.entity_id("kitchen")) at_value = v;
            ++col;
        }
        REQUIRE(col == voc.num_entities());
        ++rows;
    }
    REQUIRE(rows == voc.num_entities());
    REQUIRE(binary);        // ground-truth slice is 0/1 valued
    REQUIRE(at_value == 1.0);

    std::ifstream ip(ppm, std::ios::binary);
    std::string magic;
    ip >> magic;
    REQUIRE(magic == "P6");

    // mean subtraction of the tensor from itself zeroes the grid
    export_heatmap(dense.values(), dense.num_relations(), dense.num_entities(), "at", voc,
                   &dense.values(), csv, ppm);
    std::ifstream is2(csv);
    std::getline(is2, header);
    while (std::getline(is2, line)) {
        std::istringstream ls(line);
        std::string name, cellv;
        std::getline(ls, name, ',');
        while (std::getline(ls, cellv, ',')) REQUIRE(std::stod(cellv) == 0.0);
    }

    REQUIRE_THROWS_AS(export_heatmap(dense, "flavor_of", voc, nullptr, csv, ppm),
                      std::invalid_argument);
    std::remove(csv.c_str());
    std::remove(ppm.c_str());
}

TEST_CASE("probe source names round-trip") {
    for (auto s : {Source::BeliefOg, Source::BeliefCoc, Source::GroundTruth, Source::Random})
        REQUIRE(parse_source(source_name(s)) == s);
    REQUIRE_THROWS_AS(parse_source("belief"), std::invalid_argument);
}
