#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "gata/agent.hpp"

using namespace gata;
using namespace gata::rl;

namespace {

using SnapF = Snapshot<float>;
using ItemF = ReplayItem<float>;

ItemF make_item(const std::string& tag, double reward, bool done, int episode, int step) {
    ItemF item;
    item.state.obs = {tag};
    item.state.candidates = {{"left"}, {"right"}};
    item.reward = reward;
    item.done = done;
    item.episode = episode;
    item.step = step;
    return item;
}

enc::EncoderConfig<float> tiny_cfg() {
    auto c = enc::EncoderConfig<double>::tiny();
    enc::EncoderConfig<float> f;
    f.word_dim = c.word_dim;
    f.hidden = c.hidden;
    f.gcn_layers = c.gcn_layers;
    f.node_emb_dim = c.node_emb_dim;
    f.rel_emb_dim = c.rel_emb_dim;
    f.bases = c.bases;
    f.conv_layers = c.conv_layers;
    f.kernel = c.kernel;
    return f;
}

TrainConfig tiny_tc() {
    TrainConfig tc;
    tc.episodes = 6;
    tc.eps_anneal_episodes = 4;
    tc.warmup_episodes = 1;
    tc.eval_every_episodes = 3;
    tc.target_sync_episodes = 2;
    tc.update_every_steps = 10;
    tc.batch_size = 4;
    tc.buffer_capacity = 4000;
    tc.max_episode_steps = 12;
    tc.seed = 5;
    return tc;
}

}  // namespace

TEST_CASE("select_action: tie-break, single candidate, uniform exploration") {
    Rng rng(3);
    REQUIRE(select_action({1, 3, 3}, 0.0, rng) == 1);
    REQUIRE(select_action({7}, 0.0, rng) == 0);
    REQUIRE(select_action({0.5}, 1.0, rng) == 0);
    REQUIRE_THROWS_AS(select_action({}, 0.0, rng), std::invalid_argument);

    // chi-squared uniformity over 10,000 fully-random draws, 5 arms
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 10000; ++i) counts[static_cast<size_t>(select_action({1, 2, 3, 4, 5}, 1.0, rng))]++;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
    REQUIRE(chi2 < 18.47);  // chi2(4 dof) at p = 0.001
}

TEST_CASE("trajectory filter rule") {
    REQUIRE_FALSE(admit_trajectory(0.05, 1.0, 0.1, false));  // 0.05 < 0.1 * 1.0
    REQUIRE(admit_trajectory(0.0, 123.0, 0.1, true));        // empty buffer admits
    REQUIRE(admit_trajectory(0.2, 1.0, 0.1, false));         // 0.2 > 0.1
}

TEST_CASE("n-step double-Q targets: terminal, hand value, brute force") {
    ReplayBuffer<float> buf(1000, 0.6);

    // scripted 3-step trace with rewards 1, 0, 2; terminal at the end
    std::vector<ItemF> ep;
    ep.push_back(make_item("s0", 1.0, false, 1, 0));
    ep.push_back(make_item("s1", 0.0, false, 1, 1));
    ep.push_back(make_item("s2", 2.0, true, 1, 2));
    buf.push_episode(ep);

    std::map<std::string, std::vector<double>> online_q = {
        {"s0", {0.0, 0.1}}, {"s1", {0.3, 2.0}}, {"s2", {0.7, 0.2}}};
    std::map<std::string, std::vector<double>> target_q = {
        {"s0", {0.5, 0.6}}, {"s1", {1.5, 2.0}}, {"s2", {0.9, 1.1}}};
    auto online = [&](const SnapF& s) { return online_q.at(s.obs[0]); };
    auto target = [&](const SnapF& s) { return target_q.at(s.obs[0]); };

    // terminal at k=0: target is just the reward
    REQUIRE(nstep_double_q_target(buf, 2, 1, 0.9, online, target) == 2.0);
    REQUIRE(nstep_double_q_target(buf, 2, 3, 0.9, online, target) == 2.0);

    // n=1 from s0: r + gamma * Q_target(s1, argmax_online(s1)) = 1 + 0.9*2 = 2.8
    REQUIRE_THAT(nstep_double_q_target(buf, 0, 1, 0.9, online, target),
                 Catch::Matchers::WithinAbs(2.8, 1e-12));

    // n=3 from s0 hits the terminal: 1 + 0.9*0 + 0.81*2 = 2.62 (no bootstrap)
    REQUIRE_THAT(nstep_double_q_target(buf, 0, 3, 0.9, online, target),
                 Catch::Matchers::WithinAbs(1.0 + 0.9 * 0.0 + 0.81 * 2.0, 1e-12));

    // n=2 from s0: 1 + 0.9*0 + 0.81 * Q_target(s2, argmax_online(s2)=0) = 1 + 0.81*0.9
    REQUIRE_THAT(nstep_double_q_target(buf, 0, 2, 0.9, online, target),
                 Catch::Matchers::WithinAbs(1.0 + 0.81 * 0.9, 1e-12));
}

TEST_CASE("replay buffer: priority-proportional sampling frequencies") {
    ReplayBuffer<float> buf(1000, 0.6);
    std::vector<ItemF> ep;
    ep.push_back(make_item("a", 0, true, 1, 0));
    ep.push_back(make_item("b", 0, true, 2, 0));
    buf.push_episode(ep);
    // priority p and p * 2^(1/0.6): sampling ratio must be ~2
    buf.update_priority(0, 0.5 - 1e-6);
    buf.update_priority(1, 0.5 * std::pow(2.0, 1.0 / 0.6) - 1e-6);

    Rng rng(17);
    int second = 0;
    const int draws = 40000;
    for (int i = 0; i < draws; ++i) {
        auto [idx, w] = buf.sample(1, 0.4, rng);
        second += idx[0] == 1 ? 1 : 0;
    }
    double frac = static_cast<double>(second) / draws;
    REQUIRE_THAT(frac, Catch::Matchers::WithinAbs(2.0 / 3.0, 0.02));
}

TEST_CASE("replay buffer: equal priorities sample uniformly, oldest episodes evict first") {
    ReplayBuffer<float> buf(6, 0.6);
    for (int e = 1; e <= 3; ++e) {
        std::vector<ItemF> ep;
        for (int s = 0; s < 3; ++s) ep.push_back(make_item("e" + std::to_string(e), 1.0, s == 2, e, s));
        buf.push_episode(ep);
    }
    // capacity 6 holds two 3-item episodes; episode 1 must be gone
    REQUIRE(buf.size() == 6);
    for (size_t i = 0; i < buf.size(); ++i) REQUIRE(buf.at(i).episode != 1);

    Rng rng(23);
    std::vector<int> counts(buf.size(), 0);
    for (int i = 0; i < 12000; ++i) {
        auto [idx, w] = buf.sample(1, 0.4, rng);
        counts[idx[0]]++;
        REQUIRE(w[0] == 1.0);  // equal priorities -> max-normalized weights are 1
    }
    for (int c : counts) REQUIRE_THAT(static_cast<double>(c) / 12000, Catch::Matchers::WithinAbs(1.0 / 6, 0.02));

    REQUIRE_THROWS_AS(buf.sample(100, 0.4, rng), std::invalid_argument);
}

TEST_CASE("episodic counting bonus follows lambda * N^-gamma and resets") {
    ObservationCounter counter;
    std::vector<std::string> obs = {"you", "are", "in", "the", "kitchen"};
    REQUIRE_THAT(counter.bonus(obs, 0.1, 0.5), Catch::Matchers::WithinAbs(0.1, 1e-12));
    counter.bonus(obs, 0.1, 0.5);
    counter.bonus(obs, 0.1, 0.5);
    REQUIRE_THAT(counter.bonus(obs, 0.1, 0.5), Catch::Matchers::WithinAbs(0.05, 1e-12));  // 4th visit
    counter.reset();
    REQUIRE_THAT(counter.bonus(obs, 0.1, 0.5), Catch::Matchers::WithinAbs(0.1, 1e-12));
}

TEST_CASE("tabular Q-learning through the replay machinery reaches the oracle Q") {
    // deterministic 3-state chain: s0 -(a1)-> s1 -(a1)-> s2 terminal reward 1;
    // action a0 self-terminates with reward 0. gamma = 0.9.
    // Oracle: Q*(s2,a1)=1, Q*(s1,a1)=0.9, Q*(s0,a1)=0.81; Q*(-,a0)=0.
    // Uncorrected n-step returns need on-policy tails, so epsilon anneals to
    // zero and a small buffer retires stale exploratory episodes.
    const double gamma = 0.9;
    ReplayBuffer<float> buf(60, 0.6);
    std::map<std::string, std::vector<double>> Q = {{"s0", {0, 0}}, {"s1", {0, 0}}, {"s2", {0, 0}}};
    Rng rng(31);

    int episode = 0;
    for (int iter = 0; iter < 600; ++iter) {
        ++episode;
        std::vector<ItemF> ep;
        int s = 0;
        int step = 0;
        while (true) {
            auto& q = Q["s" + std::to_string(s)];
            int a = select_action(q, iter < 300 ? 0.3 : 0.0, rng);
            bool terminal = a == 0 || s == 2;
            double r = (s == 2 && a == 1) ? 1.0 : 0.0;
            auto item = make_item("s" + std::to_string(s), r, terminal, episode, step++);
            item.action = a;
            ep.push_back(item);
            if (terminal) break;
            ++s;
        }
        buf.push_episode(ep);

        if (buf.size() < 8) continue;
        auto getq = [&](const SnapF& snap) { return Q.at(snap.obs[0]); };
        auto [idx, w] = buf.sample(8, 0.4, rng);
        for (size_t b = 0; b < idx.size(); ++b) {
            const auto& item = buf.at(idx[b]);
            int n = 1 + static_cast<int>(rng.below(3));
            double y = nstep_double_q_target(buf, idx[b], n, gamma, getq, getq);
            auto& q = Q.at(item.state.obs[0]);
            double td = q[static_cast<size_t>(item.action)] - y;
            q[static_cast<size_t>(item.action)] -= 0.08 * td;
            buf.update_priority(idx[b], td);
        }
    }
    REQUIRE_THAT(Q["s2"][1], Catch::Matchers::WithinAbs(1.0, 0.05));
    REQUIRE_THAT(Q["s1"][1], Catch::Matchers::WithinAbs(0.9, 0.05));
    REQUIRE_THAT(Q["s0"][1], Catch::Matchers::WithinAbs(0.81, 0.05));
    REQUIRE_THAT(Q["s0"][0], Catch::Matchers::WithinAbs(0.0, 0.05));
}

TEST_CASE("variant parsing wires input flags") {
    REQUIRE_FALSE(parse_variant("tr-dqn").use_graph);
    REQUIRE(parse_variant("tr-drqn").recurrent);
    REQUIRE(parse_variant("tr-drqn+").count_bonus);
    REQUIRE(parse_variant("gata-coc").use_graph);
    REQUIRE(parse_variant("gata-gtf", false).use_text == false);
    REQUIRE_THROWS_AS(parse_variant("dqn"), std::invalid_argument);
    REQUIRE(std::string(variant_name(VariantKind::GataGtp)) == "gata-gtp");
}

TEST_CASE("tr-dqn agent: greedy determinism, target sync, smoke training") {
    auto cfg = tiny_cfg();
    auto wv = world::build_word_vocab();
    auto tc = tiny_tc();
    Agent<float> agent(cfg, parse_variant("tr-dqn"), tc, Vocab::cooking(), wv);

    std::vector<world::GameSpec> games = {world::generate_game(1, 1), world::generate_game(1, 2)};
    REQUIRE(agent.target_matches_online());

    // greedy play twice: bit-identical outcomes
    Rng r1(9), r2(9);
    auto a = agent.play_episode(games[0], 0.0, r1, false, 0);
    auto b = agent.play_episode(games[0], 0.0, r2, false, 0);
    REQUIRE(a.score == b.score);
    REQUIRE(a.steps == b.steps);

    auto result = agent.train(games, games);
    REQUIRE(result.episode_scores.size() == static_cast<size_t>(tc.episodes));
    REQUIRE(result.curves.size() == static_cast<size_t>(tc.episodes / tc.eval_every_episodes));
    for (const auto& row : result.curves) {
        REQUIRE(std::isfinite(row.loss));
        REQUIRE(row.valid_score >= 0.0);
        REQUIRE(row.valid_score <= 1.0);
    }
    REQUIRE_THROWS_AS(agent.train({}, games), std::invalid_argument);
}

TEST_CASE("gata-coc agent trains without touching the frozen updater") {
    auto cfgf = tiny_cfg();
    enc::EncoderConfig<float> cfg = cfgf;
    auto wv = world::build_word_vocab();
    upd::GraphUpdater<float> updater("u", cfg, Vocab::cooking(), wv, *upd::make_rng(77));
    std::vector<nn::Parameter<float>*> uparams;
    updater.collect(uparams);
    const uint64_t before = param_hash(uparams);

    auto tc = tiny_tc();
    tc.episodes = 4;
    Agent<float> agent(cfg, parse_variant("gata-coc"), tc, Vocab::cooking(), wv, &updater);
    std::vector<world::GameSpec> games = {world::generate_game(1, 3)};
    auto result = agent.train(games, games);
    REQUIRE(result.episode_scores.size() == 4);
    REQUIRE(param_hash(uparams) == before);  // no gradient reaches the updater

    // evaluation score is a normalized fraction
    double v = agent.evaluate(games);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
}

TEST_CASE("gata-gtf consumes ground-truth graphs without an updater") {
    auto cfg = tiny_cfg();
    auto wv = world::build_word_vocab();
    auto tc = tiny_tc();
    tc.episodes = 2;
    Agent<float> agent(cfg, parse_variant("gata-gtf"), tc, Vocab::cooking(), wv);
    std::vector<world::GameSpec> games = {world::generate_game(1, 4)};
    auto result = agent.train(games, games);
    REQUIRE(result.episode_scores.size() == 2);
}

TEST_CASE("gata variants refuse to start without their frozen models") {
    auto cfg = tiny_cfg();
    auto wv = world::build_word_vocab();
    auto tc = tiny_tc();
    REQUIRE_THROWS_AS(Agent<float>(cfg, parse_variant("gata-coc"), tc, Vocab::cooking(), wv),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(Agent<float>(cfg, parse_variant("gata-gtp"), tc, Vocab::cooking(), wv),
                      std::invalid_argument);
}

TEST_CASE("tr-drqn+ trains with sequence replay and bonus rewards") {
    auto cfg = tiny_cfg();
    auto wv = world::build_word_vocab();
    auto tc = tiny_tc();
    tc.episodes = 4;
    Agent<float> agent(cfg, parse_variant("tr-drqn+"), tc, Vocab::cooking(), wv);
    std::vector<world::GameSpec> games = {world::generate_game(1, 5)};
    auto result = agent.train(games, games);
    REQUIRE(result.episode_scores.size() == 4);
    // bonus rewards entered the buffer: learning rewards exceed raw scores
    bool bonus_seen = false;
    for (size_t i = 0; i < agent.buffer().size(); ++i) {
        double r = agent.buffer().at(i).reward;
        if (r > 0.0 && r < 1.0) bonus_seen = true;  // pure env rewards are integers
    }
    REQUIRE(bonus_seen);
}

TEST_CASE("epsilon and beta schedules anneal linearly and clamp") {
    auto cfg = tiny_cfg();
    auto wv = world::build_word_vocab();
    TrainConfig tc;
    tc.eps_anneal_episodes = 100;
    Agent<float> agent(cfg, parse_variant("tr-dqn"), tc, Vocab::cooking(), wv);
    REQUIRE_THAT(agent.epsilon_at(0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(agent.epsilon_at(50), Catch::Matchers::WithinAbs(0.55, 1e-12));
    REQUIRE_THAT(agent.epsilon_at(100), Catch::Matchers::WithinAbs(0.1, 1e-12));
    REQUIRE_THAT(agent.epsilon_at(100000), Catch::Matchers::WithinAbs(0.1, 1e-12));
}

TEST_CASE("random baseline on level-1 games scores strictly below the walkthrough") {
    std::vector<world::GameSpec> games = {world::generate_game(1, 11), world::generate_game(1, 12)};
    double base = random_baseline(games, 20, 3);
    REQUIRE(base >= 0.0);
    REQUIRE(base < 1.0);  // the walkthrough attains 1.0
}

TEST_CASE("stored snapshots stay immutable when live observations change") {
    ReplayBuffer<float> buf(100, 0.6);
    std::vector<std::string> obs = {"you", "see", "a", "carrot"};
    auto item = make_item("x", 0, true, 1, 0);
    item.state.obs = obs;
    std::vector<ItemF> ep = {item};
    buf.push_episode(ep);
    obs[3] = "banana";
    REQUIRE(buf.at(0).state.obs[3] == "carrot");
}
