#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gata/worldgen.hpp"

namespace gata::io {

using ordered_json = nlohmann::ordered_json;

// FNV-1a 64 over bytes; manifests use it to make staleness detectable.
inline std::string fnv1a_hex(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_file: cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_file: cannot open " + path);
    os << content;
}

// ============================================================================
// GameSpec
// ============================================================================

inline ordered_json spec_to_json(const world::GameSpec& s) {
    ordered_json j;
    j["difficulty"] = s.difficulty;
    j["effective_level"] = s.effective_level;
    j["seed"] = s.seed;
    j["rooms"] = s.rooms;
    auto& exits = j["exits"] = ordered_json::array();
    for (const auto& e : s.exits) exits.push_back({e.room_a, e.room_b, e.dir_from_a, e.door});
    auto& doors = j["doors"] = ordered_json::array();
    for (const auto& d : s.doors) doors.push_back({d.entity, d.starts_open});
    auto& recipe = j["recipe"] = ordered_json::array();
    for (const auto& r : s.recipe) recipe.push_back({r.ingredient, r.cut, r.cook});
    auto& placements = j["placements"] = ordered_json::array();
    for (const auto& p : s.placements) placements.push_back({p.entity, p.room, p.holder});
    auto& containers = j["containers"] = ordered_json::array();
    for (const auto& c : s.container_open) containers.push_back({c.first, c.second});
    j["start_room"] = s.start_room;
    j["max_score"] = s.max_score;
    return j;
}

inline world::GameSpec spec_from_json(const ordered_json& j) {
    world::GameSpec s;
    s.difficulty = j.at("difficulty").get<int>();
    s.effective_level = j.at("effective_level").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    s.rooms = j.at("rooms").get<std::vector<int>>();
    for (const auto& e : j.at("exits"))
        s.exits.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>(), e.at(3).get<int>()});
    for (const auto& d : j.at("doors")) s.doors.push_back({d.at(0).get<int>(), d.at(1).get<bool>()});
    for (const auto& r : j.at("recipe"))
        s.recipe.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
    for (const auto& p : j.at("placements"))
        s.placements.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>()});
    for (const auto& c : j.at("containers")) s.container_open.emplace_back(c.at(0).get<int>(), c.at(1).get<bool>());
    s.start_room = j.at("start_room").get<int>();
    s.max_score = j.at("max_score").get<int>();
    return s;
}

// ============================================================================
// Discrete graphs and transition corpora (JSONL)
// ============================================================================

inline ordered_json graph_to_json(const kg::DiscreteGraph& g) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : g.triples()) arr.push_back({t.head, t.tail, t.rel});  // already sorted
    return arr;
}

inline kg::DiscreteGraph graph_from_json(const ordered_json& arr, const Vocab& vocab) {
    kg::DiscreteGraph g(&vocab);
    for (const auto& t : arr) g.add({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    return g;
}

inline ordered_json record_to_json(const world::TransitionRecord& r) {
    ordered_json j;
    j["game_id"] = r.game_id;
    j["step"] = r.step;
    j["obs_prev"] = r.obs_prev.tokens;
    j["obs_prev_room"] = r.obs_prev.is_room_description;
    j["action"] = r.action;
    j["obs"] = r.obs.tokens;
    j["obs_room"] = r.obs.is_room_description;
    j["gseen_prev"] = graph_to_json(r.gseen_prev);
    j["gseen"] = graph_to_json(r.gseen);
    j["gfull"] = graph_to_json(r.gfull);
    j["done"] = r.done;
    return j;
}

inline world::TransitionRecord record_from_json(const ordered_json& j, const Vocab& vocab) {
    world::TransitionRecord r;
    r.game_id = j.at("game_id").get<std::string>();
    r.step = j.at("step").get<int>();
    r.obs_prev.tokens = j.at("obs_prev").get<std::vector<std::string>>();
    r.obs_prev.is_room_description = j.at("obs_prev_room").get<bool>();
    r.action = j.at("action").get<std::vector<std::string>>();
    r.obs.tokens = j.at("obs").get<std::vector<std::string>>();
    r.obs.is_room_description = j.at("obs_room").get<bool>();
    r.gseen_prev = graph_from_json(j.at("gseen_prev"), vocab);
    r.gseen = graph_from_json(j.at("gseen"), vocab);
    r.gfull = graph_from_json(j.at("gfull"), vocab);
    r.done = j.at("done").get<bool>();
    return r;
}

inline void save_corpus(const std::string& path, const std::vector<world::TransitionRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_corpus: cannot open " + path);
    for (const auto& r : records) os << record_to_json(r).dump() << "\n";
}

inline std::vector<world::TransitionRecord> load_corpus(const std::string& path, const Vocab& vocab) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_corpus: cannot open " + path);
    std::vector<world::TransitionRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(ordered_json::parse(line), vocab));
    }
    return out;
}

// Episode grouping in corpus order (records of one game stay contiguous).
inline std::vector<std::vector<world::TransitionRecord>> group_episodes(
    const std::vector<world::TransitionRecord>& records) {
    std::vector<std::vector<world::TransitionRecord>> out;
    for (const auto& r : records) {
        if (out.empty() || out.back().back().game_id != r.game_id || out.back().back().step >= r.step)
            out.emplace_back();
        out.back().push_back(r);
    }
    return out;
}

// ============================================================================
// Game set directories
// ============================================================================

struct GameSet {
    std::vector<world::GameSpec> train, valid, test;
};

inline void save_game_set(const std::string& dir, const GameSet& set, const ordered_json& manifest_extra) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    ordered_json manifest;
    manifest["kind"] = "game-set";
    for (const auto& [name, specs] :
         {std::pair{"train", &set.train}, std::pair{"valid", &set.valid}, std::pair{"test", &set.test}}) {
        ordered_json files = ordered_json::array();
        for (size_t i = 0; i < specs->size(); ++i) {
            char fname[64];
            std::snprintf(fname, sizeof(fname), "%s_%04zu.json", name, i);
            const auto& spec = (*specs)[i];
            std::string body = spec_to_json(spec).dump(2) + "\n";
            write_file((fs::path(dir) / fname).string(), body);
            files.push_back({{"file", fname},
                             {"difficulty", spec.difficulty},
                             {"split", name},
                             {"seed", spec.seed},
                             {"hash", fnv1a_hex(body)}});
        }
        manifest["games"][name] = files;
    }
    for (auto it = manifest_extra.begin(); it != manifest_extra.end(); ++it) manifest[it.key()] = it.value();
    write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline GameSet load_game_set(const std::string& dir) {
    namespace fs = std::filesystem;
    auto manifest = ordered_json::parse(read_file((fs::path(dir) / "manifest.json").string()));
    GameSet set;
    for (const auto& [name, target] :
         {std::pair{"train", &set.train}, std::pair{"valid", &set.valid}, std::pair{"test", &set.test}}) {
        if (!manifest.at("games").contains(name)) continue;
        for (const auto& entry : manifest.at("games").at(name)) {
            auto body = read_file((fs::path(dir) / entry.at("file").get<std::string>()).string());
            target->push_back(spec_from_json(ordered_json::parse(body)));
        }
    }
    return set;
}

}  // namespace gata::io
