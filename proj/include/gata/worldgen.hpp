#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/kgraph.hpp"
#include "gata/rng.hpp"
#include "gata/vocab.hpp"

namespace gata::world {

// ============================================================================
// Static world tables
// ============================================================================

enum Dir : int { North = 0, South = 1, East = 2, West = 3 };

inline const char* dir_name(int d) {
    static const char* names[] = {"north", "south", "east", "west"};
    return names[d];
}
inline int dir_opposite(int d) { return d ^ 1; }
inline const char* dir_relation(int d) {
    // (B, A, north_of) holds when B lies north of A.
    static const char* rel[] = {"north_of", "south_of", "east_of", "west_of"};
    return rel[d];
}

inline const std::vector<std::string>& room_names() {
    static const std::vector<std::string> v = {"kitchen",  "pantry",   "livingroom",
                                               "bedroom",  "bathroom", "corridor",
                                               "backyard", "garden",   "shed"};
    return v;
}
inline const std::vector<std::string>& ingredient_names() {
    static const std::vector<std::string> v = {"carrot", "potato", "onion",  "apple",
                                               "pepper", "tomato", "banana", "lettuce"};
    return v;
}
inline const std::vector<std::string>& container_names() {
    static const std::vector<std::string> v = {"fridge", "cupboard", "toolbox"};
    return v;
}
inline const std::vector<std::string>& support_names() {
    static const std::vector<std::string> v = {"counter", "table", "workbench"};
    return v;
}
inline const std::vector<std::string>& appliance_names() {
    static const std::vector<std::string> v = {"stove", "oven", "bbq"};
    return v;
}

// Fixed furniture per room; order also fixes description order.
inline const std::vector<std::string>& room_furniture(const std::string& room) {
    static const std::map<std::string, std::vector<std::string>> m = {
        {"kitchen", {"fridge", "counter", "table", "stove", "oven"}},
        {"pantry", {"cupboard"}},
        {"shed", {"toolbox", "workbench"}},
        {"backyard", {"bbq"}},
    };
    static const std::vector<std::string> empty;
    auto it = m.find(room);
    return it == m.end() ? empty : it->second;
}

inline const std::vector<std::string>& cut_states() {
    static const std::vector<std::string> v = {"sliced", "diced", "chopped"};
    return v;
}
inline const std::vector<std::string>& cook_states() {
    static const std::vector<std::string> v = {"fried", "roasted", "grilled"};
    return v;
}
inline std::string cut_verb(const std::string& state) {
    if (state == "sliced") return "slice";
    if (state == "diced") return "dice";
    return "chop";
}
inline std::string cook_appliance(const std::string& state) {
    if (state == "fried") return "stove";
    if (state == "roasted") return "oven";
    return "bbq";
}
inline std::string cook_verb(const std::string& state) {
    if (state == "fried") return "fry";
    if (state == "roasted") return "roast";
    return "grill";
}

inline std::string article(const std::string& name) {
    switch (name.front()) {
        case 'a': case 'e': case 'i': case 'o': case 'u': return "an";
        default: return "a";
    }
}

// ============================================================================
// Game specification
// ============================================================================

struct ExitSpec {
    int room_a = -1;
    int room_b = -1;
    int dir_from_a = 0;  // direction of room_b as seen from room_a
    int door = -1;       // entity id or -1
};

struct DoorSpec {
    int entity = -1;
    bool starts_open = true;
};

struct RecipeEntry {
    int ingredient = -1;
    int cut = -1;   // entity id of the required cut-state word, -1 = keep uncut
    int cook = -1;  // entity id of the required cook-state word, -1 = keep raw
};

struct PlacementSpec {
    int entity = -1;
    int room = -1;
    int holder = -1;  // furniture entity id, -1 = floor
};

struct GameSpec {
    int difficulty = 1;       // requested level, 1..5
    int effective_level = 1;  // 1..4; level-5 games draw one of these
    uint64_t seed = 0;
    std::vector<int> rooms;
    std::vector<ExitSpec> exits;
    std::vector<DoorSpec> doors;
    std::vector<RecipeEntry> recipe;
    std::vector<PlacementSpec> placements;
    std::vector<std::pair<int, bool>> container_open;  // (container, starts open)
    int start_room = -1;
    int max_score = 0;

    friend bool operator==(const GameSpec& a, const GameSpec& b) {
        auto key = [](const GameSpec& s) {
            std::string k = std::to_string(s.difficulty) + "|" + std::to_string(s.effective_level) + "|" +
                            std::to_string(s.seed) + "|" + std::to_string(s.start_room) + "|" +
                            std::to_string(s.max_score);
            for (int r : s.rooms) k += "," + std::to_string(r);
            for (const auto& e : s.exits)
                k += ";" + std::to_string(e.room_a) + "/" + std::to_string(e.room_b) + "/" +
                     std::to_string(e.dir_from_a) + "/" + std::to_string(e.door);
            for (const auto& d : s.doors) k += ";d" + std::to_string(d.entity) + (d.starts_open ? "o" : "c");
            for (const auto& r : s.recipe)
                k += ";r" + std::to_string(r.ingredient) + "/" + std::to_string(r.cut) + "/" + std::to_string(r.cook);
            for (const auto& p : s.placements)
                k += ";p" + std::to_string(p.entity) + "/" + std::to_string(p.room) + "/" + std::to_string(p.holder);
            for (const auto& c : s.container_open) k += ";c" + std::to_string(c.first) + (c.second ? "o" : "c");
            return k;
        };
        return key(a) == key(b);
    }
};

// ============================================================================
// Runtime state
// ============================================================================

enum class Status { Ongoing, Won, Lost };

struct Observation {
    std::vector<std::string> tokens;
    bool is_room_description = false;

    std::string text() const { return join_tokens(tokens); }
};

struct ActionCandidate {
    std::vector<std::string> tokens;

    ActionCandidate() = default;
    explicit ActionCandidate(const std::string& s) : tokens(tokenize(s)) {}

    std::string text() const { return join_tokens(tokens); }
    friend bool operator==(const ActionCandidate&, const ActionCandidate&) = default;
};

struct GameState {
    GameSpec spec;
    kg::DiscreteGraph facts;  // ground-truth full graph, kept live
    kg::DiscreteGraph seen;   // witnessed portion, kept live
    int player_room = -1;
    int score = 0;
    int step_count = 0;
    int max_steps = 50;
    Status status = Status::Ongoing;
    bool cookbook_read = false;
    bool meal_prepared = false;
    std::vector<int> inventory;       // sorted entity ids
    std::set<int> rewarded_takes;     // first-pickup bonus bookkeeping
    std::set<int> visited_rooms;
};

struct StepResult {
    Observation obs;
    int reward = 0;
    bool done = false;
    std::vector<ActionCandidate> candidates;
};

struct ResetResult {
    GameState state;
    Observation obs;
    std::vector<ActionCandidate> candidates;
};

// ============================================================================
// Spec generation (Table-1 difficulty parameters)
// ============================================================================

namespace detail {

inline uint64_t mix_seed(uint64_t seed, int difficulty, int attempt) {
    uint64_t x = seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(difficulty) * 0x100000001b3ull +
                 static_cast<uint64_t>(attempt) * 0xc2b2ae3d27d4eb4full + 1;
    return x;
}

struct GridCell {
    int col = 0, row = 0;
};

}  // namespace detail

inline std::vector<ActionCandidate> walkthrough(const GameSpec& spec);  // fwd

inline GameSpec generate_game_attempt(int difficulty, uint64_t seed, int attempt) {
    const Vocab& voc = Vocab::cooking();
    Rng rng(detail::mix_seed(seed, difficulty, attempt));

    GameSpec spec;
    spec.difficulty = difficulty;
    spec.seed = seed;
    spec.effective_level = difficulty == 5 ? 1 + static_cast<int>(rng.below(4)) : difficulty;
    const int level = spec.effective_level;

    const int kitchen = voc.entity_id("kitchen");
    const int backyard = voc.entity_id("backyard");

    // --- rooms on a grid ---
    int cols = 1, rows = 1;
    std::vector<std::string> chosen;
    if (level <= 2) {
        chosen = {"kitchen"};
    } else if (level == 3) {
        chosen = room_names();  // all 9
        cols = 3; rows = 3;
    } else {
        chosen = {"kitchen", "backyard"};
        std::vector<std::string> rest;
        for (const auto& r : room_names())
            if (r != "kitchen" && r != "backyard") rest.push_back(r);
        rng.shuffle(rest);
        for (int i = 0; i < 4; ++i) chosen.push_back(rest[static_cast<size_t>(i)]);
        cols = 3; rows = 2;
    }
    rng.shuffle(chosen);
    std::map<int, detail::GridCell> cell_of;
    for (size_t i = 0; i < chosen.size(); ++i) {
        int id = voc.entity_id(chosen[i]);
        spec.rooms.push_back(id);
        cell_of[id] = {static_cast<int>(i) % cols, static_cast<int>(i) / cols};
    }

    // --- exits: random spanning tree over grid-adjacent cells, plus extras ---
    if (spec.rooms.size() > 1) {
        auto room_at = [&](int col, int row) -> int {
            for (int id : spec.rooms) {
                const auto& c = cell_of[id];
                if (c.col == col && c.row == row) return id;
            }
            return -1;
        };
        struct Edge { int a, b, dir_from_a; };
        std::vector<Edge> all_edges;
        for (int id : spec.rooms) {
            const auto& c = cell_of[id];
            if (int e = room_at(c.col + 1, c.row); e >= 0) all_edges.push_back({id, e, East});
            if (int s = room_at(c.col, c.row + 1); s >= 0) all_edges.push_back({id, s, South});
        }
        rng.shuffle(all_edges);
        std::map<int, int> comp;
        for (int id : spec.rooms) comp[id] = id;
        std::function<int(int)> find = [&](int x) { return comp[x] == x ? x : comp[x] = find(comp[x]); };
        std::vector<Edge> extra;
        for (const auto& e : all_edges) {
            if (find(e.a) != find(e.b)) {
                comp[find(e.a)] = find(e.b);
                spec.exits.push_back({e.a, e.b, e.dir_from_a, -1});
            } else {
                extra.push_back(e);
            }
        }
        for (const auto& e : extra)
            if (rng.chance(0.3)) spec.exits.push_back({e.a, e.b, e.dir_from_a, -1});

        // doors on up to two tree edges
        std::vector<size_t> door_slots;
        for (size_t i = 0; i < spec.exits.size(); ++i) door_slots.push_back(i);
        rng.shuffle(door_slots);
        const std::vector<std::string> door_ents = {"wooden door", "glass door"};
        size_t doors_placed = 0;
        for (size_t slot : door_slots) {
            if (doors_placed >= door_ents.size()) break;
            if (!rng.chance(0.5)) continue;
            int ent = voc.entity_id(door_ents[doors_placed]);
            spec.exits[slot].door = ent;
            spec.doors.push_back({ent, rng.chance(0.5)});
            ++doors_placed;
        }
    }

    // --- recipe ---
    const int recipe_size = level == 4 ? 3 : 1;
    std::vector<std::string> ings = ingredient_names();
    rng.shuffle(ings);
    for (int i = 0; i < recipe_size; ++i) {
        RecipeEntry entry;
        entry.ingredient = voc.entity_id(ings[static_cast<size_t>(i)]);
        if (level == 1 || level == 2 || level == 4)
            entry.cut = voc.entity_id(rng.pick(cut_states()));
        if (level == 2)
            entry.cook = voc.entity_id(rng.chance(0.5) ? std::string("fried") : std::string("roasted"));
        if (level == 4)
            entry.cook = voc.entity_id(rng.pick(cook_states()));
        spec.recipe.push_back(entry);
    }
    spec.max_score = 2;  // prepare + eat
    for (const auto& e : spec.recipe) spec.max_score += 1 + (e.cut >= 0 ? 1 : 0) + (e.cook >= 0 ? 1 : 0);

    // --- container openness ---
    for (int room : spec.rooms) {
        for (const auto& f : room_furniture(voc.entity_name(room))) {
            if (std::find(container_names().begin(), container_names().end(), f) != container_names().end())
                spec.container_open.emplace_back(voc.entity_id(f), rng.chance(0.5));
        }
    }

    // --- placements: cookbook, knife, recipe ingredients, distractors ---
    spec.placements.push_back({voc.entity_id("cookbook"), kitchen, voc.entity_id("table")});
    spec.placements.push_back({voc.entity_id("knife"), kitchen,
                               rng.chance(0.5) ? voc.entity_id("counter") : voc.entity_id("table")});

    auto spots_in_room = [&](int room) {
        std::vector<int> spots = {-1};  // floor
        for (const auto& f : room_furniture(voc.entity_name(room))) {
            bool is_container = std::find(container_names().begin(), container_names().end(), f) !=
                                container_names().end();
            bool is_support = std::find(support_names().begin(), support_names().end(), f) !=
                              support_names().end();
            if (is_container || is_support) spots.push_back(voc.entity_id(f));
        }
        return spots;
    };

    for (const auto& entry : spec.recipe) {
        int room = level <= 2 ? kitchen : rng.pick(spec.rooms);
        int holder = rng.pick(spots_in_room(room));
        spec.placements.push_back({entry.ingredient, room, holder});
    }

    if (level >= 2) {
        std::vector<std::string> pool;
        for (const auto& name : ings)
            if (std::none_of(spec.recipe.begin(), spec.recipe.end(), [&](const RecipeEntry& e) {
                    return e.ingredient == voc.entity_id(name);
                }))
                pool.push_back(name);
        std::vector<int> rooms_shuffled = spec.rooms;
        rng.shuffle(rooms_shuffled);
        for (size_t i = 0; i < rooms_shuffled.size() && i < pool.size(); ++i) {
            int room = rooms_shuffled[i];
            int holder = rng.pick(spots_in_room(room));
            spec.placements.push_back({voc.entity_id(pool[i]), room, holder});
        }
    }

    spec.start_room = level <= 2 ? kitchen : rng.pick(spec.rooms);
    (void)backyard;
    return spec;
}

// ============================================================================
// State construction and queries
// ============================================================================

namespace detail {

inline int rel(const char* name) { return Vocab::cooking().relation_id(name); }
inline int ent(const char* name) { return Vocab::cooking().entity_id(name); }

inline std::optional<int> fact_tail(const kg::DiscreteGraph& g, int head, int rel) {
    for (const auto& t : g.triples())
        if (t.head == head && t.rel == rel) return t.tail;
    return std::nullopt;
}

inline bool is_open(const kg::DiscreteGraph& g, int entity) {
    return g.contains({entity, ent("open"), rel("is")});
}

// Location of a portable item: (room, holder) with holder -1 for the floor,
// holder == player id for inventory.
struct ItemLoc {
    int room = -1;
    int holder = -1;
};

inline std::optional<ItemLoc> item_location(const GameState& s, int item) {
    const int r_in = rel("in"), r_on = rel("on"), r_at = rel("at");
    const int player = ent("player");
    for (const auto& t : s.facts.triples()) {
        if (t.head != item || (t.rel != r_in && t.rel != r_on)) continue;
        if (t.tail == player) return ItemLoc{s.player_room, player};
        // floor placement: tail is a room
        if (std::find(s.spec.rooms.begin(), s.spec.rooms.end(), t.tail) != s.spec.rooms.end())
            return ItemLoc{t.tail, -1};
        // furniture placement: locate the furniture's room
        for (const auto& f : s.facts.triples())
            if (f.head == t.tail && f.rel == r_at) return ItemLoc{f.tail, t.tail};
    }
    return std::nullopt;
}

inline std::optional<int> state_word(const GameState& s, int item, const std::vector<std::string>& words) {
    for (const auto& w : words) {
        int wid = ent(w.c_str());
        if (s.facts.contains({item, wid, rel("is")})) return wid;
    }
    return std::nullopt;
}

inline bool is_ingredient(int entity) {
    const Vocab& voc = Vocab::cooking();
    const auto& names = ingredient_names();
    return std::find(names.begin(), names.end(), voc.entity_name(entity)) != names.end();
}

inline bool is_room(const GameSpec& spec, int entity) {
    return std::find(spec.rooms.begin(), spec.rooms.end(), entity) != spec.rooms.end();
}

}  // namespace detail

// Doors adjacent to a room, in exit order.
inline std::vector<std::pair<int, int>> room_exits(const GameSpec& spec, int room) {
    // returns (direction, other room); door handled separately
    std::vector<std::pair<int, int>> out;
    for (int d = 0; d < 4; ++d) {
        for (const auto& e : spec.exits) {
            if (e.room_a == room && e.dir_from_a == d) out.emplace_back(d, e.room_b);
            else if (e.room_b == room && dir_opposite(e.dir_from_a) == d) out.emplace_back(d, e.room_a);
        }
    }
    return out;
}

inline int exit_door(const GameSpec& spec, int room, int dir) {
    for (const auto& e : spec.exits) {
        if (e.room_a == room && e.dir_from_a == dir) return e.door;
        if (e.room_b == room && dir_opposite(e.dir_from_a) == dir) return e.door;
    }
    return -1;
}

namespace detail {

inline std::vector<int> visible_items_in_room(const GameState& s, int room) {
    // floor items, then per-furniture items (open containers only); fixed order
    std::vector<int> out;
    const int r_in = rel("in"), r_on = rel("on");
    auto push_holder = [&](int holder) {
        for (const auto& t : s.facts.triples())
            if ((t.rel == r_in || t.rel == r_on) && t.tail == holder) out.push_back(t.head);
    };
    push_holder(room);
    const Vocab& voc = Vocab::cooking();
    for (const auto& f : room_furniture(voc.entity_name(room))) {
        int fid = voc.entity_id(f);
        bool is_container = std::find(container_names().begin(), container_names().end(), f) !=
                            container_names().end();
        if (is_container && !is_open(s.facts, fid)) continue;
        push_holder(fid);
    }
    return out;
}

inline std::string list_phrase(const std::vector<int>& items) {
    const Vocab& voc = Vocab::cooking();
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) {
        const std::string& n = voc.entity_name(items[i]);
        if (i > 0) out += (i + 1 == items.size()) ? " and " : " , ";
        out += article(n) + " " + n;
    }
    return out;
}

inline std::string item_with_states(const GameState& s, int item) {
    // "a sliced fried carrot"
    std::string mods;
    if (auto c = state_word(s, item, cut_states())) mods += Vocab::cooking().entity_name(*c) + " ";
    if (auto k = state_word(s, item, cook_states())) mods += Vocab::cooking().entity_name(*k) + " ";
    const std::string& n = Vocab::cooking().entity_name(item);
    std::string full = mods + n;
    return article(full) + " " + full;
}

inline std::string room_description(const GameState& s, int room) {
    const Vocab& voc = Vocab::cooking();
    const std::string& rn = voc.entity_name(room);
    std::string out = "-= " + rn + " =- you are in the " + rn + " .";

    const int r_in = rel("in"), r_on = rel("on");
    for (const auto& fname : room_furniture(rn)) {
        int fid = voc.entity_id(fname);
        bool is_container = std::find(container_names().begin(), container_names().end(), fname) !=
                            container_names().end();
        bool is_support = std::find(support_names().begin(), support_names().end(), fname) !=
                          support_names().end();
        out += " you can see " + article(fname) + " " + fname + " .";
        if (is_container) {
            if (!is_open(s.facts, fid)) {
                out += " the " + fname + " is closed .";
            } else {
                std::vector<int> inside;
                for (const auto& t : s.facts.triples())
                    if (t.rel == r_in && t.tail == fid) inside.push_back(t.head);
                out += " the " + fname + " is open .";
                out += inside.empty() ? " it is empty ." : " it contains " + list_phrase(inside) + " .";
            }
        } else if (is_support) {
            std::vector<int> on_top;
            for (const auto& t : s.facts.triples())
                if (t.rel == r_on && t.tail == fid) on_top.push_back(t.head);
            if (!on_top.empty()) out += " on the " + fname + " you see " + list_phrase(on_top) + " .";
        }
    }

    std::vector<int> floor;
    for (const auto& t : s.facts.triples())
        if (t.rel == r_in && t.tail == room) floor.push_back(t.head);
    if (!floor.empty()) out += " there is " + list_phrase(floor) + " on the floor .";

    for (const auto& [d, other] : room_exits(s.spec, room)) {
        int door = exit_door(s.spec, room, d);
        if (door >= 0) {
            const std::string& dn = voc.entity_name(door);
            out += std::string(" there is ") + (is_open(s.facts, door) ? "an open " : "a closed ") + dn +
                   " leading " + dir_name(d) + " .";
        } else {
            out += std::string(" there is an exit to the ") + dir_name(d) + " .";
        }
        (void)other;
    }
    return out;
}

inline std::string recipe_text(const GameState& s) {
    const Vocab& voc = Vocab::cooking();
    std::string ing_list, directions;
    for (size_t i = 0; i < s.spec.recipe.size(); ++i) {
        const auto& e = s.spec.recipe[i];
        if (i) ing_list += " , ";
        ing_list += voc.entity_name(e.ingredient);
        if (e.cut >= 0)
            directions += cut_verb(voc.entity_name(e.cut)) + " the " + voc.entity_name(e.ingredient) + " , ";
        if (e.cook >= 0)
            directions += cook_verb(voc.entity_name(e.cook)) + " the " + voc.entity_name(e.ingredient) + " , ";
    }
    directions += "prepare meal";
    return "you open the cookbook and start reading . ingredients : " + ing_list +
           " . directions : " + directions + " .";
}

// Mirrors a fact change into the seen graph. All state-changing actions are
// local to the player's room, so every change is witnessed.
inline void add_fact(GameState& s, int head, int tail, int r, bool witnessed = true) {
    s.facts.add({head, tail, r});
    if (witnessed) s.seen.add({head, tail, r});
}
inline void remove_fact(GameState& s, int head, int tail, int r, bool witnessed = true) {
    s.facts.remove({head, tail, r});
    if (witnessed) s.seen.remove({head, tail, r});
}

// Copies all currently visible facts of a room into the seen graph.
inline void witness_room(GameState& s, int room) {
    const Vocab& voc = Vocab::cooking();
    const int r_at = rel("at"), r_in = rel("in"), r_on = rel("on"), r_is = rel("is");
    s.visited_rooms.insert(room);
    auto see_item = [&](int item) {
        for (const auto& t : s.facts.triples())
            if (t.head == item && t.rel == r_is) s.seen.add(t);
    };
    for (const auto& fname : room_furniture(voc.entity_name(room))) {
        int fid = voc.entity_id(fname);
        s.seen.add({fid, room, r_at});
        bool is_container = std::find(container_names().begin(), container_names().end(), fname) !=
                            container_names().end();
        if (is_container) {
            for (const auto& t : s.facts.triples())
                if (t.head == fid && t.rel == r_is) s.seen.add(t);
            if (!is_open(s.facts, fid)) continue;  // contents stay hidden
        }
        for (const auto& t : s.facts.triples())
            if ((t.rel == r_in || t.rel == r_on) && t.tail == fid) {
                s.seen.add(t);
                see_item(t.head);
            }
    }
    for (const auto& t : s.facts.triples())
        if (t.rel == r_in && t.tail == room) {
            s.seen.add(t);
            see_item(t.head);
        }
    for (const auto& [d, other] : room_exits(s.spec, room)) {
        int door = exit_door(s.spec, room, d);
        if (door < 0) continue;
        s.seen.add({door, room, voc.relation_id(dir_relation(d))});
        for (const auto& t : s.facts.triples())
            if (t.head == door && t.rel == r_is) s.seen.add(t);
        (void)other;
    }
}

}  // namespace detail

// ============================================================================
// Candidate enumeration
// ============================================================================

inline std::vector<ActionCandidate> candidates(const GameState& s) {
    using namespace detail;
    const Vocab& voc = Vocab::cooking();
    std::vector<ActionCandidate> out;
    if (s.status != Status::Ongoing) return out;

    const int room = s.player_room;
    const int cookbook = ent("cookbook");

    if (auto loc = item_location(s, cookbook); loc && loc->room == room && loc->holder != ent("player"))
        out.emplace_back("examine cookbook");

    for (const auto& [d, other] : room_exits(s.spec, room)) {
        int door = exit_door(s.spec, room, d);
        if (door >= 0 && !is_open(s.facts, door))
            out.emplace_back("open " + voc.entity_name(door));
        (void)other;
    }
    for (const auto& [d, other] : room_exits(s.spec, room)) {
        int door = exit_door(s.spec, room, d);
        if (door < 0 || is_open(s.facts, door)) out.emplace_back(std::string("go ") + dir_name(d));
        (void)other;
    }

    for (const auto& fname : room_furniture(voc.entity_name(room))) {
        bool is_container = std::find(container_names().begin(), container_names().end(), fname) !=
                            container_names().end();
        if (is_container && !is_open(s.facts, voc.entity_id(fname)))
            out.emplace_back("open " + fname);
    }

    for (int item : visible_items_in_room(s, room))
        if (item != cookbook) out.emplace_back("take " + voc.entity_name(item));

    for (int item : s.inventory)
        if (item != ent("meal")) out.emplace_back("drop " + voc.entity_name(item));

    const bool knife_here = [&] {
        auto loc = item_location(s, ent("knife"));
        return loc && (loc->holder == ent("player") || loc->room == room);
    }();
    for (int item : s.inventory) {
        if (!is_ingredient(item)) continue;
        if (knife_here && !state_word(s, item, cut_states()))
            for (const auto& cs : cut_states())
                out.emplace_back(cut_verb(cs) + " " + voc.entity_name(item) + " with knife");
        if (!state_word(s, item, cook_states())) {
            for (const auto& a : room_furniture(voc.entity_name(room))) {
                if (std::find(appliance_names().begin(), appliance_names().end(), a) != appliance_names().end())
                    out.emplace_back("cook " + voc.entity_name(item) + " with " + a);
            }
        }
    }

    if (!s.meal_prepared && s.cookbook_read && room == ent("kitchen")) {
        bool ready = true;
        for (const auto& e : s.spec.recipe) {
            bool in_inv = std::binary_search(s.inventory.begin(), s.inventory.end(), e.ingredient);
            bool cut_ok = (e.cut < 0) ? !state_word(s, e.ingredient, cut_states())
                                      : s.facts.contains({e.ingredient, e.cut, rel("is")});
            bool cook_ok = (e.cook < 0) ? !state_word(s, e.ingredient, cook_states())
                                        : s.facts.contains({e.ingredient, e.cook, rel("is")});
            if (!in_inv || !cut_ok || !cook_ok) ready = false;
        }
        if (ready) out.emplace_back("prepare meal");
    }
    if (std::binary_search(s.inventory.begin(), s.inventory.end(), ent("meal")))
        out.emplace_back("eat meal");
    return out;
}

// ============================================================================
// Reset and step
// ============================================================================

inline ResetResult reset(const GameSpec& spec) {
    using namespace detail;
    const Vocab& voc = Vocab::cooking();
    GameState s;
    s.spec = spec;
    s.facts = kg::DiscreteGraph(&voc);
    s.seen = kg::DiscreteGraph(&voc);
    s.player_room = spec.start_room;

    const int r_at = rel("at"), r_in = rel("in"), r_on = rel("on"), r_is = rel("is");
    s.facts.add({ent("player"), spec.start_room, r_at});

    for (const auto& e : spec.exits) {
        int d = e.dir_from_a;  // room_b lies in direction d from room_a
        s.facts.add({e.room_b, e.room_a, voc.relation_id(dir_relation(d))});
        s.facts.add({e.room_a, e.room_b, voc.relation_id(dir_relation(dir_opposite(d)))});
        if (e.door >= 0) {
            s.facts.add({e.door, e.room_a, voc.relation_id(dir_relation(d))});
            s.facts.add({e.door, e.room_b, voc.relation_id(dir_relation(dir_opposite(d)))});
        }
    }
    for (const auto& d : spec.doors)
        s.facts.add({d.entity, ent(d.starts_open ? "open" : "closed"), r_is});

    for (int room : spec.rooms)
        for (const auto& fname : room_furniture(voc.entity_name(room)))
            s.facts.add({voc.entity_id(fname), room, r_at});
    for (const auto& [c, open] : spec.container_open)
        s.facts.add({c, ent(open ? "open" : "closed"), r_is});

    for (const auto& p : spec.placements) {
        if (p.holder < 0) {
            s.facts.add({p.entity, p.room, r_in});
        } else {
            bool container = std::find(container_names().begin(), container_names().end(),
                                       voc.entity_name(p.holder)) != container_names().end();
            s.facts.add({p.entity, p.holder, container ? r_in : r_on});
        }
    }

    for (const auto& e : spec.recipe) {
        s.facts.add({e.ingredient, ent("meal"), voc.relation_id("part_of")});
        if (e.cut >= 0) s.facts.add({e.ingredient, e.cut, voc.relation_id("needs")});
        if (e.cook >= 0) s.facts.add({e.ingredient, e.cook, voc.relation_id("needs")});
    }

    s.seen.add({ent("player"), spec.start_room, r_at});
    witness_room(s, spec.start_room);

    ResetResult out;
    out.obs.tokens = tokenize(room_description(s, spec.start_room));
    out.obs.is_room_description = true;
    out.candidates = candidates(s);
    out.state = std::move(s);
    return out;
}

inline StepResult step(GameState& s, const ActionCandidate& action) {
    using namespace detail;
    const Vocab& voc = Vocab::cooking();
    if (s.status != Status::Ongoing) throw std::invalid_argument("step: game already finished");
    {
        auto cands = candidates(s);
        if (std::find(cands.begin(), cands.end(), action) == cands.end())
            throw std::invalid_argument("step: action not in candidate list: " + action.text());
    }

    StepResult res;
    const auto& toks = action.tokens;
    const std::string& verb = toks.front();
    const int r_at = rel("at"), r_in = rel("in"), r_on = rel("on"), r_is = rel("is");
    const int player = ent("player");
    std::string text;

    auto score_line = [&](int delta) {
        s.score += delta;
        res.reward = delta;
        if (delta > 0) text += " your score has just gone up by one point .";
    };

    auto name_after = [&](size_t from, size_t drop_back = 0) {
        std::string n;
        for (size_t i = from; i + drop_back < toks.size(); ++i) {
            if (!n.empty()) n += " ";
            n += toks[i];
        }
        return n;
    };

    if (verb == "go") {
        int d = -1;
        for (int k = 0; k < 4; ++k)
            if (toks[1] == dir_name(k)) d = k;
        int dest = -1;
        for (const auto& [dd, other] : room_exits(s.spec, s.player_room))
            if (dd == d) dest = other;
        remove_fact(s, player, s.player_room, r_at);
        add_fact(s, player, dest, r_at);
        // room connectivity becomes seen knowledge on traversal
        s.seen.add({dest, s.player_room, voc.relation_id(dir_relation(d))});
        s.seen.add({s.player_room, dest, voc.relation_id(dir_relation(dir_opposite(d)))});
        s.player_room = dest;
        witness_room(s, dest);
        text = room_description(s, dest);
        res.obs.is_room_description = true;
    } else if (verb == "open") {
        int target = voc.entity_id(name_after(1));
        remove_fact(s, target, ent("closed"), r_is);
        add_fact(s, target, ent("open"), r_is);
        text = "you open the " + voc.entity_name(target) + " .";
        bool container = std::find(container_names().begin(), container_names().end(),
                                   voc.entity_name(target)) != container_names().end();
        if (container) {
            std::vector<int> inside;
            for (const auto& t : s.facts.triples())
                if (t.rel == r_in && t.tail == target) inside.push_back(t.head);
            for (int item : inside) {
                s.seen.add({item, target, r_in});
                for (const auto& t : s.facts.triples())
                    if (t.head == item && t.rel == r_is) s.seen.add(t);
            }
            text += inside.empty() ? " it is empty ." : " it contains " + list_phrase(inside) + " .";
        }
    } else if (verb == "take") {
        int item = voc.entity_id(name_after(1));
        auto loc = item_location(s, item);
        remove_fact(s, item, loc->holder < 0 ? loc->room : loc->holder,
                    loc->holder < 0 ? r_in : (s.facts.contains({item, loc->holder, r_on}) ? r_on : r_in));
        add_fact(s, item, player, r_in);
        s.inventory.insert(std::lower_bound(s.inventory.begin(), s.inventory.end(), item), item);
        text = "you take the " + voc.entity_name(item) + " .";
        bool in_recipe = std::any_of(s.spec.recipe.begin(), s.spec.recipe.end(),
                                     [&](const RecipeEntry& e) { return e.ingredient == item; });
        if (in_recipe && !s.rewarded_takes.count(item)) {
            s.rewarded_takes.insert(item);
            score_line(1);
        }
    } else if (verb == "drop") {
        int item = voc.entity_id(name_after(1));
        remove_fact(s, item, player, r_in);
        add_fact(s, item, s.player_room, r_in);
        s.inventory.erase(std::find(s.inventory.begin(), s.inventory.end(), item));
        text = "you drop the " + voc.entity_name(item) + " .";
    } else if (verb == "slice" || verb == "dice" || verb == "chop") {
        int item = voc.entity_id(name_after(1, 2));  // strip "with knife"
        int state = ent(verb == "slice" ? "sliced" : verb == "dice" ? "diced" : "chopped");
        add_fact(s, item, state, r_is);
        text = "you " + verb + " the " + voc.entity_name(item) + " .";
        auto it = std::find_if(s.spec.recipe.begin(), s.spec.recipe.end(),
                               [&](const RecipeEntry& e) { return e.ingredient == item; });
        if (it != s.spec.recipe.end()) {
            if (it->cut == state) {
                score_line(1);
            } else {
                std::string want = it->cut < 0 ? std::string("an unprocessed ") + voc.entity_name(item)
                                               : article(voc.entity_name(it->cut)) + " " +
                                                     voc.entity_name(it->cut) + " " + voc.entity_name(item);
                text += " that was a mistake . the recipe requires " + want + " . you lost .";
                s.status = Status::Lost;
            }
        }
    } else if (verb == "cook") {
        int item = voc.entity_id(name_after(1, 2));  // strip "with <appliance>"
        const std::string& appliance = toks.back();
        std::string cstate = appliance == "stove" ? "fried" : appliance == "oven" ? "roasted" : "grilled";
        int state = ent(cstate.c_str());
        add_fact(s, item, state, r_is);
        text = "you " + cook_verb(cstate) + " the " + voc.entity_name(item) + " .";
        auto it = std::find_if(s.spec.recipe.begin(), s.spec.recipe.end(),
                               [&](const RecipeEntry& e) { return e.ingredient == item; });
        if (it != s.spec.recipe.end()) {
            if (it->cook == state) {
                score_line(1);
            } else {
                std::string want = it->cook < 0 ? std::string("a raw ") + voc.entity_name(item)
                                                : article(voc.entity_name(it->cook)) + " " +
                                                      voc.entity_name(it->cook) + " " + voc.entity_name(item);
                text += " that was a mistake . the recipe requires " + want + " . you lost .";
                s.status = Status::Lost;
            }
        }
    } else if (verb == "examine") {
        s.cookbook_read = true;
        for (const auto& e : s.spec.recipe) {
            s.seen.add({e.ingredient, ent("meal"), voc.relation_id("part_of")});
            if (e.cut >= 0) s.seen.add({e.ingredient, e.cut, voc.relation_id("needs")});
            if (e.cook >= 0) s.seen.add({e.ingredient, e.cook, voc.relation_id("needs")});
        }
        text = recipe_text(s);
    } else if (verb == "prepare") {
        for (const auto& e : s.spec.recipe) {
            remove_fact(s, e.ingredient, player, r_in);
            s.inventory.erase(std::find(s.inventory.begin(), s.inventory.end(), e.ingredient));
            for (const auto& w : cut_states())
                remove_fact(s, e.ingredient, ent(w.c_str()), r_is);
            for (const auto& w : cook_states())
                remove_fact(s, e.ingredient, ent(w.c_str()), r_is);
        }
        int meal = ent("meal");
        add_fact(s, meal, player, r_in);
        s.inventory.insert(std::lower_bound(s.inventory.begin(), s.inventory.end(), meal), meal);
        s.meal_prepared = true;
        text = "you follow the recipe and prepare the meal . adding the meal to your inventory .";
        score_line(1);
    } else if (verb == "eat") {
        int meal = ent("meal");
        remove_fact(s, meal, player, r_in);
        s.inventory.erase(std::find(s.inventory.begin(), s.inventory.end(), meal));
        s.status = Status::Won;
        text = "you eat the meal . you won .";
        score_line(1);
    } else {
        throw std::invalid_argument("step: unknown verb: " + verb);
    }

    ++s.step_count;
    if (s.step_count >= s.max_steps && s.status == Status::Ongoing) res.done = true;
    if (s.status != Status::Ongoing) res.done = true;

    // feedback text was assembled before the score suffix in score_line
    res.obs.tokens = tokenize(text);
    res.candidates = candidates(s);
    return res;
}

inline kg::DiscreteGraph ground_truth_full(const GameState& s) { return s.facts; }
inline kg::DiscreteGraph ground_truth_seen(const GameState& s) { return s.seen; }

// ============================================================================
// Planner: walkthroughs from any ongoing state
// ============================================================================

namespace detail {

inline std::vector<int> route(const GameSpec& spec, int from, int to) {
    // BFS over rooms; returns the direction sequence
    if (from == to) return {};
    std::map<int, std::pair<int, int>> prev;  // room -> (prev room, dir)
    std::deque<int> q{from};
    std::set<int> seen{from};
    while (!q.empty()) {
        int cur = q.front();
        q.pop_front();
        for (const auto& [d, other] : room_exits(spec, cur)) {
            if (seen.count(other)) continue;
            seen.insert(other);
            prev[other] = {cur, d};
            if (other == to) {
                std::vector<int> dirs;
                for (int r = to; r != from; r = prev[r].first) dirs.push_back(prev[r].second);
                std::reverse(dirs.begin(), dirs.end());
                return dirs;
            }
            q.push_back(other);
        }
    }
    throw std::logic_error("route: map is not connected");
}

}  // namespace detail

// Plans the remaining optimal actions from the given state. The plan is
// verified by simulation before being returned.
inline std::vector<ActionCandidate> plan_from(const GameState& start) {
    using namespace detail;
    const Vocab& voc = Vocab::cooking();
    GameState s = start;
    std::vector<ActionCandidate> plan;

    auto act = [&](const std::string& a) {
        ActionCandidate c(a);
        step(s, c);
        plan.push_back(c);
    };
    auto go_to = [&](int room) {
        for (int d : route(s.spec, s.player_room, room)) {
            int door = exit_door(s.spec, s.player_room, d);
            if (door >= 0 && !is_open(s.facts, door)) act("open " + voc.entity_name(door));
            act(std::string("go ") + dir_name(d));
        }
    };

    const int kitchen = ent("kitchen");
    if (s.meal_prepared) {  // only eating remains
        act("eat meal");
        return plan;
    }
    if (!s.cookbook_read) {
        go_to(kitchen);
        act("examine cookbook");
    }
    for (const auto& e : s.spec.recipe) {
        if (std::binary_search(s.inventory.begin(), s.inventory.end(), e.ingredient)) continue;
        auto loc = item_location(s, e.ingredient);
        go_to(loc->room);
        if (loc->holder >= 0 &&
            std::find(container_names().begin(), container_names().end(),
                      voc.entity_name(loc->holder)) != container_names().end() &&
            !is_open(s.facts, loc->holder))
            act("open " + voc.entity_name(loc->holder));
        act("take " + voc.entity_name(e.ingredient));
    }
    for (const auto& e : s.spec.recipe) {
        if (e.cut < 0 || state_word(s, e.ingredient, cut_states())) continue;
        auto knife = item_location(s, ent("knife"));
        if (knife->holder != ent("player")) go_to(knife->room);
        act(cut_verb(voc.entity_name(e.cut)) + " " + voc.entity_name(e.ingredient) + " with knife");
    }
    for (const auto& e : s.spec.recipe) {
        if (e.cook < 0 || state_word(s, e.ingredient, cook_states())) continue;
        std::string appliance = cook_appliance(voc.entity_name(e.cook));
        go_to(ent(appliance == "bbq" ? "backyard" : "kitchen"));
        act("cook " + voc.entity_name(e.ingredient) + " with " + appliance);
    }
    go_to(kitchen);
    act("prepare meal");
    act("eat meal");
    return plan;
}

inline std::vector<ActionCandidate> walkthrough(const GameSpec& spec) {
    return plan_from(reset(spec).state);
}

inline GameSpec generate_game(int difficulty, uint64_t seed) {
    if (difficulty < 1 || difficulty > 5)
        throw std::invalid_argument("generate_game: difficulty must be in 1..5");
    for (int attempt = 0; attempt < 64; ++attempt) {
        GameSpec spec = generate_game_attempt(difficulty, seed, attempt);
        auto wt = walkthrough(spec);  // also validates solvability
        if (static_cast<int>(wt.size()) <= 45) return spec;
    }
    throw std::logic_error("generate_game: no valid layout found");
}

// ============================================================================
// Transition collection for pretraining corpora
// ============================================================================

struct TransitionRecord {
    std::string game_id;
    int step = 0;
    Observation obs_prev;
    std::vector<std::string> action;
    Observation obs;
    kg::DiscreteGraph gseen_prev;
    kg::DiscreteGraph gseen;
    kg::DiscreteGraph gfull;
    bool done = false;
};

inline std::vector<TransitionRecord> collect_transitions(const std::vector<GameSpec>& specs,
                                                         double off_path_rate, uint64_t seed) {
    if (off_path_rate < 0.0 || off_path_rate > 1.0)
        throw std::invalid_argument("collect_transitions: rate must be in [0, 1]");
    std::vector<TransitionRecord> out;
    Rng top(seed);
    for (size_t gi = 0; gi < specs.size(); ++gi) {
        Rng rng = top.fork(gi);
        const GameSpec& spec = specs[gi];
        auto rr = reset(spec);
        GameState s = std::move(rr.state);
        Observation prev_obs = rr.obs;
        kg::DiscreteGraph gseen_prev = s.seen;
        std::deque<ActionCandidate> plan;
        for (auto& a : plan_from(s)) plan.push_back(a);

        int t = 0;
        while (s.status == Status::Ongoing && s.step_count < s.max_steps && !plan.empty()) {
            ActionCandidate action = plan.front();
            bool detoured = false;
            if (off_path_rate > 0.0 && rng.chance(off_path_rate)) {
                auto cands = candidates(s);
                for (int tries = 0; tries < 10; ++tries) {
                    const ActionCandidate& pickc = cands[rng.below(cands.size())];
                    GameState probe = s;
                    auto pr = step(probe, pickc);
                    if (probe.status == Status::Ongoing && !pr.done) {
                        action = pickc;
                        detoured = true;
                        break;
                    }
                }
            }
            auto sr = step(s, action);
            TransitionRecord rec;
            rec.game_id = std::to_string(spec.difficulty) + "-" + std::to_string(spec.seed);
            rec.step = t;
            rec.obs_prev = prev_obs;
            rec.action = action.tokens;
            rec.obs = sr.obs;
            rec.gseen_prev = gseen_prev;
            rec.gseen = s.seen;
            rec.gfull = s.facts;
            rec.done = sr.done;
            out.push_back(std::move(rec));

            if (detoured) {
                plan.clear();
                if (s.status == Status::Ongoing)
                    for (auto& a : plan_from(s)) plan.push_back(a);
            } else {
                plan.pop_front();
            }
            prev_obs = sr.obs;
            gseen_prev = s.seen;
            ++t;
            if (sr.done) break;
        }
    }
    return out;
}

// Word vocabulary covering every token the engine and the command language
// can emit.
inline WordVocab build_word_vocab() {
    std::vector<std::string> words = {
        "-=", "=-", ".", ",", ":", "you", "are", "in", "the", "can", "see", "a", "an",
        "is", "it", "inside", "contains", "empty", "on", "there", "floor", "exit",
        "to", "leading", "and", "open", "closed", "go", "north", "south", "east",
        "west", "take", "drop", "with", "your", "score", "has", "just", "gone", "up",
        "by", "one", "point", "that", "was", "mistake", "recipe", "requires",
        "lost", "won", "start", "reading", "ingredients", "directions", "prepare",
        "follow", "adding", "inventory", "eat", "examine", "slice", "dice", "chop",
        "cook", "fry", "roast", "grill", "raw", "unprocessed", "uncut", "add",
        "delete", "restart",
    };
    const Vocab& voc = Vocab::cooking();
    for (const auto& e : voc.entities())
        for (const auto& tok : tokenize(e)) words.push_back(tok);
    for (const auto& r : voc.relations()) words.push_back(r);
    return WordVocab(words);
}

}  // namespace gata::world
