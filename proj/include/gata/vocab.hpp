#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gata {

constexpr int kRelationCount = 10;  // base relations; adjacency tensors carry 2x with inverses

// Fixed entity / relation vocabularies. Entity names may span several
// tokens ("wooden door"); indices are stable and define tensor layout.
class Vocab {
public:
    Vocab(std::vector<std::string> entities, std::vector<std::string> relations)
        : entities_(std::move(entities)), relations_(std::move(relations)) {
        if (static_cast<int>(relations_.size()) != kRelationCount)
            throw std::invalid_argument("Vocab: expected exactly " + std::to_string(kRelationCount) + " relations");
        for (size_t i = 0; i < entities_.size(); ++i) {
            if (!entity_index_.emplace(entities_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("Vocab: duplicate entity name: " + entities_[i]);
        }
        for (size_t i = 0; i < relations_.size(); ++i) {
            if (!relation_index_.emplace(relations_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("Vocab: duplicate relation name: " + relations_[i]);
        }
    }

    static const Vocab& cooking() {
        static const Vocab v(
            {
                // rooms
                "kitchen", "pantry", "livingroom", "bedroom", "bathroom",
                "corridor", "backyard", "garden", "shed",
                // specials
                "player", "cookbook", "meal",
                // ingredients
                "carrot", "potato", "onion", "apple", "pepper", "tomato",
                "banana", "lettuce",
                // tools and appliances
                "knife", "stove", "oven", "bbq",
                // containers and supports
                "fridge", "counter", "table", "cupboard", "toolbox", "workbench",
                // doors
                "wooden door", "glass door",
                // state words
                "sliced", "diced", "chopped", "fried", "roasted", "grilled",
                "open", "closed",
            },
            {"north_of", "south_of", "east_of", "west_of", "at", "in", "on", "is",
             "part_of", "needs"});
        return v;
    }

    int num_entities() const { return static_cast<int>(entities_.size()); }
    int num_relations() const { return kRelationCount; }

    const std::string& entity_name(int id) const { return entities_.at(static_cast<size_t>(id)); }
    const std::string& relation_name(int id) const { return relations_.at(static_cast<size_t>(id)); }

    int entity_id(const std::string& name) const {
        auto it = entity_index_.find(name);
        if (it == entity_index_.end()) throw std::invalid_argument("Vocab: unknown entity: " + name);
        return it->second;
    }
    int relation_id(const std::string& name) const {
        auto it = relation_index_.find(name);
        if (it == relation_index_.end()) throw std::invalid_argument("Vocab: unknown relation: " + name);
        return it->second;
    }

    bool has_entity(const std::string& name) const { return entity_index_.count(name) != 0; }
    bool has_relation(const std::string& name) const { return relation_index_.count(name) != 0; }

    const std::vector<std::string>& entities() const { return entities_; }
    const std::vector<std::string>& relations() const { return relations_; }

    bool same_as(const Vocab& other) const {
        return entities_ == other.entities_ && relations_ == other.relations_;
    }

private:
    std::vector<std::string> entities_;
    std::vector<std::string> relations_;
    std::unordered_map<std::string, int> entity_index_;
    std::unordered_map<std::string, int> relation_index_;
};

// Token-level vocabulary for the text pipeline. Index 0 is padding, 1 is
// the unknown token; decoding special tokens live at fixed slots.
class WordVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;  // "<s>"
    static constexpr int kEos = 3;  // "</s>"
    static constexpr int kSep = 4;  // "<|>"

    explicit WordVocab(const std::vector<std::string>& words) {
        add("<pad>");
        add("<unk>");
        add("<s>");
        add("</s>");
        add("<|>");
        for (const auto& w : words) add(w);
    }

    int size() const { return static_cast<int>(words_.size()); }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& word(int id) const { return words_.at(static_cast<size_t>(id)); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int i : ids) out.push_back(word(i));
        return out;
    }

private:
    void add(const std::string& w) {
        if (index_.emplace(w, static_cast<int>(words_.size())).second) words_.push_back(w);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

// Lowercases and splits on whitespace after isolating .,:;!? as their own
// tokens. Engine templates are already lowercase; this also normalizes
// externally supplied strings.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::string spaced;
    spaced.reserve(text.size() * 2);
    for (char c : text) {
        if (c == '.' || c == ',' || c == ':' || c == ';' || c == '!' || c == '?') {
            spaced.push_back(' ');
            spaced.push_back(c);
            spaced.push_back(' ');
        } else {
            spaced.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
        }
    }
    std::vector<std::string> tokens;
    std::istringstream is(spaced);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace gata
