#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "gata/vocab.hpp"

namespace gata::kg {

// ============================================================================
// Discrete graphs: sets of (head, tail, relation) index triples
// ============================================================================

struct Triple {
    int head = 0;
    int tail = 0;
    int rel = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

class DiscreteGraph {
public:
    DiscreteGraph() = default;
    explicit DiscreteGraph(const Vocab* vocab) : vocab_(vocab) {}

    const Vocab& vocab() const {
        if (!vocab_) throw std::logic_error("DiscreteGraph: no vocabulary attached");
        return *vocab_;
    }
    const Vocab* vocab_ptr() const { return vocab_; }

    bool contains(const Triple& t) const {
        return std::binary_search(triples_.begin(), triples_.end(), t);
    }
    bool contains(const std::string& head, const std::string& tail, const std::string& rel) const {
        return contains({vocab().entity_id(head), vocab().entity_id(tail), vocab().relation_id(rel)});
    }

    void add(const Triple& t) {
        check_bounds(t);
        auto it = std::lower_bound(triples_.begin(), triples_.end(), t);
        if (it == triples_.end() || *it != t) triples_.insert(it, t);
    }
    void add(const std::string& head, const std::string& tail, const std::string& rel) {
        add({vocab().entity_id(head), vocab().entity_id(tail), vocab().relation_id(rel)});
    }

    void remove(const Triple& t) {
        auto it = std::lower_bound(triples_.begin(), triples_.end(), t);
        if (it != triples_.end() && *it == t) triples_.erase(it);
    }
    void remove(const std::string& head, const std::string& tail, const std::string& rel) {
        remove({vocab().entity_id(head), vocab().entity_id(tail), vocab().relation_id(rel)});
    }

    size_t size() const { return triples_.size(); }
    bool empty() const { return triples_.empty(); }
    const std::vector<Triple>& triples() const { return triples_; }  // always sorted

    friend bool operator==(const DiscreteGraph& a, const DiscreteGraph& b) {
        return a.triples_ == b.triples_;
    }

private:
    void check_bounds(const Triple& t) const {
        const Vocab& v = vocab();
        if (t.head < 0 || t.head >= v.num_entities() || t.tail < 0 || t.tail >= v.num_entities() ||
            t.rel < 0 || t.rel >= v.num_relations())
            throw std::invalid_argument("DiscreteGraph: triple index out of vocabulary bounds");
    }

    const Vocab* vocab_ = nullptr;
    std::vector<Triple> triples_;
};

// ============================================================================
// Belief graphs: real adjacency tensors in [-1, 1], 2R channels
// ============================================================================

// Channel layout: channels [0, R) hold the base relations, channel r + R is
// the transpose of channel r so message passing can follow inverse edges.
class BeliefGraph {
public:
    BeliefGraph() = default;
    BeliefGraph(int num_entities, int num_relations)
        : n_(num_entities), r_(num_relations),
          values_(static_cast<size_t>(2 * r_) * n_ * n_, 0.0) {}

    int num_entities() const { return n_; }
    int num_relations() const { return r_; }
    int num_channels() const { return 2 * r_; }

    double at(int channel, int i, int j) const { return values_[index(channel, i, j)]; }
    double& at(int channel, int i, int j) { return values_[index(channel, i, j)]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    // Pointer to the start of one N x N slice.
    const double* channel(int c) const { return values_.data() + static_cast<size_t>(c) * n_ * n_; }

    friend bool operator==(const BeliefGraph& a, const BeliefGraph& b) {
        return a.n_ == b.n_ && a.r_ == b.r_ && a.values_ == b.values_;
    }

private:
    size_t index(int channel, int i, int j) const {
        if (channel < 0 || channel >= 2 * r_ || i < 0 || i >= n_ || j < 0 || j >= n_)
            throw std::out_of_range("BeliefGraph: index out of range");
        return (static_cast<size_t>(channel) * n_ + i) * n_ + j;
    }

    int n_ = 0;
    int r_ = 0;
    std::vector<double> values_;
};

// Builds the 2R-channel tensor from an R-channel half tensor, forcing the
// inverse channels to be exact transposes. h2 is [R][N][N] row-major.
inline BeliefGraph from_half_tensor(const std::vector<double>& h2, int num_relations, int num_entities) {
    const size_t expected = static_cast<size_t>(num_relations) * num_entities * num_entities;
    if (h2.size() != expected) throw std::invalid_argument("from_half_tensor: wrong element count");
    for (double x : h2) {
        if (!(x >= -1.0 && x <= 1.0)) throw std::invalid_argument("from_half_tensor: entry outside [-1, 1]");
    }
    BeliefGraph g(num_entities, num_relations);
    const int n = num_entities;
    for (int r = 0; r < num_relations; ++r) {
        const double* src = h2.data() + static_cast<size_t>(r) * n * n;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                g.at(r, i, j) = src[static_cast<size_t>(i) * n + j];
                g.at(r + num_relations, j, i) = src[static_cast<size_t>(i) * n + j];
            }
        }
    }
    return g;
}

// Dense 1.0/0.0 encoding of a discrete graph (inverse channels included).
inline BeliefGraph to_dense(const DiscreteGraph& g) {
    const Vocab& v = g.vocab();
    BeliefGraph out(v.num_entities(), v.num_relations());
    for (const Triple& t : g.triples()) {
        out.at(t.rel, t.head, t.tail) = 1.0;
        out.at(t.rel + v.num_relations(), t.tail, t.head) = 1.0;
    }
    return out;
}

// ============================================================================
// Update-command language: add/delete commands over named edges
// ============================================================================

enum class Verb { Add, Delete };

struct UpdateCommand {
    Verb verb = Verb::Add;
    std::string node1;
    std::string node2;
    std::string relation;

    friend bool operator==(const UpdateCommand&, const UpdateCommand&) = default;
};

struct CommandSequence {
    std::vector<UpdateCommand> commands;

    friend bool operator==(const CommandSequence&, const CommandSequence&) = default;
};

// Canonical order: every add before any delete, each group sorted by
// (node1, node2, relation).
inline CommandSequence canonicalize(CommandSequence seq) {
    auto key = [](const UpdateCommand& c) {
        return std::make_tuple(c.verb != Verb::Add, c.node1, c.node2, c.relation);
    };
    std::stable_sort(seq.commands.begin(), seq.commands.end(),
                     [&](const UpdateCommand& a, const UpdateCommand& b) { return key(a) < key(b); });
    seq.commands.erase(std::unique(seq.commands.begin(), seq.commands.end()), seq.commands.end());
    return seq;
}

inline std::vector<std::string> serialize_commands(const CommandSequence& seq, const Vocab& vocab) {
    CommandSequence canon = canonicalize(seq);
    std::vector<std::string> out;
    out.emplace_back("<s>");
    bool first = true;
    for (const UpdateCommand& c : canon.commands) {
        if (!vocab.has_entity(c.node1) || !vocab.has_entity(c.node2))
            throw std::invalid_argument("serialize_commands: entity not in vocabulary");
        if (!vocab.has_relation(c.relation))
            throw std::invalid_argument("serialize_commands: relation not in vocabulary");
        if (!first) out.emplace_back("<|>");
        first = false;
        out.emplace_back(c.verb == Verb::Add ? "add" : "delete");
        for (const auto& part : {c.node1, c.node2}) {
            for (const auto& tok : tokenize(part)) out.push_back(tok);
        }
        out.push_back(c.relation);
    }
    out.emplace_back("</s>");
    return out;
}

struct ParseResult {
    CommandSequence sequence;
    int dropped = 0;  // segments that did not decode to a command
};

// Robust decoder for generated text. Segment grammar: verb, node1 tokens,
// node2 tokens, relation; node1/node2 split by the longest vocabulary
// prefix whose remainder is itself a vocabulary entity.
inline ParseResult parse_commands(const std::vector<std::string>& tokens, const Vocab& vocab) {
    ParseResult result;
    std::vector<std::vector<std::string>> segments(1);
    for (const auto& tok : tokens) {
        if (tok == "<s>") continue;
        if (tok == "</s>") break;
        if (tok == "<|>") {
            segments.emplace_back();
            continue;
        }
        segments.back().push_back(tok);
    }

    for (const auto& seg : segments) {
        if (seg.empty()) continue;  // empty frame, e.g. "<s> </s>"
        bool ok = false;
        do {
            if (seg.size() < 4) break;
            Verb verb;
            if (seg.front() == "add") verb = Verb::Add;
            else if (seg.front() == "delete") verb = Verb::Delete;
            else break;
            const std::string& rel = seg.back();
            if (!vocab.has_relation(rel)) break;
            const size_t mid_begin = 1, mid_end = seg.size() - 1;
            // Greedy: longest node1 prefix wins.
            for (size_t split = mid_end - 1; split > mid_begin; --split) {
                std::string n1 = seg[mid_begin];
                for (size_t i = mid_begin + 1; i < split; ++i) n1 += " " + seg[i];
                std::string n2 = seg[split];
                for (size_t i = split + 1; i < mid_end; ++i) n2 += " " + seg[i];
                if (vocab.has_entity(n1) && vocab.has_entity(n2)) {
                    result.sequence.commands.push_back({verb, n1, n2, rel});
                    ok = true;
                    break;
                }
            }
        } while (false);
        if (!ok) ++result.dropped;
    }
    return result;
}

inline DiscreteGraph apply_commands(const DiscreteGraph& g, const CommandSequence& seq) {
    DiscreteGraph out = g;
    const Vocab& v = g.vocab();
    for (const UpdateCommand& c : seq.commands) {
        Triple t{v.entity_id(c.node1), v.entity_id(c.node2), v.relation_id(c.relation)};
        if (c.verb == Verb::Add) out.add(t);
        else out.remove(t);  // absent edges are silently ignored
    }
    return out;
}

inline CommandSequence diff_to_commands(const DiscreteGraph& prev, const DiscreteGraph& next) {
    if (!prev.vocab().same_as(next.vocab()))
        throw std::invalid_argument("diff_to_commands: vocabulary mismatch");
    const Vocab& v = prev.vocab();
    CommandSequence seq;
    auto emit = [&](const Triple& t, Verb verb) {
        seq.commands.push_back({verb, v.entity_name(t.head), v.entity_name(t.tail), v.relation_name(t.rel)});
    };
    for (const Triple& t : next.triples())
        if (!prev.contains(t)) emit(t, Verb::Add);
    for (const Triple& t : prev.triples())
        if (!next.contains(t)) emit(t, Verb::Delete);
    return canonicalize(seq);
}

}  // namespace gata::kg
