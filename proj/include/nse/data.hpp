#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nse/errors.hpp"

namespace nse {

enum class Label { positive, neutral, negative };

inline constexpr int kNumClasses = 3;

inline const char* label_name(Label l) {
    switch (l) {
        case Label::positive: return "positive";
        case Label::neutral: return "neutral";
        case Label::negative: return "negative";
    }
    return "?";
}

inline Label label_from_name(const std::string& s) {
    if (s == "positive") return Label::positive;
    if (s == "neutral") return Label::neutral;
    if (s == "negative") return Label::negative;
    throw DataError("unknown label \"" + s + "\" (expected positive|neutral|negative)");
}

inline int label_index(Label l) { return static_cast<int>(l); }
inline Label label_from_index(int i) {
    if (i < 0 || i >= kNumClasses) throw DataError("label index out of range: " + std::to_string(i));
    return static_cast<Label>(i);
}

// One target-sentence pair: tokens, unlabeled dependency edges
// (head, dependent), the target span [start, end) and the gold polarity.
// Immutable after construction; validate() enforces the index invariants.
struct Instance {
    std::vector<std::string> tokens;
    std::vector<std::pair<int, int>> dep_edges;  // sorted, deduplicated
    int target_start = 0;
    int target_end = 0;  // half-open
    Label label = Label::neutral;
    std::string id;

    int n_tokens() const { return static_cast<int>(tokens.size()); }
    int target_len() const { return target_end - target_start; }

    void validate(const std::string& where = "") const {
        auto ctx = where.empty() ? std::string() : (where + ": ");
        const int n = n_tokens();
        if (n < 1) throw DataError(ctx + "empty sentence");
        if (target_start < 0 || target_end > n || target_start >= target_end) {
            if (target_start == target_end) throw DataError(ctx + "empty target span");
            throw DataError(ctx + "target span [" + std::to_string(target_start) + "," +
                            std::to_string(target_end) + ") out of range for " + std::to_string(n) +
                            " tokens");
        }
        for (const auto& [h, d] : dep_edges) {
            if (h < 0 || h >= n || d < 0 || d >= n)
                throw DataError(ctx + "edge index out of range: (" + std::to_string(h) + "," +
                                std::to_string(d) + ") on " + std::to_string(n) + " tokens");
            if (h == d) throw DataError(ctx + "self-edge at token " + std::to_string(h));
        }
    }

    void normalize_edges() {
        std::sort(dep_edges.begin(), dep_edges.end());
        dep_edges.erase(std::unique(dep_edges.begin(), dep_edges.end()), dep_edges.end());
    }

    bool operator==(const Instance& o) const = default;
};

// ---------------------------------------------------------------------------
// JSONL corpus: one object per line with fields
//   tokens: [string], deps: [[head,dep]], target: [start,end),
//   label: positive|neutral|negative, id: optional string
// ---------------------------------------------------------------------------

inline Instance instance_from_json(const nlohmann::json& j, const std::string& where) {
    Instance inst;
    try {
        if (!j.contains("tokens")) throw DataError(where + ": missing field \"tokens\"");
        inst.tokens = j.at("tokens").get<std::vector<std::string>>();
        if (!j.contains("deps")) throw DataError(where + ": missing field \"deps\"");
        for (const auto& e : j.at("deps")) {
            if (!e.is_array() || e.size() != 2)
                throw DataError(where + ": field \"deps\" entries must be [head,dep] pairs");
            inst.dep_edges.emplace_back(e[0].get<int>(), e[1].get<int>());
        }
        if (!j.contains("target")) throw DataError(where + ": missing field \"target\"");
        const auto& t = j.at("target");
        if (!t.is_array() || t.size() != 2)
            throw DataError(where + ": field \"target\" must be [start,end)");
        inst.target_start = t[0].get<int>();
        inst.target_end = t[1].get<int>();
        if (!j.contains("label")) throw DataError(where + ": missing field \"label\"");
        inst.label = label_from_name(j.at("label").get<std::string>());
        if (j.contains("id")) inst.id = j.at("id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
    }
    inst.normalize_edges();
    inst.validate(where);
    return inst;
}

inline nlohmann::json instance_to_json(const Instance& inst) {
    nlohmann::json j;
    j["tokens"] = inst.tokens;
    auto deps = nlohmann::json::array();
    for (const auto& [h, d] : inst.dep_edges) deps.push_back({h, d});
    j["deps"] = std::move(deps);
    j["target"] = {inst.target_start, inst.target_end};
    j["label"] = label_name(inst.label);
    if (!inst.id.empty()) j["id"] = inst.id;
    return j;
}

inline std::vector<Instance> load_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open corpus file: " + path);
    std::vector<Instance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        out.push_back(instance_from_json(j, where));
    }
    return out;
}

inline void save_jsonl(const std::string& path, const std::vector<Instance>& corpus) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open corpus file for writing: " + path);
    for (const auto& inst : corpus) os << instance_to_json(inst).dump() << "\n";
    if (!os) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// CoNLL-U adapter. Only ID, FORM and HEAD columns are used; `#` comments are
// skipped, multiword/empty-node ids (1-2, 1.1) are ignored. Exactly one
// sentence block per file. Targets and labels have no CoNLL-U home, so they
// arrive as arguments.
// ---------------------------------------------------------------------------

inline Instance load_conllu(const std::string& path, int target_start, int target_end,
                            Label label) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open conllu file: " + path);
    Instance inst;
    inst.target_start = target_start;
    inst.target_end = target_end;
    inst.label = label;

    std::string line;
    std::size_t lineno = 0;
    bool in_sentence = false, done_sentence = false;
    std::vector<std::pair<int, int>> heads;  // (token id, head id), 1-based
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = path + ":" + std::to_string(lineno);
        if (!line.empty() && line[0] == '#') continue;
        if (line.empty()) {
            if (in_sentence) done_sentence = true;
            continue;
        }
        if (done_sentence) throw DataError(where + ": more than one sentence in file");
        in_sentence = true;

        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() < 7) throw DataError(where + ": expected at least 7 tab-separated columns");

        // skip multiword ranges and empty nodes
        if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos)
            continue;
        int id = 0;
        try {
            id = std::stoi(cols[0]);
        } catch (...) {
            throw DataError(where + ": malformed ID \"" + cols[0] + "\"");
        }
        if (id != static_cast<int>(inst.tokens.size()) + 1)
            throw DataError(where + ": non-sequential token ID " + cols[0]);
        inst.tokens.push_back(cols[1]);
        if (cols[6] == "_" || cols[6].empty()) throw DataError(where + ": missing head");
        int head = 0;
        try {
            head = std::stoi(cols[6]);
        } catch (...) {
            throw DataError(where + ": malformed HEAD \"" + cols[6] + "\"");
        }
        if (head < 0) throw DataError(where + ": malformed HEAD \"" + cols[6] + "\"");
        heads.emplace_back(id, head);
    }
    if (inst.tokens.empty()) throw DataError(path + ": no sentence found");
    for (const auto& [id, head] : heads) {
        if (head == 0) continue;  // root contributes no edge
        if (head > static_cast<int>(inst.tokens.size()))
            throw DataError(path + ": HEAD " + std::to_string(head) + " out of range");
        inst.dep_edges.emplace_back(head - 1, id - 1);
    }
    inst.normalize_edges();
    inst.validate(path);
    return inst;
}

}  // namespace nse
