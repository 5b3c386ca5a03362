#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nse/data.hpp"
#include "nse/errors.hpp"

namespace nse {

// Token-per-line vocabulary; line number = id. Ids 0..3 are reserved
// (0=<pad>, 1=<unk>, plus the classic sequence markers kept as reserved
// entries even though the span-based encoder never emits them).
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() {
        for (const char* t : {"<pad>", "<unk>", "[CLS]", "[SEP]"}) add(t);
    }

    static Vocabulary build(const std::vector<Instance>& corpus) {
        Vocabulary v;
        for (const auto& inst : corpus)
            for (const auto& tok : inst.tokens) v.add(tok);
        return v;
    }

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        index_[token] = id;
        tokens_.push_back(token);
        return id;
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id(t));
        return ids;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_.at(id); }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("cannot open vocabulary file for writing: " + path);
        for (const auto& t : tokens_) os << t << "\n";
        if (!os) throw DataError("write failed: " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open vocabulary file: " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        while (std::getline(is, line)) v.add(line);
        if (v.size() < 2) throw DataError("vocabulary file too small (needs <pad> and <unk>): " + path);
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace nse
