#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nacd {

// Closed token vocabulary. Ids are dense 0..V-1; the first four ids are
// reserved control tokens.
struct Vocab {
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kBos = 1;
    static constexpr int64_t kEos = 2;
    static constexpr int64_t kUnk = 3;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int64_t> ids;

    static Vocab from_tokens(std::vector<std::string> toks);

    int64_t size() const { return static_cast<int64_t>(tokens.size()); }
    // -1 when the token string is not in the vocabulary
    int64_t lookup(const std::string& tok) const {
        auto it = ids.find(tok);
        return it == ids.end() ? -1 : it->second;
    }
    const std::string& token(int64_t id) const { return tokens[static_cast<size_t>(id)]; }

    uint64_t fingerprint() const;
};

}  // namespace nacd
