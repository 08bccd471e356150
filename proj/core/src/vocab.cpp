#include "nacd/vocab.hpp"

#include <stdexcept>

#include "nacd/hash.hpp"

namespace nacd {

Vocab Vocab::from_tokens(std::vector<std::string> toks) {
    if (toks.size() < 4 || toks[0] != "<pad>" || toks[1] != "<bos>" || toks[2] != "<eos>" ||
        toks[3] != "<unk>")
        throw std::invalid_argument("vocab: first four tokens must be <pad>,<bos>,<eos>,<unk>");
    Vocab v;
    v.tokens = std::move(toks);
    for (size_t i = 0; i < v.tokens.size(); ++i) {
        auto [it, inserted] = v.ids.emplace(v.tokens[i], static_cast<int64_t>(i));
        if (!inserted) throw std::invalid_argument("vocab: duplicate token '" + v.tokens[i] + "'");
    }
    return v;
}

uint64_t Vocab::fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens) {
        h = fnv1a(t, h);
        h = fnv1a(std::string_view("\x1f", 1), h);
    }
    return h;
}

}  // namespace nacd
