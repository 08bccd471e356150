#include "nacd/transfer.hpp"

#include <stdexcept>

namespace nacd {

std::vector<DecodedPrompt> decode_prompts(const SyntheticPromptSet& syn, const Vocab& vocab,
                                          const Tensor& embed_table) {
    if (embed_table.rank() != 2 || embed_table.dim(0) != vocab.size())
        throw std::invalid_argument("decode_prompts: table rows must match vocab size");
    if (syn.dim() != embed_table.dim(1))
        throw std::invalid_argument("decode_prompts: embedding width mismatch");

    const int64_t k = syn.prompt_len();
    const int64_t d = syn.dim();
    std::vector<DecodedPrompt> out(static_cast<size_t>(syn.n_samples()));
    for (int64_t i = 0; i < syn.n_samples(); ++i) {
        auto& dp = out[static_cast<size_t>(i)];
        dp.tokens.reserve(static_cast<size_t>(k));
        for (int64_t j = 0; j < k; ++j) {
            std::span<const double> vec(syn.prompts.data.data() + (i * k + j) * d,
                                        static_cast<size_t>(d));
            auto [id, dist] = nearest_vocab(vec, embed_table);
            dp.tokens.push_back({id, vocab.token(id), dist});
        }
    }
    return out;
}

ReencodeResult reencode(const std::vector<DecodedPrompt>& decoded, const Vocab& target) {
    if (target.lookup("<unk>") != Vocab::kUnk)
        throw std::invalid_argument("reencode: target vocab has no <unk>");
    ReencodeResult r;
    r.prefixes.reserve(decoded.size());
    for (const auto& dp : decoded) {
        std::vector<int64_t> prefix;
        prefix.reserve(dp.tokens.size());
        for (const auto& tok : dp.tokens) {
            const int64_t id = target.lookup(tok.token);
            if (id < 0) {
                prefix.push_back(Vocab::kUnk);
                ++r.miss_count;
            } else {
                prefix.push_back(id);
            }
        }
        r.prefixes.push_back(std::move(prefix));
    }
    return r;
}

}  // namespace nacd
