#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nacd/distill.hpp"
#include "nacd/vocab.hpp"

namespace nacd {

struct DecodedToken {
    int64_t id = 0;
    std::string token;
    double distance = 0.0;
};

// One decoded prompt: the k nearest-token readings of a sample's vectors.
struct DecodedPrompt {
    std::vector<DecodedToken> tokens;
};

// Quantize every prompt vector to its nearest token in the source vocabulary.
std::vector<DecodedPrompt> decode_prompts(const SyntheticPromptSet& syn, const Vocab& vocab,
                                          const Tensor& embed_table);

struct ReencodeResult {
    std::vector<std::vector<int64_t>> prefixes;  // length k per sample
    int64_t miss_count = 0;                      // tokens absent from the target vocab
};

// Map decoded token strings into a target vocabulary by exact match;
// misses become UNK and are counted.
ReencodeResult reencode(const std::vector<DecodedPrompt>& decoded, const Vocab& target);

}  // namespace nacd
