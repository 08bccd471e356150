#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nacd/corpus.hpp"
#include "nacd/tape.hpp"
#include "nacd/tensor.hpp"

namespace nacd {

struct ModelConfig {
    int64_t vocab_size = 64;
    int64_t d_model = 32;
    int64_t context_len = 16;
    int64_t n_blocks = 2;
    int64_t n_heads = 2;
    int64_t d_ff = 64;
    int64_t adapter_rank = 0;  // 0 = all tensors trainable
    uint64_t init_seed = 1;

    void validate() const;
    std::string canonical() const;
    uint64_t hash() const;
};

struct NamedTensor {
    std::string name;
    Tensor value;
    bool trainable = true;
};

// The model's named tensors in a fixed, documented order (embed, then per
// block norm1/attention/norm2/ffn with adapter factors directly after their
// base matrix, then final norm and head). Flattening trainable tensors in
// this order is a bijection to a single vector.
struct ParamSet {
    ModelConfig config;
    std::vector<NamedTensor> tensors;

    const Tensor& get(const std::string& name) const;
    Tensor& get_mut(const std::string& name);
    int64_t trainable_scalar_count() const;

    std::vector<double> flatten_trainable() const;
    void unflatten_trainable(std::span<const double> flat);
};

ParamSet init_params(const ModelConfig& cfg);

// Examples stacked to uniform length with PAD; PAD positions carry mask 0.
struct TextBatch {
    int64_t batch = 0;
    int64_t len = 0;
    std::vector<int64_t> ids;      // batch*len, row-major
    std::vector<int64_t> targets;  // batch*len
    std::vector<uint8_t> mask;     // batch*len

    static TextBatch from_examples(std::span<const Example> exs);
    // Prepend a per-example token prefix (targets PAD, mask 0 on the prefix).
    static TextBatch from_examples_with_prefix(std::span<const Example> exs,
                                               std::span<const std::vector<int64_t>> prefixes);
};

// Handles to one model's parameter nodes on a tape, aligned with ParamSet
// tensor order.
struct ModelGraph {
    ModelConfig config;
    std::vector<NodeId> params;
    std::vector<NodeId> trainable;  // subset of params, flatten order

    NodeId param(const ParamSet& ps, const std::string& name) const;
};

// Stage parameter tensors onto the tape. Trainable tensors become
// differentiation-root leaves; frozen tensors become constants.
ModelGraph stage_params(Tape& tape, const ParamSet& ps);
// Same, but trainable tensors take their values from an externally supplied
// flat vector (used to start a student from an expert snapshot).
ModelGraph stage_params_from(Tape& tape, const ParamSet& base, std::span<const double> trainable_flat);

// Embedding lookup: row i of the output equals the embedding-table row ids[i].
NodeId embed_tokens(Tape& tape, const ModelGraph& g, const ParamSet& ps,
                    std::span<const int64_t> ids, int64_t batch, int64_t len);
Tensor embed_tokens(const ParamSet& ps, std::span<const int64_t> ids);

// Concatenate prompt embeddings in front of text embeddings along the
// sequence dimension. Prompt positions never carry loss targets.
NodeId concat_prompt(Tape& tape, const ModelConfig& cfg, NodeId prompt, NodeId text_embeds);

// Logits over the vocabulary for every position, flattened to (B*S, V).
// The first `prompt_len` rows are prompt positions; they carry the sinusoidal
// encodings of positions -prompt_len..-1 so that text tokens occupy the same
// positions whether or not a prompt is prepended.
NodeId forward_logits(Tape& tape, const ModelGraph& g, const ParamSet& ps, NodeId input_embeds,
                      int64_t prompt_len = 0);

// Mean token-level cross-entropy over mask-true positions. `prompt` may be
// -1 for no prompt. Differentiable w.r.t. parameters and the prompt.
NodeId lm_loss(Tape& tape, const ModelGraph& g, const ParamSet& ps, NodeId prompt,
               const TextBatch& batch);

// One plain-SGD step on lm_loss; returns the loss value. `prompt` is an
// optional (B,k,d) embedding prefix for the batch.
double sgd_step(ParamSet& params, const TextBatch& batch, const Tensor* prompt, double lr);

// Loss without updating parameters.
double eval_loss(const ParamSet& params, const TextBatch& batch, const Tensor* prompt);

Tensor sinusoidal_positions(int64_t len, int64_t dim, int64_t first_position = 0);

}  // namespace nacd
