#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nacd/vocab.hpp"

namespace nacd {

// One instruction-style training example. input/target/mask have equal
// length; the mask marks the positions whose targets enter the loss
// (answer tokens only — the instruction part is context).
struct Example {
    std::vector<int64_t> input_ids;
    std::vector<int64_t> target_ids;
    std::vector<uint8_t> loss_mask;
};

struct Corpus {
    std::vector<Example> examples;
    uint64_t seed = 0;

    size_t size() const { return examples.size(); }
};

// Multiple-choice evaluation item: a shared context and >= 2 candidate
// completions, one of which (gold) is correct.
struct MCItem {
    std::vector<int64_t> context_ids;
    std::vector<std::vector<int64_t>> candidates;
    size_t gold = 0;
};

enum class TaskFamily { Pattern, Polarity };

TaskFamily task_from_string(const std::string& name);
std::string task_to_string(TaskFamily t);

// The fixed closed vocabulary shared by all toy task families.
const Vocab& toy_vocab();

struct ToyData {
    Corpus corpus;
    std::vector<MCItem> mc_items;
    TaskFamily task = TaskFamily::Pattern;
};

// Deterministic synthetic corpus plus a held-out multiple-choice eval set.
// Byte-identical for equal arguments.
ToyData generate_toy_corpus(uint64_t seed, size_t n_train, size_t n_eval, TaskFamily task);

struct SelectedSubset {
    std::vector<size_t> indices;  // strictly increasing
    std::vector<Example> examples;
};

// Uniform sample without replacement of round(fraction*n) examples (>= 1).
SelectedSubset select_random(const Corpus& corpus, double fraction, uint64_t seed);

// Top ceil(fraction*n) examples by external score, ties broken by lower index.
// The score file holds one decimal value per line, one line per example.
SelectedSubset select_by_scores(const Corpus& corpus, const std::string& score_path, double fraction);
SelectedSubset select_by_scores(const Corpus& corpus, const std::vector<double>& scores, double fraction);

}  // namespace nacd
