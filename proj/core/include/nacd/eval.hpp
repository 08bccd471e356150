#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nacd/corpus.hpp"
#include "nacd/distill.hpp"
#include "nacd/model.hpp"

namespace nacd {

// Instruction-tune with optional prompt prefixes. Exactly one of `syn`
// (embedding-space prompts for the distillation architecture) or `prefixes`
// (token ids for an embedding-inconsistent architecture, embedded with this
// model's own table) may be given; with neither this is plain subset
// fine-tuning. Prompt positions are conditioning context and never
// contribute loss targets or embedding-table gradients.
ParamSet finetune(const ParamSet& base, const SelectedSubset& data, const SyntheticPromptSet* syn,
                  const std::vector<std::vector<int64_t>>* prefixes, int64_t epochs,
                  int64_t batch_size, double lr, uint64_t seed);

// Accuracy under average-likelihood scoring: each candidate is scored by the
// mean per-token log-likelihood of its tokens given the context; the argmax
// candidate is predicted, ties to the lowest index.
double mc_accuracy(const ParamSet& params, std::span<const MCItem> items);

struct RunReport {
    std::string method;
    double data_fraction = 0.0;
    std::vector<uint64_t> seeds;
    std::vector<double> accuracies;  // one per seed
    double mean = 0.0;
    double stddev = 0.0;             // reported when >= 2 seeds
    uint64_t config_hash = 0;
};

struct MatrixConfig {
    int64_t epochs = 4;
    int64_t batch_size = 8;
    double lr = 0.1;
    std::vector<uint64_t> seeds = {1, 2, 3};
    double fraction = 0.05;
    uint64_t config_hash = 0;
    int threads = 1;
};

// The comparison matrix: untrained baseline, full-corpus fine-tune,
// selection-only fine-tune, and selection+distilled-prompts. Within one seed
// every method sees the same subset and the same evaluation items.
std::vector<RunReport> run_matrix(const ToyData& data, const ParamSet& base,
                                  const SelectedSubset& selected, const SyntheticPromptSet* syn,
                                  const MatrixConfig& cfg);

std::string report_table(std::span<const RunReport> reports);

}  // namespace nacd
