#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nacd/distill.hpp"
#include "nacd/model.hpp"

namespace nacd {

struct CorpusConfig {
    std::string task = "pattern";
    int64_t n_train = 1000;
    int64_t n_eval = 200;
    double fraction = 0.05;
    std::string score_file;  // empty: random selection
    uint64_t seed = 0;       // 0: derive from the global seed
};

struct TrajectoryConfig {
    int64_t epochs = 8;
    int64_t batch_size = 16;
    double lr = 0.15;
    int64_t repeats = 3;
    uint64_t base_seed = 0;  // 0: derive from the global seed
    int64_t threads = 2;
};

struct TransferConfig {
    uint64_t target_init_seed = 0;  // 0: derive; second model for cross-architecture checks
};

struct EvalPipelineConfig {
    int64_t epochs = 6;
    int64_t batch_size = 8;
    double lr = 0.15;
    int64_t seed_count = 3;
    uint64_t base_seed = 0;  // 0: derive from the global seed
    int64_t threads = 2;
};

// Everything one run needs, keyed by stage. A content hash of the whole
// config is stamped into every artifact manifest; downstream stages refuse
// inputs with a different hash.
struct PipelineConfig {
    uint64_t seed = 1;
    std::string out_dir = "out";
    CorpusConfig corpus;
    ModelConfig model;
    TrajectoryConfig trajectory;
    DistillConfig distill;
    TransferConfig transfer;
    EvalPipelineConfig eval;

    void validate() const;
    std::string canonical() const;
    uint64_t hash() const;

    // stage seeds, derived from the global seed when left at 0
    uint64_t corpus_seed() const { return corpus.seed ? corpus.seed : seed * 1000 + 11; }
    uint64_t trajectory_seed() const {
        return trajectory.base_seed ? trajectory.base_seed : seed * 1000 + 23;
    }
    uint64_t distill_seed() const { return distill.seed ? distill.seed : seed * 1000 + 37; }
    uint64_t eval_seed(int64_t i) const {
        return (eval.base_seed ? eval.base_seed : seed * 1000 + 41) + static_cast<uint64_t>(i);
    }
    uint64_t model_init_seed() const { return model.init_seed ? model.init_seed : seed * 1000 + 53; }
    uint64_t transfer_init_seed() const {
        return transfer.target_init_seed ? transfer.target_init_seed : seed * 1000 + 67;
    }

    ModelConfig resolved_model() const {
        ModelConfig m = model;
        m.init_seed = model_init_seed();
        return m;
    }
    std::vector<uint64_t> eval_seeds() const {
        std::vector<uint64_t> s;
        for (int64_t i = 0; i < eval.seed_count; ++i) s.push_back(eval_seed(i));
        return s;
    }
};

// Parse from a JSON file; unknown keys are rejected.
PipelineConfig load_config(const std::string& path);
PipelineConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const PipelineConfig& cfg);

// Apply a dotted override like "distill.iterations=500".
void apply_override(PipelineConfig& cfg, const std::string& key_eq_value);

}  // namespace nacd
