#pragma once

#include <string>
#include <vector>

#include "nacd/config.hpp"
#include "nacd/eval.hpp"

namespace nacd {

// Artifact locations under the configured output directory.
struct StagePaths {
    explicit StagePaths(const PipelineConfig& cfg);

    std::string out_dir;
    std::string corpus;
    std::string selection;
    std::string trajectories;
    std::string prompts;
    std::string metrics;
    std::string decoded;
    std::string report;

    std::string params(const std::string& method, uint64_t seed) const;
};

// One function per CLI stage; cmd_pipeline chains them in order. Every stage
// reads and writes only the documented artifact files and stamps the config
// hash into everything it produces.
void run_gen(const PipelineConfig& cfg);
void run_extract(const PipelineConfig& cfg);
void run_distill_stage(const PipelineConfig& cfg);
void run_decode(const PipelineConfig& cfg);
void run_finetune_stage(const PipelineConfig& cfg);
std::vector<RunReport> run_eval_stage(const PipelineConfig& cfg);
std::vector<RunReport> run_pipeline(const PipelineConfig& cfg);

}  // namespace nacd
