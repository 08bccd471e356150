#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nacd/corpus.hpp"
#include "nacd/distill.hpp"
#include "nacd/eval.hpp"
#include "nacd/model.hpp"
#include "nacd/trajectory.hpp"
#include "nacd/transfer.hpp"

namespace nacd {

using Json = nlohmann::json;

// Artifact container: magic, length-prefixed JSON manifest, raw payload.
// All numeric payloads are little-endian (u32 ids, f64 tensors) and
// round-trip bit-exactly.
struct Artifact {
    Json manifest;
    std::vector<uint8_t> payload;
};

void write_artifact(const std::string& path, const Json& manifest,
                    const std::vector<uint8_t>& payload);
Artifact read_artifact(const std::string& path);

// Raises "hash mismatch" when an artifact was produced under a different
// configuration than the one consuming it.
void require_config_hash(const Artifact& art, uint64_t expected, const std::string& stage);

// payload encoding helpers
class PayloadWriter {
public:
    void u32(uint32_t v);
    void f64(double v);
    void u32s(std::span<const int64_t> values);
    void f64s(std::span<const double> values);
    std::vector<uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<uint8_t> bytes_;
};

class PayloadReader {
public:
    explicit PayloadReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}
    uint32_t u32();
    double f64();
    std::vector<int64_t> u32s(size_t count);
    std::vector<double> f64s(size_t count);
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<uint8_t>& bytes_;
    size_t pos_ = 0;
};

// typed artifacts
void save_corpus(const std::string& path, const ToyData& data, uint64_t config_hash);
ToyData load_corpus(const std::string& path, uint64_t expected_hash);

void save_params(const std::string& path, const ParamSet& ps, uint64_t config_hash);
ParamSet load_params(const std::string& path, uint64_t expected_hash);

void save_trajectory(const std::string& path, const ExpertTrajectory& traj, uint64_t config_hash);
ExpertTrajectory load_trajectory(const std::string& path, uint64_t expected_hash);

void save_trajectory_set(const std::string& dir, const TrajectorySet& set, uint64_t config_hash);
TrajectorySet load_trajectory_set(const std::string& dir, uint64_t expected_hash);

void save_prompts(const std::string& path, const SyntheticPromptSet& syn, uint64_t config_hash);
SyntheticPromptSet load_prompts(const std::string& path, uint64_t expected_hash);

void save_selection(const std::string& path, const SelectedSubset& sel, uint64_t config_hash);
SelectedSubset load_selection(const std::string& path, const Corpus& corpus, uint64_t expected_hash);

// structured-text exports
void append_metrics(const std::string& path, const DistillMetrics& m);
void save_decoded(const std::string& path, const std::vector<DecodedPrompt>& decoded);
void save_reports(const std::string& path, std::span<const RunReport> reports);
std::vector<RunReport> load_reports(const std::string& path);

}  // namespace nacd
