#pragma once

#include <cstdint>
#include <vector>

#include "nacd/corpus.hpp"
#include "nacd/model.hpp"
#include "nacd/rng.hpp"

namespace nacd {

// Per-epoch snapshots of the trainable parameters from one seeded training
// run on the full corpus. Snapshot 0 is the initialization.
struct ExpertTrajectory {
    uint64_t training_seed = 0;
    uint64_t model_hash = 0;
    std::vector<std::vector<double>> snapshots;   // T+1 flattened vectors
    std::vector<double> epoch_losses;             // mean minibatch loss per epoch

    int64_t epochs() const { return static_cast<int64_t>(snapshots.size()) - 1; }
};

struct TrajectorySet {
    std::vector<ExpertTrajectory> trajectories;
};

// A (start, target) pair of snapshots M epochs apart.
struct Segment {
    size_t trajectory = 0;
    int64_t start_epoch = 0;
    const std::vector<double>* start = nullptr;
    const std::vector<double>* target = nullptr;
};

// Plain SGD over seeded shuffled batches; snapshots the trainable parameters
// after every epoch. Aborts on a non-finite loss.
ExpertTrajectory train_expert(const Corpus& corpus, const ModelConfig& cfg, int64_t epochs,
                              int64_t batch_size, double lr, uint64_t seed);

// `repeats` independent runs with seeds base_seed..base_seed+repeats-1,
// fanned out across up to `threads` workers.
TrajectorySet build_trajectory_set(const Corpus& corpus, const ModelConfig& cfg, int64_t epochs,
                                   int64_t batch_size, double lr, uint64_t base_seed, int repeats,
                                   int threads = 1);

// Uniform over (trajectory, start epoch) pairs with start < max_start.
Segment sample_segment(const TrajectorySet& set, int64_t max_start, int64_t expert_steps, Rng& rng);

}  // namespace nacd
