#include "nacd/trajectory.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace nacd {

ExpertTrajectory train_expert(const Corpus& corpus, const ModelConfig& cfg, int64_t epochs,
                              int64_t batch_size, double lr, uint64_t seed) {
    if (epochs < 2) throw std::invalid_argument("train_expert: epochs must be >= 2");
    if (corpus.examples.empty()) throw std::invalid_argument("train_expert: empty corpus");
    if (batch_size < 1) throw std::invalid_argument("train_expert: batch_size must be >= 1");

    ParamSet ps = init_params(cfg);
    ExpertTrajectory traj;
    traj.training_seed = seed;
    traj.model_hash = cfg.hash();
    traj.snapshots.push_back(ps.flatten_trainable());

    Rng shuffle_rng(seed ^ 0x657870657274ULL);
    const size_t n = corpus.size();
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        auto order = shuffle_rng.permutation(n);
        double loss_sum = 0.0;
        int64_t steps = 0;
        for (size_t off = 0; off < n; off += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(n, off + static_cast<size_t>(batch_size));
            std::vector<Example> batch;
            batch.reserve(end - off);
            for (size_t i = off; i < end; ++i) batch.push_back(corpus.examples[order[i]]);
            const double loss = sgd_step(ps, TextBatch::from_examples(batch), nullptr, lr);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_expert: non-finite loss at epoch " +
                                         std::to_string(epoch) + " (seed " + std::to_string(seed) +
                                         ", lr " + std::to_string(lr) + ")");
            loss_sum += loss;
            ++steps;
        }
        traj.epoch_losses.push_back(loss_sum / static_cast<double>(steps));
        traj.snapshots.push_back(ps.flatten_trainable());
    }
    return traj;
}

TrajectorySet build_trajectory_set(const Corpus& corpus, const ModelConfig& cfg, int64_t epochs,
                                   int64_t batch_size, double lr, uint64_t base_seed, int repeats,
                                   int threads) {
    if (repeats < 1) throw std::invalid_argument("build_trajectory_set: repeats must be >= 1");
    TrajectorySet set;
    set.trajectories.resize(static_cast<size_t>(repeats));

    const int workers = std::max(1, std::min(threads, repeats));
    if (workers == 1) {
        for (int r = 0; r < repeats; ++r)
            set.trajectories[static_cast<size_t>(r)] =
                train_expert(corpus, cfg, epochs, batch_size, lr, base_seed + static_cast<uint64_t>(r));
        return set;
    }

    // independent seeded runs; results land in their slot regardless of scheduling
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int r = w; r < repeats; r += workers) {
                try {
                    set.trajectories[static_cast<size_t>(r)] = train_expert(
                        corpus, cfg, epochs, batch_size, lr, base_seed + static_cast<uint64_t>(r));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return set;
}

Segment sample_segment(const TrajectorySet& set, int64_t max_start, int64_t expert_steps, Rng& rng) {
    if (set.trajectories.empty()) throw std::invalid_argument("sample_segment: empty trajectory set");
    if (max_start < 1) throw std::invalid_argument("sample_segment: max_start must be >= 1");
    for (const auto& t : set.trajectories)
        if (t.epochs() < max_start - 1 + expert_steps)
            throw std::invalid_argument("sample_segment: expert_steps " + std::to_string(expert_steps) +
                                        " too large for trajectory of " + std::to_string(t.epochs()) +
                                        " epochs");

    Segment seg;
    seg.trajectory = static_cast<size_t>(rng.next_below(set.trajectories.size()));
    seg.start_epoch = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(max_start)));
    const auto& snaps = set.trajectories[seg.trajectory].snapshots;
    seg.start = &snaps[static_cast<size_t>(seg.start_epoch)];
    seg.target = &snaps[static_cast<size_t>(seg.start_epoch + expert_steps)];
    return seg;
}

}  // namespace nacd
