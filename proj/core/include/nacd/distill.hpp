#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "nacd/corpus.hpp"
#include "nacd/model.hpp"
#include "nacd/rng.hpp"
#include "nacd/tape.hpp"
#include "nacd/trajectory.hpp"

namespace nacd {

struct DistillConfig {
    int64_t student_steps = 6;     // inner updates per iteration (N)
    int64_t expert_steps = 1;      // target offset in epochs (M)
    int64_t iterations = 3000;     // distillation iterations (S)
    int64_t prompt_len = 2;        // prompt tokens per sample (k)
    double beta = 100.0;           // regularizer weight
    int64_t max_start_epoch = 2;   // start epochs sampled from [0, max)
    double alpha0 = 0.15;          // initial inner learning rate
    double meta_lr_prompts = 0.25;
    double meta_lr_alpha = 0.002;
    int64_t inner_batch = 8;
    double denom_floor = 1e-12;    // skip iterations whose matching denominator is smaller
    double alpha_floor = 1e-8;     // positivity clamp for the inner rate
    uint64_t seed = 0;

    void validate() const;
    std::string canonical() const;
};

// The learnable synthetic prompts, one (k,d) block per selected example,
// plus the trainable inner learning rate.
struct SyntheticPromptSet {
    Tensor prompts;  // (n_sel, k, d)
    double alpha = 0.0;
    int64_t iteration = 0;

    int64_t n_samples() const { return prompts.rank() == 3 ? prompts.dim(0) : 0; }
    int64_t prompt_len() const { return prompts.rank() == 3 ? prompts.dim(1) : 0; }
    int64_t dim() const { return prompts.rank() == 3 ? prompts.dim(2) : 0; }
};

// Every prompt vector starts at the mean of the expert embedding table.
SyntheticPromptSet init_synthetic(int64_t n_sel, const Tensor& embed_table, int64_t prompt_len,
                                  double alpha0);

// Index and Euclidean distance of the closest embedding-table row;
// ties break toward the lowest token id.
std::pair<int64_t, double> nearest_vocab(std::span<const double> vec, const Tensor& table);

// The trajectory-matching ratio evaluated on flat vectors. `skipped` is set when
// the denominator is below the floor (caller must not update that iteration).
double distill_loss_value(std::span<const double> student_end, std::span<const double> target,
                          std::span<const double> start, double denom_floor, bool* skipped);

double total_loss_value(double distill, double reg, double beta);

// Nearest-token regularizer as a recorded node: mean over the given prompt minibatches (and the
// batch x k vectors inside each) of the Euclidean distance to each vector's
// nearest table row. The nearest row enters as a constant; gradients flow to
// the prompts only.
NodeId reg_loss_node(Tape& tape, std::span<const NodeId> prompt_nodes, const Tensor& embed_table);

// One recorded distillation iteration: the N-step student unroll from a
// sampled segment, the matching loss, the nearest-neighbor regularizer and
// their weighted total, all differentiable w.r.t. the prompt leaf and alpha.
struct IterationGraph {
    Tape tape;
    NodeId prompts = -1;  // leaf, (n_sel, k*d); -1 when k == 0
    NodeId alpha = -1;    // leaf, scalar
    NodeId distill = -1;
    NodeId reg = -1;
    NodeId total = -1;
    bool skipped = false;
    Segment segment;
    std::vector<NodeId> step_prompts;  // recorded minibatch prompt nodes
    std::vector<NodeId> student_end;   // trainable tensors after N steps
};

// Records one iteration on graph.tape. Consumes rng draws for the segment
// and the per-step minibatches; deterministic given the rng state.
void build_iteration(IterationGraph& graph, const TrajectorySet& experts,
                     const SelectedSubset& selected, const ParamSet& base,
                     const DistillConfig& cfg, const SyntheticPromptSet& syn, Rng& rng);

struct DistillMetrics {
    int64_t iteration = 0;
    double distill_loss = 0.0;
    double reg_loss = 0.0;
    double total_loss = 0.0;
    double alpha = 0.0;
    double mean_nn_distance = 0.0;
    bool skipped = false;
};

using MetricsSink = std::function<void(const DistillMetrics&)>;

struct DistillResult {
    SyntheticPromptSet synthetic;
    std::vector<DistillMetrics> metrics;
    int64_t skipped_iterations = 0;
};

// The distillation loop: S iterations of sample-segment / unroll /
// hypergradient / SGD update of the prompts and alpha (clamped from below).
DistillResult distill_run(const TrajectorySet& experts, const SelectedSubset& selected,
                          const ParamSet& base, const DistillConfig& cfg,
                          const MetricsSink& sink = nullptr);

// Mean over all prompt vectors of the distance to their nearest table row.
double mean_nn_distance(const SyntheticPromptSet& syn, const Tensor& embed_table);

}  // namespace nacd
