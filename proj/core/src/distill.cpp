#include "nacd/distill.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace nacd {

void DistillConfig::validate() const {
    if (student_steps < 0) throw std::invalid_argument("config error: student_steps must be >= 0");
    if (expert_steps < 1) throw std::invalid_argument("config error: expert_steps must be >= 1");
    if (iterations < 1) throw std::invalid_argument("config error: iterations must be >= 1");
    if (prompt_len < 0) throw std::invalid_argument("config error: prompt_len must be >= 0");
    if (beta < 0) throw std::invalid_argument("config error: beta must be >= 0");
    if (max_start_epoch < 1) throw std::invalid_argument("config error: max_start_epoch must be >= 1");
    if (!(alpha0 > 0)) throw std::invalid_argument("config error: alpha0 must be > 0");
    if (!(denom_floor > 0)) throw std::invalid_argument("config error: denom_floor must be > 0");
    if (!(alpha_floor > 0)) throw std::invalid_argument("config error: alpha_floor must be > 0");
    if (inner_batch < 1) throw std::invalid_argument("config error: inner_batch must be >= 1");
}

std::string DistillConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "distill{N=" << student_steps << ",M=" << expert_steps << ",S=" << iterations
       << ",k=" << prompt_len << ",beta=" << beta << ",Tm=" << max_start_epoch << ",a0=" << alpha0
       << ",mp=" << meta_lr_prompts << ",ma=" << meta_lr_alpha << ",b=" << inner_batch
       << ",ed=" << denom_floor << ",ea=" << alpha_floor << ",seed=" << seed << "}";
    return os.str();
}

SyntheticPromptSet init_synthetic(int64_t n_sel, const Tensor& embed_table, int64_t prompt_len,
                                  double alpha0) {
    if (embed_table.rank() != 2 || embed_table.dim(0) < 1)
        throw std::invalid_argument("init_synthetic: embedding table must be (V,d)");
    const int64_t v = embed_table.dim(0);
    const int64_t d = embed_table.dim(1);

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int64_t r = 0; r < v; ++r)
        for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += embed_table.at(r * d + j);
    for (auto& m : mean) m /= static_cast<double>(v);

    SyntheticPromptSet syn;
    syn.prompts = Tensor({n_sel, prompt_len, d});
    for (int64_t i = 0; i < n_sel * prompt_len; ++i)
        std::memcpy(syn.prompts.data.data() + i * d, mean.data(), mean.size() * sizeof(double));
    syn.alpha = alpha0;
    return syn;
}

std::pair<int64_t, double> nearest_vocab(std::span<const double> vec, const Tensor& table) {
    if (table.rank() != 2 || table.dim(0) < 1)
        throw std::invalid_argument("nearest_vocab: table must be nonempty (V,d)");
    const int64_t v = table.dim(0);
    const int64_t d = table.dim(1);
    if (static_cast<int64_t>(vec.size()) != d)
        throw std::invalid_argument("nearest_vocab: dimension mismatch");
    int64_t best = 0;
    double best_sq = 0.0;
    for (int64_t r = 0; r < v; ++r) {
        double sq = 0.0;
        const double* row = table.data.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            const double diff = vec[static_cast<size_t>(j)] - row[j];
            sq += diff * diff;
        }
        if (r == 0 || sq < best_sq) {  // strict: ties keep the lowest id
            best = r;
            best_sq = sq;
        }
    }
    return {best, std::sqrt(best_sq)};
}

double distill_loss_value(std::span<const double> student_end, std::span<const double> target,
                          std::span<const double> start, double denom_floor, bool* skipped) {
    if (student_end.size() != target.size() || start.size() != target.size())
        throw std::invalid_argument("distill_loss: vector length mismatch");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        const double dn = student_end[i] - target[i];
        const double dd = start[i] - target[i];
        num += dn * dn;
        den += dd * dd;
    }
    if (skipped) *skipped = den < denom_floor;
    if (den < denom_floor) return 0.0;
    return num / den;
}

double total_loss_value(double distill, double reg, double beta) { return distill + beta * reg; }

NodeId reg_loss_node(Tape& tape, std::span<const NodeId> prompt_nodes, const Tensor& embed_table) {
    if (prompt_nodes.empty()) return tape.scalar(0.0);
    const int64_t d = embed_table.dim(1);
    NodeId acc = -1;
    for (NodeId pnode : prompt_nodes) {
        const Shape& s = tape.val(pnode).shape;
        if (s.size() != 3 || s[2] != d)
            throw std::invalid_argument("reg_loss: prompt batches must be (batch,k,d)");
        const int64_t rows = s[0] * s[1];
        NodeId flat = tape.reshape(pnode, {rows, d});
        // the argmin is piecewise-constant: the selected row enters as a
        // constant and no gradient flows through the selection
        const Tensor& pv = tape.val(flat);
        Tensor nearest({rows, d});
        for (int64_t r = 0; r < rows; ++r) {
            std::span<const double> vec(pv.data.data() + r * d, static_cast<size_t>(d));
            const int64_t id = nearest_vocab(vec, embed_table).first;
            std::memcpy(nearest.data.data() + r * d, embed_table.data.data() + id * d,
                        static_cast<size_t>(d) * sizeof(double));
        }
        NodeId diff = tape.sub(flat, tape.constant(std::move(nearest)));
        NodeId dist = tape.sqrt(tape.row_sum(tape.mul(diff, diff)));
        NodeId step_mean = tape.cmul(tape.sum_all(dist), 1.0 / static_cast<double>(rows));
        acc = acc < 0 ? step_mean : tape.add(acc, step_mean);
    }
    return tape.cmul(acc, 1.0 / static_cast<double>(prompt_nodes.size()));
}

double mean_nn_distance(const SyntheticPromptSet& syn, const Tensor& embed_table) {
    const int64_t n = syn.n_samples() * syn.prompt_len();
    if (n == 0) return 0.0;
    const int64_t d = syn.dim();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        std::span<const double> vec(syn.prompts.data.data() + i * d, static_cast<size_t>(d));
        acc += nearest_vocab(vec, embed_table).second;
    }
    return acc / static_cast<double>(n);
}

namespace {

// Per-tensor views of a flat trainable vector, in flatten order.
std::vector<std::pair<Shape, std::span<const double>>> trainable_slices(const ParamSet& base,
                                                                        std::span<const double> flat) {
    std::vector<std::pair<Shape, std::span<const double>>> out;
    size_t off = 0;
    for (const auto& t : base.tensors) {
        if (!t.trainable) continue;
        const size_t n = t.value.data.size();
        out.emplace_back(t.value.shape, flat.subspan(off, n));
        off += n;
    }
    if (off != flat.size()) throw std::invalid_argument("trainable vector length mismatch");
    return out;
}

// Replace the trainable entries of a staged graph with new nodes.
ModelGraph with_trainable(const ModelGraph& g, const ParamSet& base,
                          const std::vector<NodeId>& next) {
    ModelGraph out = g;
    size_t ti = 0;
    size_t pi = 0;
    for (const auto& t : base.tensors) {
        if (t.trainable) out.params[pi] = next[ti++];
        ++pi;
    }
    out.trainable = next;
    return out;
}

}  // namespace

void build_iteration(IterationGraph& graph, const TrajectorySet& experts,
                     const SelectedSubset& selected, const ParamSet& base,
                     const DistillConfig& cfg, const SyntheticPromptSet& syn, Rng& rng) {
    Tape& tape = graph.tape;
    const int64_t n_sel = static_cast<int64_t>(selected.examples.size());
    const int64_t k = cfg.prompt_len;
    const int64_t d = base.config.d_model;

    graph.segment = sample_segment(experts, cfg.max_start_epoch, cfg.expert_steps, rng);
    const std::vector<double>& start = *graph.segment.start;
    const std::vector<double>& target = *graph.segment.target;

    // leaves
    if (k > 0) graph.prompts = tape.leaf(Tensor({n_sel, k * d}, syn.prompts.data), true);
    graph.alpha = tape.leaf(Tensor::scalar(syn.alpha), true);

    // student starts from the expert snapshot
    ModelGraph student = stage_params_from(tape, base, start);

    const int64_t mb = std::min<int64_t>(cfg.inner_batch, n_sel);
    for (int64_t n = 0; n < cfg.student_steps; ++n) {
        auto picked = rng.sample_without_replacement(static_cast<size_t>(n_sel), static_cast<size_t>(mb));
        NodeId prompt_node = -1;
        if (k > 0) {
            auto idx = std::make_shared<std::vector<int64_t>>(picked.begin(), picked.end());
            prompt_node = tape.reshape(tape.gather_rows(graph.prompts, idx), {mb, k, d});
            graph.step_prompts.push_back(prompt_node);
        }
        std::vector<Example> exs;
        exs.reserve(static_cast<size_t>(mb));
        for (size_t i : picked) exs.push_back(selected.examples[i]);
        NodeId loss = lm_loss(tape, student, base, prompt_node, TextBatch::from_examples(exs));
        if (!std::isfinite(tape.val(loss).at(0)))
            throw std::runtime_error("student_unroll: non-finite loss at inner step " +
                                     std::to_string(n));
        auto grads = tape.grad(loss, student.trainable);
        std::vector<NodeId> next;
        next.reserve(student.trainable.size());
        for (NodeId p : student.trainable)
            next.push_back(tape.sub(p, tape.smul(grads.at(p), graph.alpha)));
        student = with_trainable(student, base, next);
    }
    graph.student_end = student.trainable;

    // matching loss: squared-L2 ratio against the segment target. The denominator
    // accumulates in the same per-tensor order as the recorded numerator so
    // a student that never moves yields exactly 1.
    auto start_views = trainable_slices(base, start);
    auto target_views = trainable_slices(base, target);
    double denom = 0.0;
    for (size_t ti = 0; ti < target_views.size(); ++ti) {
        double acc = 0.0;
        const auto& sv = start_views[ti].second;
        const auto& tv = target_views[ti].second;
        for (size_t i = 0; i < tv.size(); ++i) {
            const double dd = sv[i] - tv[i];
            acc += dd * dd;
        }
        denom += acc;
    }
    if (denom < cfg.denom_floor) {
        graph.skipped = true;
        return;
    }
    NodeId num = -1;
    for (size_t ti = 0; ti < student.trainable.size(); ++ti) {
        const auto& [shape, view] = target_views[ti];
        NodeId tconst = tape.constant(Tensor(shape, std::vector<double>(view.begin(), view.end())));
        NodeId term = tape.sumsq(tape.sub(student.trainable[ti], tconst));
        num = num < 0 ? term : tape.add(num, term);
    }
    graph.distill = tape.cmul(num, 1.0 / denom);

    // nearest-token regularizer over the recorded prompt minibatches, against the embedding
    // table frozen at the segment start.
    if (k > 0 && !graph.step_prompts.empty()) {
        ParamSet frozen = base;
        frozen.unflatten_trainable(start);
        graph.reg = reg_loss_node(tape, graph.step_prompts, frozen.get("embed"));
    } else {
        graph.reg = tape.scalar(0.0);
    }

    // total loss
    graph.total = tape.add(graph.distill, tape.cmul(graph.reg, cfg.beta));
}

DistillResult distill_run(const TrajectorySet& experts, const SelectedSubset& selected,
                          const ParamSet& base, const DistillConfig& cfg, const MetricsSink& sink) {
    cfg.validate();
    if (selected.examples.empty()) throw std::invalid_argument("distill_run: empty selection");
    if (experts.trajectories.empty()) throw std::invalid_argument("distill_run: empty trajectory set");
    for (const auto& t : experts.trajectories)
        if (t.model_hash != base.config.hash())
            throw std::runtime_error("hash mismatch: trajectory set was extracted with a different model config");

    const Tensor& table0 = base.get("embed");
    DistillResult result;
    result.synthetic = init_synthetic(static_cast<int64_t>(selected.examples.size()), table0,
                                      cfg.prompt_len, cfg.alpha0);

    Rng rng(cfg.seed ^ 0x64697374696c6cULL);
    for (int64_t s = 0; s < cfg.iterations; ++s) {
        DistillMetrics m;
        m.iteration = s;
        bool diverged = false;
        IterationGraph graph;
        try {
            build_iteration(graph, experts, selected, base, cfg, result.synthetic, rng);
        } catch (const std::runtime_error&) {
            diverged = true;
        }
        if (diverged || graph.skipped) {
            m.skipped = true;
            m.alpha = result.synthetic.alpha;
            m.mean_nn_distance = mean_nn_distance(result.synthetic, table0);
            ++result.skipped_iterations;
            result.metrics.push_back(m);
            if (sink) sink(m);
            continue;
        }

        m.distill_loss = graph.tape.val(graph.distill).at(0);
        m.reg_loss = graph.tape.val(graph.reg).at(0);
        m.total_loss = graph.tape.val(graph.total).at(0);

        // hypergradient through the full unroll, then one meta-SGD update
        std::vector<NodeId> wrt;
        if (graph.prompts >= 0) wrt.push_back(graph.prompts);
        wrt.push_back(graph.alpha);
        auto grads = graph.tape.grad(graph.total, wrt);
        if (graph.prompts >= 0 && cfg.meta_lr_prompts != 0.0) {
            const Tensor& gp = graph.tape.val(grads.at(graph.prompts));
            for (size_t i = 0; i < result.synthetic.prompts.data.size(); ++i)
                result.synthetic.prompts.data[i] -= cfg.meta_lr_prompts * gp.data[i];
        }
        if (cfg.meta_lr_alpha != 0.0) {
            const double ga = graph.tape.val(grads.at(graph.alpha)).at(0);
            result.synthetic.alpha =
                std::max(cfg.alpha_floor, result.synthetic.alpha - cfg.meta_lr_alpha * ga);
        }
        result.synthetic.iteration = s + 1;

        m.alpha = result.synthetic.alpha;
        m.mean_nn_distance = mean_nn_distance(result.synthetic, table0);
        result.metrics.push_back(m);
        if (sink) sink(m);
    }

    if (result.skipped_iterations * 2 > cfg.iterations)
        throw std::runtime_error("distill_run: " + std::to_string(result.skipped_iterations) + " of " +
                                 std::to_string(cfg.iterations) +
                                 " iterations skipped (degenerate trajectories)");
    return result;
}

}  // namespace nacd
