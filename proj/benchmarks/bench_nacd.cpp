#include <benchmark/benchmark.h>

#include "nacd/distill.hpp"
#include "nacd/eval.hpp"
#include "nacd/trajectory.hpp"

using namespace nacd;

namespace {

ModelConfig bench_model(int64_t d, int64_t blocks) {
    ModelConfig mc;
    mc.vocab_size = 64;
    mc.d_model = d;
    mc.context_len = 16;
    mc.n_blocks = blocks;
    mc.n_heads = 2;
    mc.d_ff = 2 * d;
    mc.init_seed = 7;
    return mc;
}

const ToyData& bench_data() {
    static const ToyData data = generate_toy_corpus(99, 128, 16, TaskFamily::Pattern);
    return data;
}

}  // namespace

static void BM_ForwardLoss(benchmark::State& state) {
    ParamSet ps = init_params(bench_model(state.range(0), 2));
    std::vector<Example> exs(bench_data().corpus.examples.begin(),
                             bench_data().corpus.examples.begin() + 8);
    TextBatch batch = TextBatch::from_examples(exs);
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval_loss(ps, batch, nullptr));
    }
}
BENCHMARK(BM_ForwardLoss)->Arg(16)->Arg(32)->Arg(64);

static void BM_SgdStep(benchmark::State& state) {
    ParamSet ps = init_params(bench_model(state.range(0), 2));
    std::vector<Example> exs(bench_data().corpus.examples.begin(),
                             bench_data().corpus.examples.begin() + 8);
    TextBatch batch = TextBatch::from_examples(exs);
    for (auto _ : state) {
        benchmark::DoNotOptimize(sgd_step(ps, batch, nullptr, 0.01));
    }
}
BENCHMARK(BM_SgdStep)->Arg(16)->Arg(32)->Arg(64);

static void BM_DistillIteration(benchmark::State& state) {
    ModelConfig mc = bench_model(32, 2);
    ParamSet base = init_params(mc);
    SelectedSubset sel = select_random(bench_data().corpus, 0.25, 3);
    TrajectorySet experts = build_trajectory_set(bench_data().corpus, mc, 3, 16, 0.1, 40, 1);

    DistillConfig dc;
    dc.student_steps = state.range(0);
    dc.iterations = 1;
    dc.prompt_len = 2;
    dc.inner_batch = 8;
    dc.alpha0 = 0.1;
    dc.seed = 5;
    SyntheticPromptSet syn = init_synthetic(static_cast<int64_t>(sel.examples.size()),
                                            base.get("embed"), 2, dc.alpha0);
    Rng rng(11);
    for (auto _ : state) {
        IterationGraph graph;
        build_iteration(graph, experts, sel, base, dc, syn, rng);
        auto grads = graph.tape.grad(graph.total, {graph.prompts, graph.alpha});
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(BM_DistillIteration)->Arg(1)->Arg(3)->Arg(6)->Unit(benchmark::kMillisecond);

static void BM_NearestVocab(benchmark::State& state) {
    Rng rng(13);
    const int64_t v = state.range(0);
    Tensor table({v, 32});
    for (auto& x : table.data) x = rng.next_normal();
    std::vector<double> vec(32);
    for (auto& x : vec) x = rng.next_normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(nearest_vocab(vec, table));
    }
}
BENCHMARK(BM_NearestVocab)->Arg(64)->Arg(512);

static void BM_McAccuracy(benchmark::State& state) {
    ParamSet ps = init_params(bench_model(32, 2));
    for (auto _ : state) {
        benchmark::DoNotOptimize(mc_accuracy(ps, bench_data().mc_items));
    }
}
BENCHMARK(BM_McAccuracy)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
