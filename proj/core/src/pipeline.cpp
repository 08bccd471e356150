#include "nacd/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <mutex>
#include <thread>

#include "nacd/io.hpp"
#include "nacd/transfer.hpp"

namespace nacd {

namespace {

struct Cell {
    std::string method;
    uint64_t seed;
};

std::vector<Cell> matrix_cells(const PipelineConfig& cfg) {
    std::vector<Cell> cells;
    for (uint64_t s : cfg.eval_seeds()) {
        cells.push_back({"baseline", s});
        cells.push_back({"full", s});
        cells.push_back({"selection", s});
        cells.push_back({"nacd", s});
    }
    return cells;
}

SelectedSubset make_selection(const PipelineConfig& cfg, const Corpus& corpus) {
    if (!cfg.corpus.score_file.empty())
        return select_by_scores(corpus, cfg.corpus.score_file, cfg.corpus.fraction);
    return select_random(corpus, cfg.corpus.fraction, cfg.corpus_seed() + 5);
}

void for_each_parallel(std::vector<Cell>& cells, int threads,
                       const std::function<void(const Cell&)>& fn) {
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(cells.size())));
    if (workers == 1) {
        for (const auto& c : cells) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = static_cast<size_t>(w); i < cells.size(); i += static_cast<size_t>(workers)) {
                try {
                    fn(cells[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

StagePaths::StagePaths(const PipelineConfig& cfg) {
    out_dir = cfg.out_dir;
    corpus = out_dir + "/corpus.bin";
    selection = out_dir + "/selection.json";
    trajectories = out_dir + "/trajectories";
    prompts = out_dir + "/prompts.bin";
    metrics = out_dir + "/metrics.jsonl";
    decoded = out_dir + "/decoded.jsonl";
    report = out_dir + "/report.jsonl";
}

std::string StagePaths::params(const std::string& method, uint64_t seed) const {
    return out_dir + "/params_" + method + "_" + std::to_string(seed) + ".bin";
}

void run_gen(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    std::filesystem::create_directories(paths.out_dir);
    ToyData data = generate_toy_corpus(cfg.corpus_seed(), static_cast<size_t>(cfg.corpus.n_train),
                                       static_cast<size_t>(cfg.corpus.n_eval),
                                       task_from_string(cfg.corpus.task));
    save_corpus(paths.corpus, data, cfg.hash());
}

void run_extract(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    ToyData data = load_corpus(paths.corpus, cfg.hash());
    const int64_t batch = std::min<int64_t>(cfg.trajectory.batch_size, cfg.corpus.n_train);
    TrajectorySet set = build_trajectory_set(data.corpus, cfg.resolved_model(), cfg.trajectory.epochs,
                                             batch, cfg.trajectory.lr, cfg.trajectory_seed(),
                                             static_cast<int>(cfg.trajectory.repeats),
                                             static_cast<int>(cfg.trajectory.threads));
    save_trajectory_set(paths.trajectories, set, cfg.hash());
}

void run_distill_stage(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    ToyData data = load_corpus(paths.corpus, cfg.hash());
    TrajectorySet experts = load_trajectory_set(paths.trajectories, cfg.hash());

    SelectedSubset sel = make_selection(cfg, data.corpus);
    save_selection(paths.selection, sel, cfg.hash());

    ParamSet base = init_params(cfg.resolved_model());
    DistillConfig dcfg = cfg.distill;
    dcfg.seed = cfg.distill_seed();
    dcfg.inner_batch = std::min<int64_t>(dcfg.inner_batch, static_cast<int64_t>(sel.examples.size()));

    // fresh metrics stream per run so reruns stay byte-identical
    std::filesystem::remove(paths.metrics);
    MetricsSink sink = [&](const DistillMetrics& m) { append_metrics(paths.metrics, m); };
    DistillResult result = distill_run(experts, sel, base, dcfg, sink);
    save_prompts(paths.prompts, result.synthetic, cfg.hash());
}

void run_decode(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    SyntheticPromptSet syn = load_prompts(paths.prompts, cfg.hash());
    ParamSet base = init_params(cfg.resolved_model());
    auto decoded = decode_prompts(syn, toy_vocab(), base.get("embed"));
    save_decoded(paths.decoded, decoded);
}

void run_finetune_stage(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    ToyData data = load_corpus(paths.corpus, cfg.hash());
    SelectedSubset sel = load_selection(paths.selection, data.corpus, cfg.hash());
    SyntheticPromptSet syn = load_prompts(paths.prompts, cfg.hash());
    ParamSet base = init_params(cfg.resolved_model());

    SelectedSubset full;
    full.indices.resize(data.corpus.size());
    for (size_t i = 0; i < data.corpus.size(); ++i) full.indices[i] = i;
    full.examples = data.corpus.examples;

    const int64_t batch = std::min<int64_t>(cfg.eval.batch_size, cfg.corpus.n_train);
    auto cells = matrix_cells(cfg);
    for_each_parallel(cells, static_cast<int>(cfg.eval.threads), [&](const Cell& cell) {
        ParamSet ps = base;
        if (cell.method == "full")
            ps = finetune(base, full, nullptr, nullptr, cfg.eval.epochs, batch, cfg.eval.lr, cell.seed);
        else if (cell.method == "selection")
            ps = finetune(base, sel, nullptr, nullptr, cfg.eval.epochs, batch, cfg.eval.lr, cell.seed);
        else if (cell.method == "nacd")
            ps = finetune(base, sel, &syn, nullptr, cfg.eval.epochs, batch, cfg.eval.lr, cell.seed);
        save_params(paths.params(cell.method, cell.seed), ps, cfg.hash());
    });
}

std::vector<RunReport> run_eval_stage(const PipelineConfig& cfg) {
    cfg.validate();
    StagePaths paths(cfg);
    ToyData data = load_corpus(paths.corpus, cfg.hash());

    auto cells = matrix_cells(cfg);
    std::vector<double> accuracy(cells.size(), 0.0);
    std::mutex mu;
    std::vector<std::thread> pool;
    const int workers = std::max<int>(1, std::min<int>(static_cast<int>(cfg.eval.threads),
                                                       static_cast<int>(cells.size())));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = static_cast<size_t>(w); i < cells.size(); i += static_cast<size_t>(workers)) {
                ParamSet ps = load_params(paths.params(cells[i].method, cells[i].seed), cfg.hash());
                const double acc = mc_accuracy(ps, data.mc_items);
                std::lock_guard<std::mutex> lock(mu);
                accuracy[i] = acc;
            }
        });
    }
    for (auto& t : pool) t.join();

    std::vector<RunReport> reports;
    for (const std::string method : {"baseline", "full", "selection", "nacd"}) {
        RunReport r;
        r.method = method;
        r.data_fraction = method == "baseline" ? 0.0 : method == "full" ? 1.0 : cfg.corpus.fraction;
        r.config_hash = cfg.hash();
        for (size_t i = 0; i < cells.size(); ++i)
            if (cells[i].method == method) {
                r.seeds.push_back(cells[i].seed);
                r.accuracies.push_back(accuracy[i]);
            }
        double sum = 0.0;
        for (double a : r.accuracies) sum += a;
        r.mean = sum / static_cast<double>(r.accuracies.size());
        if (r.accuracies.size() >= 2) {
            double sq = 0.0;
            for (double a : r.accuracies) sq += (a - r.mean) * (a - r.mean);
            r.stddev = std::sqrt(sq / static_cast<double>(r.accuracies.size() - 1));
        }
        reports.push_back(std::move(r));
    }
    save_reports(paths.report, reports);
    std::fputs(report_table(reports).c_str(), stdout);
    return reports;
}

std::vector<RunReport> run_pipeline(const PipelineConfig& cfg) {
    run_gen(cfg);
    run_extract(cfg);
    run_distill_stage(cfg);
    run_decode(cfg);
    run_finetune_stage(cfg);
    return run_eval_stage(cfg);
}

}  // namespace nacd
