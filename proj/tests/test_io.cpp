#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "nacd/config.hpp"
#include "nacd/hash.hpp"
#include "nacd/io.hpp"

using namespace nacd;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("nacd_io_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.d_model = 8;
    cfg.context_len = 16;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.init_seed = 3;
    return cfg;
}

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("corpus artifacts round-trip bit-exactly") {
    TempDir tmp;
    auto data = generate_toy_corpus(7, 24, 8, TaskFamily::Polarity);
    const uint64_t h = 0xabcdef12345678ULL;
    save_corpus(tmp.file("c.bin"), data, h);
    auto loaded = load_corpus(tmp.file("c.bin"), h);

    REQUIRE(loaded.corpus.size() == data.corpus.size());
    for (size_t i = 0; i < data.corpus.size(); ++i) {
        CHECK(loaded.corpus.examples[i].input_ids == data.corpus.examples[i].input_ids);
        CHECK(loaded.corpus.examples[i].target_ids == data.corpus.examples[i].target_ids);
        CHECK(loaded.corpus.examples[i].loss_mask == data.corpus.examples[i].loss_mask);
    }
    REQUIRE(loaded.mc_items.size() == data.mc_items.size());
    for (size_t i = 0; i < data.mc_items.size(); ++i) {
        CHECK(loaded.mc_items[i].context_ids == data.mc_items[i].context_ids);
        CHECK(loaded.mc_items[i].candidates == data.mc_items[i].candidates);
        CHECK(loaded.mc_items[i].gold == data.mc_items[i].gold);
    }
    CHECK(loaded.task == data.task);
    CHECK(loaded.corpus.seed == data.corpus.seed);

    // saving again produces identical bytes
    save_corpus(tmp.file("c2.bin"), loaded, h);
    CHECK(slurp(tmp.file("c.bin")) == slurp(tmp.file("c2.bin")));

    CHECK_THROWS_WITH_AS(load_corpus(tmp.file("c.bin"), h + 1), doctest::Contains("hash mismatch"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(load_corpus(tmp.file("nope.bin"), h), doctest::Contains("missing artifact"),
                         std::runtime_error);
}

TEST_CASE("param artifacts round-trip random tensors bit-exactly") {
    TempDir tmp;
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        ParamSet ps = init_params(small_config());
        for (auto& t : ps.tensors)
            for (auto& v : t.value.data) v = rng.next_normal() * 3.0;
        const uint64_t h = rng.next_u64();
        save_params(tmp.file("p.bin"), ps, h);
        ParamSet loaded = load_params(tmp.file("p.bin"), h);
        REQUIRE(loaded.tensors.size() == ps.tensors.size());
        for (size_t i = 0; i < ps.tensors.size(); ++i) {
            CHECK(loaded.tensors[i].name == ps.tensors[i].name);
            CHECK(loaded.tensors[i].value.data == ps.tensors[i].value.data);
            CHECK(loaded.tensors[i].trainable == ps.tensors[i].trainable);
        }
        CHECK(loaded.config.hash() == ps.config.hash());
    }
}

TEST_CASE("trajectory artifacts round-trip bit-exactly") {
    TempDir tmp;
    Rng rng(23);
    ExpertTrajectory traj;
    traj.training_seed = 42;
    traj.model_hash = small_config().hash();
    for (int e = 0; e < 4; ++e) {
        std::vector<double> snap(37);
        for (auto& v : snap) v = rng.next_normal();
        traj.snapshots.push_back(std::move(snap));
    }
    traj.epoch_losses = {1.5, 1.2, 0.9};

    const uint64_t h = 99;
    save_trajectory(tmp.file("t.bin"), traj, h);
    auto loaded = load_trajectory(tmp.file("t.bin"), h);
    CHECK(loaded.training_seed == traj.training_seed);
    CHECK(loaded.model_hash == traj.model_hash);
    CHECK(loaded.snapshots == traj.snapshots);
    CHECK(loaded.epoch_losses == traj.epoch_losses);

    TrajectorySet set;
    set.trajectories = {traj, traj};
    set.trajectories[1].training_seed = 43;
    save_trajectory_set(tmp.file("set"), set, h);
    auto loaded_set = load_trajectory_set(tmp.file("set"), h);
    REQUIRE(loaded_set.trajectories.size() == 2);
    CHECK(loaded_set.trajectories[0].snapshots == traj.snapshots);
    CHECK(loaded_set.trajectories[1].training_seed == 43);
    CHECK_THROWS_WITH_AS(load_trajectory_set(tmp.file("set"), h + 1),
                         doctest::Contains("hash mismatch"), std::runtime_error);
}

TEST_CASE("prompt artifacts round-trip bit-exactly") {
    TempDir tmp;
    Rng rng(29);
    SyntheticPromptSet syn;
    syn.prompts = Tensor({5, 2, 8});
    for (auto& v : syn.prompts.data) v = rng.next_normal();
    syn.alpha = 0.0123456789;
    syn.iteration = 321;

    save_prompts(tmp.file("s.bin"), syn, 7);
    auto loaded = load_prompts(tmp.file("s.bin"), 7);
    CHECK(loaded.prompts.shape == syn.prompts.shape);
    CHECK(loaded.prompts.data == syn.prompts.data);
    CHECK(loaded.alpha == syn.alpha);
    CHECK(loaded.iteration == syn.iteration);
}

TEST_CASE("selection artifacts reconstruct examples from the corpus") {
    TempDir tmp;
    auto data = generate_toy_corpus(7, 20, 8, TaskFamily::Pattern);
    auto sel = select_random(data.corpus, 0.3, 5);
    save_selection(tmp.file("sel.json"), sel, 11);
    auto loaded = load_selection(tmp.file("sel.json"), data.corpus, 11);
    CHECK(loaded.indices == sel.indices);
    REQUIRE(loaded.examples.size() == sel.examples.size());
    for (size_t i = 0; i < sel.examples.size(); ++i)
        CHECK(loaded.examples[i].input_ids == sel.examples[i].input_ids);
    CHECK_THROWS_WITH_AS(load_selection(tmp.file("sel.json"), data.corpus, 12),
                         doctest::Contains("hash mismatch"), std::runtime_error);
}

TEST_CASE("artifact reader rejects corrupt files") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.bin"), std::ios::binary);
        out << "not an artifact at all";
    }
    CHECK_THROWS_WITH_AS(read_artifact(tmp.file("bad.bin")), doctest::Contains("format error"),
                         std::runtime_error);
}

TEST_CASE("reports and metrics survive their text formats") {
    TempDir tmp;
    RunReport r;
    r.method = "nacd";
    r.data_fraction = 0.05;
    r.seeds = {1, 2, 3};
    r.accuracies = {0.5, 0.625, 0.55};
    r.mean = 0.5583333333333333;
    r.stddev = 0.0629;
    r.config_hash = 77;
    std::vector<RunReport> reports{r};
    save_reports(tmp.file("r.jsonl"), reports);
    auto loaded = load_reports(tmp.file("r.jsonl"));
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].method == r.method);
    CHECK(loaded[0].accuracies == r.accuracies);
    CHECK(loaded[0].mean == r.mean);
    CHECK(loaded[0].config_hash == r.config_hash);

    DistillMetrics m;
    m.iteration = 4;
    m.distill_loss = 0.75;
    m.reg_loss = 0.01;
    m.total_loss = 1.75;
    m.alpha = 0.05;
    m.mean_nn_distance = 1.25;
    append_metrics(tmp.file("m.jsonl"), m);
    append_metrics(tmp.file("m.jsonl"), m);
    std::ifstream in(tmp.file("m.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = Json::parse(line);
        CHECK(j.at("iteration") == 4);
        CHECK(j.at("total_loss") == 1.75);
        ++lines;
    }
    CHECK(lines == 2);
}

TEST_CASE("pipeline config parses, hashes and rejects unknown keys") {
    PipelineConfig cfg;
    const std::string text = config_to_json_text(cfg);
    PipelineConfig back = config_from_json_text(text);
    CHECK(back.hash() == cfg.hash());

    CHECK_THROWS_WITH_AS(config_from_json_text("{\"distil\": {}}"),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_json_text("{\"distill\": {\"iteration_count\": 5}}"),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_json_text("{nope"), doctest::Contains("config error"),
                         std::invalid_argument);

    // the output directory does not change the content hash
    PipelineConfig moved = cfg;
    moved.out_dir = "elsewhere";
    CHECK(moved.hash() == cfg.hash());

    // but a real setting does
    PipelineConfig changed = cfg;
    changed.distill.beta = 7.0;
    CHECK(changed.hash() != cfg.hash());
}

TEST_CASE("dotted overrides reach every stage") {
    PipelineConfig cfg;
    apply_override(cfg, "distill.iterations=123");
    CHECK(cfg.distill.iterations == 123);
    apply_override(cfg, "corpus.task=polarity");
    CHECK(cfg.corpus.task == "polarity");
    apply_override(cfg, "model.d_model=24");
    CHECK(cfg.model.d_model == 24);
    apply_override(cfg, "eval.lr=0.25");
    CHECK(cfg.eval.lr == 0.25);
    apply_override(cfg, "seed=9");
    CHECK(cfg.seed == 9);
    CHECK_THROWS_WITH_AS(apply_override(cfg, "distill.nope=1"), doctest::Contains("unknown key"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(apply_override(cfg, "no_equals"), doctest::Contains("key=value"),
                         std::invalid_argument);
}

TEST_CASE("config validation catches inconsistent stages") {
    PipelineConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.corpus.fraction = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = PipelineConfig{};
    cfg.trajectory.epochs = 2;
    cfg.distill.max_start_epoch = 4;
    CHECK_THROWS(cfg.validate());
    cfg = PipelineConfig{};
    cfg.model.vocab_size = 32;  // disagrees with the toy vocabulary
    CHECK_THROWS(cfg.validate());
}
