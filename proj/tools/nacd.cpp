// Pipeline driver: corpus generation, expert-trajectory extraction, prompt
// distillation, nearest-token decoding, fine-tuning and evaluation, each as
// a separately re-runnable stage working through artifact files.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nacd/config.hpp"
#include "nacd/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    int64_t seed = -1;
};

nacd::PipelineConfig resolve_config(const CommonArgs& args) {
    nacd::PipelineConfig cfg;
    if (!args.config_path.empty()) cfg = nacd::load_config(args.config_path);
    for (const auto& kv : args.overrides) nacd::apply_override(cfg, kv);
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (const char* env = std::getenv("NACD_OUT"); env && *env) cfg.out_dir = env;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "dotted override, e.g. distill.iterations=500");
    cmd->add_option("--out", args.out_dir, "output directory (NACD_OUT env overrides)");
    cmd->add_option("--seed", args.seed, "global seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"corpus distillation by trajectory-matched prompt learning"};
    app.require_subcommand(1);

    CommonArgs args;
    struct Stage {
        const char* name;
        const char* desc;
        void (*run)(const nacd::PipelineConfig&);
    };
    const std::vector<Stage> stages = {
        {"gen", "generate the toy corpus and eval items", nacd::run_gen},
        {"extract", "train experts and save per-epoch trajectories", nacd::run_extract},
        {"distill", "learn synthetic prompts by trajectory matching", nacd::run_distill_stage},
        {"decode", "decode prompts to nearest vocabulary tokens", nacd::run_decode},
        {"finetune", "fine-tune the comparison-matrix models", nacd::run_finetune_stage},
    };
    for (const auto& s : stages) add_common(app.add_subcommand(s.name, s.desc), args);
    add_common(app.add_subcommand("eval", "score fine-tuned models on the eval items"), args);
    add_common(app.add_subcommand("pipeline", "run all stages in order"), args);

    CLI11_PARSE(app, argc, argv);

    try {
        const nacd::PipelineConfig cfg = resolve_config(args);
        const std::string cmd = app.get_subcommands().front()->get_name();
        for (const auto& s : stages)
            if (cmd == s.name) {
                s.run(cfg);
                return 0;
            }
        if (cmd == "eval") {
            nacd::run_eval_stage(cfg);
            return 0;
        }
        nacd::run_pipeline(cfg);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
