#include "nacd/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "nacd/corpus.hpp"
#include "nacd/hash.hpp"

namespace nacd {

using Json = nlohmann::json;

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key()))
            throw std::invalid_argument("config error: unknown key '" + where + it.key() + "'");
}

Json to_json(const PipelineConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["corpus"] = {{"task", c.corpus.task},       {"n_train", c.corpus.n_train},
                   {"n_eval", c.corpus.n_eval},   {"fraction", c.corpus.fraction},
                   {"score_file", c.corpus.score_file}, {"seed", c.corpus.seed}};
    j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                  {"context_len", c.model.context_len}, {"n_blocks", c.model.n_blocks},
                  {"n_heads", c.model.n_heads},       {"d_ff", c.model.d_ff},
                  {"adapter_rank", c.model.adapter_rank}, {"init_seed", c.model.init_seed}};
    j["trajectory"] = {{"epochs", c.trajectory.epochs},   {"batch_size", c.trajectory.batch_size},
                       {"lr", c.trajectory.lr},           {"repeats", c.trajectory.repeats},
                       {"base_seed", c.trajectory.base_seed}, {"threads", c.trajectory.threads}};
    j["distill"] = {{"student_steps", c.distill.student_steps},
                    {"expert_steps", c.distill.expert_steps},
                    {"iterations", c.distill.iterations},
                    {"prompt_len", c.distill.prompt_len},
                    {"beta", c.distill.beta},
                    {"max_start_epoch", c.distill.max_start_epoch},
                    {"alpha0", c.distill.alpha0},
                    {"meta_lr_prompts", c.distill.meta_lr_prompts},
                    {"meta_lr_alpha", c.distill.meta_lr_alpha},
                    {"inner_batch", c.distill.inner_batch},
                    {"denom_floor", c.distill.denom_floor},
                    {"alpha_floor", c.distill.alpha_floor},
                    {"seed", c.distill.seed}};
    j["transfer"] = {{"target_init_seed", c.transfer.target_init_seed}};
    j["eval"] = {{"epochs", c.eval.epochs},         {"batch_size", c.eval.batch_size},
                 {"lr", c.eval.lr},                 {"seed_count", c.eval.seed_count},
                 {"base_seed", c.eval.base_seed},   {"threads", c.eval.threads}};
    return j;
}

void from_json(const Json& j, PipelineConfig& c) {
    reject_unknown(j, {"seed", "out_dir", "corpus", "model", "trajectory", "distill", "transfer", "eval"}, "");
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("corpus")) {
        const Json& s = j.at("corpus");
        reject_unknown(s, {"task", "n_train", "n_eval", "fraction", "score_file", "seed"}, "corpus.");
        if (s.contains("task")) c.corpus.task = s.at("task").get<std::string>();
        if (s.contains("n_train")) c.corpus.n_train = s.at("n_train").get<int64_t>();
        if (s.contains("n_eval")) c.corpus.n_eval = s.at("n_eval").get<int64_t>();
        if (s.contains("fraction")) c.corpus.fraction = s.at("fraction").get<double>();
        if (s.contains("score_file")) c.corpus.score_file = s.at("score_file").get<std::string>();
        if (s.contains("seed")) c.corpus.seed = s.at("seed").get<uint64_t>();
    }
    if (j.contains("model")) {
        const Json& s = j.at("model");
        reject_unknown(s, {"vocab_size", "d_model", "context_len", "n_blocks", "n_heads", "d_ff",
                           "adapter_rank", "init_seed"},
                       "model.");
        if (s.contains("vocab_size")) c.model.vocab_size = s.at("vocab_size").get<int64_t>();
        if (s.contains("d_model")) c.model.d_model = s.at("d_model").get<int64_t>();
        if (s.contains("context_len")) c.model.context_len = s.at("context_len").get<int64_t>();
        if (s.contains("n_blocks")) c.model.n_blocks = s.at("n_blocks").get<int64_t>();
        if (s.contains("n_heads")) c.model.n_heads = s.at("n_heads").get<int64_t>();
        if (s.contains("d_ff")) c.model.d_ff = s.at("d_ff").get<int64_t>();
        if (s.contains("adapter_rank")) c.model.adapter_rank = s.at("adapter_rank").get<int64_t>();
        if (s.contains("init_seed")) c.model.init_seed = s.at("init_seed").get<uint64_t>();
    }
    if (j.contains("trajectory")) {
        const Json& s = j.at("trajectory");
        reject_unknown(s, {"epochs", "batch_size", "lr", "repeats", "base_seed", "threads"},
                       "trajectory.");
        if (s.contains("epochs")) c.trajectory.epochs = s.at("epochs").get<int64_t>();
        if (s.contains("batch_size")) c.trajectory.batch_size = s.at("batch_size").get<int64_t>();
        if (s.contains("lr")) c.trajectory.lr = s.at("lr").get<double>();
        if (s.contains("repeats")) c.trajectory.repeats = s.at("repeats").get<int64_t>();
        if (s.contains("base_seed")) c.trajectory.base_seed = s.at("base_seed").get<uint64_t>();
        if (s.contains("threads")) c.trajectory.threads = s.at("threads").get<int64_t>();
    }
    if (j.contains("distill")) {
        const Json& s = j.at("distill");
        reject_unknown(s, {"student_steps", "expert_steps", "iterations", "prompt_len", "beta",
                           "max_start_epoch", "alpha0", "meta_lr_prompts", "meta_lr_alpha",
                           "inner_batch", "denom_floor", "alpha_floor", "seed"},
                       "distill.");
        if (s.contains("student_steps")) c.distill.student_steps = s.at("student_steps").get<int64_t>();
        if (s.contains("expert_steps")) c.distill.expert_steps = s.at("expert_steps").get<int64_t>();
        if (s.contains("iterations")) c.distill.iterations = s.at("iterations").get<int64_t>();
        if (s.contains("prompt_len")) c.distill.prompt_len = s.at("prompt_len").get<int64_t>();
        if (s.contains("beta")) c.distill.beta = s.at("beta").get<double>();
        if (s.contains("max_start_epoch"))
            c.distill.max_start_epoch = s.at("max_start_epoch").get<int64_t>();
        if (s.contains("alpha0")) c.distill.alpha0 = s.at("alpha0").get<double>();
        if (s.contains("meta_lr_prompts"))
            c.distill.meta_lr_prompts = s.at("meta_lr_prompts").get<double>();
        if (s.contains("meta_lr_alpha")) c.distill.meta_lr_alpha = s.at("meta_lr_alpha").get<double>();
        if (s.contains("inner_batch")) c.distill.inner_batch = s.at("inner_batch").get<int64_t>();
        if (s.contains("denom_floor")) c.distill.denom_floor = s.at("denom_floor").get<double>();
        if (s.contains("alpha_floor")) c.distill.alpha_floor = s.at("alpha_floor").get<double>();
        if (s.contains("seed")) c.distill.seed = s.at("seed").get<uint64_t>();
    }
    if (j.contains("transfer")) {
        const Json& s = j.at("transfer");
        reject_unknown(s, {"target_init_seed"}, "transfer.");
        if (s.contains("target_init_seed"))
            c.transfer.target_init_seed = s.at("target_init_seed").get<uint64_t>();
    }
    if (j.contains("eval")) {
        const Json& s = j.at("eval");
        reject_unknown(s, {"epochs", "batch_size", "lr", "seed_count", "base_seed", "threads"},
                       "eval.");
        if (s.contains("epochs")) c.eval.epochs = s.at("epochs").get<int64_t>();
        if (s.contains("batch_size")) c.eval.batch_size = s.at("batch_size").get<int64_t>();
        if (s.contains("lr")) c.eval.lr = s.at("lr").get<double>();
        if (s.contains("seed_count")) c.eval.seed_count = s.at("seed_count").get<int64_t>();
        if (s.contains("base_seed")) c.eval.base_seed = s.at("base_seed").get<uint64_t>();
        if (s.contains("threads")) c.eval.threads = s.at("threads").get<int64_t>();
    }
}

}  // namespace

void PipelineConfig::validate() const {
    task_from_string(corpus.task);
    if (corpus.n_train < 8) throw std::invalid_argument("config error: corpus.n_train must be >= 8");
    if (corpus.n_eval < 4) throw std::invalid_argument("config error: corpus.n_eval must be >= 4");
    if (!(corpus.fraction > 0.0) || corpus.fraction > 1.0)
        throw std::invalid_argument("config error: corpus.fraction must be in (0,1]");
    resolved_model().validate();
    if (resolved_model().vocab_size != toy_vocab().size())
        throw std::invalid_argument("config error: model.vocab_size must match the toy vocabulary (" +
                                    std::to_string(toy_vocab().size()) + ")");
    if (trajectory.epochs < 2)
        throw std::invalid_argument("config error: trajectory.epochs must be >= 2");
    if (trajectory.repeats < 1)
        throw std::invalid_argument("config error: trajectory.repeats must be >= 1");
    distill.validate();
    if (trajectory.epochs < distill.max_start_epoch - 1 + distill.expert_steps)
        throw std::invalid_argument(
            "config error: trajectory.epochs too small for distill.max_start_epoch/expert_steps");
    if (eval.seed_count < 1) throw std::invalid_argument("config error: eval.seed_count must be >= 1");
    const int64_t k = distill.prompt_len;
    // longest toy example is bounded by 12 tokens; the prompt must still fit
    if (resolved_model().context_len < k + 12)
        throw std::invalid_argument("config error: model.context_len must be >= prompt_len + 12");
}

std::string PipelineConfig::canonical() const {
    PipelineConfig c = *this;
    c.out_dir.clear();  // the output location does not change the computation
    return to_json(c).dump();
}

uint64_t PipelineConfig::hash() const { return fnv1a(canonical()); }

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing artifact: config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

PipelineConfig config_from_json_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw std::invalid_argument(std::string("config error: ") + e.what());
    }
    PipelineConfig cfg;
    from_json(j, cfg);
    return cfg;
}

std::string config_to_json_text(const PipelineConfig& cfg) { return to_json(cfg).dump(2); }

void apply_override(PipelineConfig& cfg, const std::string& key_eq_value) {
    const size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config error: override must look like key=value, got '" +
                                    key_eq_value + "'");
    const std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);

    Json j = to_json(cfg);
    Json* node = &j;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const size_t dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]))
            throw std::invalid_argument("config error: unknown key '" + key + "'");
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf))
        throw std::invalid_argument("config error: unknown key '" + key + "'");

    Json& slot = (*node)[leaf];
    if (slot.is_string()) {
        slot = value;
    } else if (slot.is_number_float()) {
        slot = std::stod(value);
    } else if (slot.is_number_unsigned()) {
        slot = static_cast<uint64_t>(std::stoull(value));
    } else {
        slot = static_cast<int64_t>(std::stoll(value));
    }
    PipelineConfig next;
    from_json(j, next);
    cfg = next;
}

}  // namespace nacd
