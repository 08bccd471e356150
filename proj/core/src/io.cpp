#include "nacd/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "nacd/hash.hpp"

namespace nacd {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'C', 'D', 'F', '0', '0', '1'};

uint64_t parse_hash(const Json& manifest) {
    return std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
    return out;
}

}  // namespace

void write_artifact(const std::string& path, const Json& manifest,
                    const std::vector<uint8_t>& payload) {
    const std::string header = manifest.dump();
    auto out = open_out(path);
    out.write(kMagic, sizeof(kMagic));
    const uint32_t hlen = static_cast<uint32_t>(header.size());
    uint8_t lenb[4] = {static_cast<uint8_t>(hlen), static_cast<uint8_t>(hlen >> 8),
                       static_cast<uint8_t>(hlen >> 16), static_cast<uint8_t>(hlen >> 24)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("io: short write to '" + path + "'");
}

Artifact read_artifact(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing artifact: '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("format error: '" + path + "' is not an artifact file");
    uint8_t lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    const uint32_t hlen = static_cast<uint32_t>(lenb[0]) | (static_cast<uint32_t>(lenb[1]) << 8) |
                          (static_cast<uint32_t>(lenb[2]) << 16) |
                          (static_cast<uint32_t>(lenb[3]) << 24);
    std::string header(hlen, '\0');
    in.read(header.data(), hlen);
    if (!in) throw std::runtime_error("format error: truncated manifest in '" + path + "'");
    Artifact art;
    try {
        art.manifest = Json::parse(header);
    } catch (const Json::parse_error& e) {
        throw std::runtime_error("format error: bad manifest in '" + path + "': " + e.what());
    }
    art.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return art;
}

void require_config_hash(const Artifact& art, uint64_t expected, const std::string& stage) {
    const uint64_t got = parse_hash(art.manifest);
    if (got != expected)
        throw std::runtime_error("hash mismatch: " + stage + " artifact was produced with config " +
                                 hash_hex(got) + " but the current config is " + hash_hex(expected));
}

void PayloadWriter::u32(uint32_t v) {
    bytes_.push_back(static_cast<uint8_t>(v));
    bytes_.push_back(static_cast<uint8_t>(v >> 8));
    bytes_.push_back(static_cast<uint8_t>(v >> 16));
    bytes_.push_back(static_cast<uint8_t>(v >> 24));
}

void PayloadWriter::f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

void PayloadWriter::u32s(std::span<const int64_t> values) {
    for (int64_t v : values) u32(static_cast<uint32_t>(v));
}

void PayloadWriter::f64s(std::span<const double> values) {
    for (double v : values) f64(v);
}

uint32_t PayloadReader::u32() {
    if (pos_ + 4 > bytes_.size()) throw std::runtime_error("format error: truncated payload");
    uint32_t v = static_cast<uint32_t>(bytes_[pos_]) | (static_cast<uint32_t>(bytes_[pos_ + 1]) << 8) |
                 (static_cast<uint32_t>(bytes_[pos_ + 2]) << 16) |
                 (static_cast<uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
}

double PayloadReader::f64() {
    if (pos_ + 8 > bytes_.size()) throw std::runtime_error("format error: truncated payload");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::vector<int64_t> PayloadReader::u32s(size_t count) {
    std::vector<int64_t> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) out.push_back(static_cast<int64_t>(u32()));
    return out;
}

std::vector<double> PayloadReader::f64s(size_t count) {
    std::vector<double> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) out.push_back(f64());
    return out;
}

// ---- corpus ----

void save_corpus(const std::string& path, const ToyData& data, uint64_t config_hash) {
    Json m;
    m["type"] = "corpus";
    m["version"] = 1;
    m["seed"] = data.corpus.seed;
    m["task"] = task_to_string(data.task);
    m["n_examples"] = data.corpus.size();
    m["n_mc_items"] = data.mc_items.size();
    m["vocab"] = toy_vocab().tokens;
    m["vocab_hash"] = hash_hex(toy_vocab().fingerprint());
    m["config_hash"] = hash_hex(config_hash);

    PayloadWriter w;
    for (const auto& ex : data.corpus.examples) {
        w.u32(static_cast<uint32_t>(ex.input_ids.size()));
        w.u32s(ex.input_ids);
        w.u32s(ex.target_ids);
        for (uint8_t b : ex.loss_mask) w.u32(b);
    }
    for (const auto& mc : data.mc_items) {
        w.u32(static_cast<uint32_t>(mc.context_ids.size()));
        w.u32s(mc.context_ids);
        w.u32(static_cast<uint32_t>(mc.candidates.size()));
        for (const auto& cand : mc.candidates) {
            w.u32(static_cast<uint32_t>(cand.size()));
            w.u32s(cand);
        }
        w.u32(static_cast<uint32_t>(mc.gold));
    }
    write_artifact(path, m, w.take());
}

ToyData load_corpus(const std::string& path, uint64_t expected_hash) {
    Artifact art = read_artifact(path);
    if (art.manifest.at("type") != "corpus")
        throw std::runtime_error("format error: '" + path + "' is not a corpus artifact");
    require_config_hash(art, expected_hash, "corpus");
    if (art.manifest.at("vocab_hash").get<std::string>() != hash_hex(toy_vocab().fingerprint()))
        throw std::runtime_error("hash mismatch: corpus vocabulary differs from the built-in one");

    ToyData data;
    data.task = task_from_string(art.manifest.at("task").get<std::string>());
    data.corpus.seed = art.manifest.at("seed").get<uint64_t>();
    const size_t n = art.manifest.at("n_examples").get<size_t>();
    const size_t nmc = art.manifest.at("n_mc_items").get<size_t>();

    PayloadReader r(art.payload);
    data.corpus.examples.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Example ex;
        const size_t len = r.u32();
        ex.input_ids = r.u32s(len);
        ex.target_ids = r.u32s(len);
        ex.loss_mask.reserve(len);
        for (size_t j = 0; j < len; ++j) ex.loss_mask.push_back(static_cast<uint8_t>(r.u32()));
        data.corpus.examples.push_back(std::move(ex));
    }
    data.mc_items.reserve(nmc);
    for (size_t i = 0; i < nmc; ++i) {
        MCItem mc;
        mc.context_ids = r.u32s(r.u32());
        const size_t ncand = r.u32();
        mc.candidates.reserve(ncand);
        for (size_t c = 0; c < ncand; ++c) mc.candidates.push_back(r.u32s(r.u32()));
        mc.gold = r.u32();
        data.mc_items.push_back(std::move(mc));
    }
    if (!r.done()) throw std::runtime_error("format error: trailing bytes in '" + path + "'");
    return data;
}

// ---- params ----

namespace {

Json model_config_json(const ModelConfig& cfg) {
    Json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["context_len"] = cfg.context_len;
    j["n_blocks"] = cfg.n_blocks;
    j["n_heads"] = cfg.n_heads;
    j["d_ff"] = cfg.d_ff;
    j["adapter_rank"] = cfg.adapter_rank;
    j["init_seed"] = cfg.init_seed;
    return j;
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int64_t>();
    cfg.d_model = j.at("d_model").get<int64_t>();
    cfg.context_len = j.at("context_len").get<int64_t>();
    cfg.n_blocks = j.at("n_blocks").get<int64_t>();
    cfg.n_heads = j.at("n_heads").get<int64_t>();
    cfg.d_ff = j.at("d_ff").get<int64_t>();
    cfg.adapter_rank = j.at("adapter_rank").get<int64_t>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    return cfg;
}

}  // namespace

void save_params(const std::string& path, const ParamSet& ps, uint64_t config_hash) {
    Json m;
    m["type"] = "params";
    m["version"] = 1;
    m["dtype"] = "f64";
    m["model"] = model_config_json(ps.config);
    m["config_hash"] = hash_hex(config_hash);
    Json tensors = Json::array();
    for (const auto& t : ps.tensors) {
        Json tj;
        tj["name"] = t.name;
        tj["shape"] = t.value.shape;
        tj["trainable"] = t.trainable;
        tensors.push_back(tj);
    }
    m["tensors"] = tensors;

    PayloadWriter w;
    for (const auto& t : ps.tensors) w.f64s(t.value.data);
    write_artifact(path, m, w.take());
}

ParamSet load_params(const std::string& path, uint64_t expected_hash) {
    Artifact art = read_artifact(path);
    if (art.manifest.at("type") != "params")
        throw std::runtime_error("format error: '" + path + "' is not a params artifact");
    require_config_hash(art, expected_hash, "params");

    ParamSet ps = init_params(model_config_from_json(art.manifest.at("model")));
    PayloadReader r(art.payload);
    const Json& tensors = art.manifest.at("tensors");
    if (tensors.size() != ps.tensors.size())
        throw std::runtime_error("format error: tensor count mismatch in '" + path + "'");
    for (size_t i = 0; i < ps.tensors.size(); ++i) {
        if (tensors[i].at("name") != ps.tensors[i].name)
            throw std::runtime_error("format error: tensor order mismatch in '" + path + "'");
        ps.tensors[i].value.data = r.f64s(ps.tensors[i].value.data.size());
    }
    if (!r.done()) throw std::runtime_error("format error: trailing bytes in '" + path + "'");
    return ps;
}

// ---- trajectories ----

void save_trajectory(const std::string& path, const ExpertTrajectory& traj, uint64_t config_hash) {
    Json m;
    m["type"] = "trajectory";
    m["version"] = 1;
    m["training_seed"] = traj.training_seed;
    m["model_hash"] = hash_hex(traj.model_hash);
    m["epochs"] = traj.epochs();
    m["step_unit"] = "epoch";
    m["vector_len"] = traj.snapshots.empty() ? 0 : traj.snapshots[0].size();
    m["config_hash"] = hash_hex(config_hash);

    PayloadWriter w;
    for (const auto& snap : traj.snapshots) w.f64s(snap);
    w.f64s(traj.epoch_losses);
    write_artifact(path, m, w.take());
}

ExpertTrajectory load_trajectory(const std::string& path, uint64_t expected_hash) {
    Artifact art = read_artifact(path);
    if (art.manifest.at("type") != "trajectory")
        throw std::runtime_error("format error: '" + path + "' is not a trajectory artifact");
    require_config_hash(art, expected_hash, "trajectory");

    ExpertTrajectory traj;
    traj.training_seed = art.manifest.at("training_seed").get<uint64_t>();
    traj.model_hash = std::stoull(art.manifest.at("model_hash").get<std::string>(), nullptr, 16);
    const int64_t epochs = art.manifest.at("epochs").get<int64_t>();
    const size_t vlen = art.manifest.at("vector_len").get<size_t>();
    PayloadReader r(art.payload);
    for (int64_t i = 0; i <= epochs; ++i) traj.snapshots.push_back(r.f64s(vlen));
    traj.epoch_losses = r.f64s(static_cast<size_t>(epochs));
    if (!r.done()) throw std::runtime_error("format error: trailing bytes in '" + path + "'");
    return traj;
}

void save_trajectory_set(const std::string& dir, const TrajectorySet& set, uint64_t config_hash) {
    std::filesystem::create_directories(dir);
    Json m;
    m["type"] = "trajectory_set";
    m["version"] = 1;
    m["count"] = set.trajectories.size();
    m["config_hash"] = hash_hex(config_hash);
    Json files = Json::array();
    for (size_t i = 0; i < set.trajectories.size(); ++i) {
        const std::string name = "traj_" + std::to_string(i) + ".bin";
        save_trajectory(dir + "/" + name, set.trajectories[i], config_hash);
        files.push_back(name);
    }
    m["files"] = files;
    std::ofstream out(dir + "/set.json", std::ios::trunc);
    if (!out) throw std::runtime_error("io: cannot write '" + dir + "/set.json'");
    out << m.dump(2) << "\n";
}

TrajectorySet load_trajectory_set(const std::string& dir, uint64_t expected_hash) {
    std::ifstream in(dir + "/set.json");
    if (!in) throw std::runtime_error("missing artifact: '" + dir + "/set.json'");
    Json m = Json::parse(in);
    if (std::stoull(m.at("config_hash").get<std::string>(), nullptr, 16) != expected_hash)
        throw std::runtime_error("hash mismatch: trajectory set produced under a different config");
    TrajectorySet set;
    for (const auto& f : m.at("files"))
        set.trajectories.push_back(load_trajectory(dir + "/" + f.get<std::string>(), expected_hash));
    if (set.trajectories.empty())
        throw std::runtime_error("format error: trajectory set '" + dir + "' is empty");
    return set;
}

// ---- prompts ----

void save_prompts(const std::string& path, const SyntheticPromptSet& syn, uint64_t config_hash) {
    Json m;
    m["type"] = "prompts";
    m["version"] = 1;
    m["n_samples"] = syn.n_samples();
    m["prompt_len"] = syn.prompt_len();
    m["d_model"] = syn.dim();
    m["iteration"] = syn.iteration;
    m["config_hash"] = hash_hex(config_hash);

    PayloadWriter w;
    w.f64(syn.alpha);
    w.f64s(syn.prompts.data);
    write_artifact(path, m, w.take());
}

SyntheticPromptSet load_prompts(const std::string& path, uint64_t expected_hash) {
    Artifact art = read_artifact(path);
    if (art.manifest.at("type") != "prompts")
        throw std::runtime_error("format error: '" + path + "' is not a prompts artifact");
    require_config_hash(art, expected_hash, "prompts");

    SyntheticPromptSet syn;
    const int64_t n = art.manifest.at("n_samples").get<int64_t>();
    const int64_t k = art.manifest.at("prompt_len").get<int64_t>();
    const int64_t d = art.manifest.at("d_model").get<int64_t>();
    syn.iteration = art.manifest.at("iteration").get<int64_t>();
    PayloadReader r(art.payload);
    syn.alpha = r.f64();
    syn.prompts = Tensor({n, k, d}, r.f64s(static_cast<size_t>(n * k * d)));
    if (!r.done()) throw std::runtime_error("format error: trailing bytes in '" + path + "'");
    return syn;
}

// ---- selection ----

void save_selection(const std::string& path, const SelectedSubset& sel, uint64_t config_hash) {
    Json m;
    m["type"] = "selection";
    m["version"] = 1;
    m["indices"] = sel.indices;
    m["config_hash"] = hash_hex(config_hash);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
    out << m.dump(2) << "\n";
}

SelectedSubset load_selection(const std::string& path, const Corpus& corpus, uint64_t expected_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing artifact: '" + path + "'");
    Json m = Json::parse(in);
    if (std::stoull(m.at("config_hash").get<std::string>(), nullptr, 16) != expected_hash)
        throw std::runtime_error("hash mismatch: selection produced under a different config");
    SelectedSubset sel;
    sel.indices = m.at("indices").get<std::vector<size_t>>();
    for (size_t i : sel.indices) {
        if (i >= corpus.size())
            throw std::runtime_error("format error: selection index " + std::to_string(i) +
                                     " out of range");
        sel.examples.push_back(corpus.examples[i]);
    }
    return sel;
}

// ---- structured text ----

void append_metrics(const std::string& path, const DistillMetrics& m) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("io: cannot append to '" + path + "'");
    Json j;
    j["iteration"] = m.iteration;
    j["distill_loss"] = m.distill_loss;
    j["reg_loss"] = m.reg_loss;
    j["total_loss"] = m.total_loss;
    j["alpha"] = m.alpha;
    j["mean_nn_distance"] = m.mean_nn_distance;
    j["skipped"] = m.skipped;
    out << j.dump() << "\n";
}

void save_decoded(const std::string& path, const std::vector<DecodedPrompt>& decoded) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
    for (size_t i = 0; i < decoded.size(); ++i) {
        Json j;
        j["sample"] = i;
        Json ids = Json::array(), toks = Json::array(), dists = Json::array();
        for (const auto& t : decoded[i].tokens) {
            ids.push_back(t.id);
            toks.push_back(t.token);
            dists.push_back(t.distance);
        }
        j["ids"] = ids;
        j["tokens"] = toks;
        j["distances"] = dists;
        out << j.dump() << "\n";
    }
}

void save_reports(const std::string& path, std::span<const RunReport> reports) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
    for (const auto& r : reports) {
        Json j;
        j["method"] = r.method;
        j["data_fraction"] = r.data_fraction;
        j["seeds"] = r.seeds;
        j["accuracies"] = r.accuracies;
        j["mean"] = r.mean;
        j["stddev"] = r.stddev;
        j["config_hash"] = hash_hex(r.config_hash);
        out << j.dump() << "\n";
    }
}

std::vector<RunReport> load_reports(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing artifact: '" + path + "'");
    std::vector<RunReport> reports;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Json j = Json::parse(line);
        RunReport r;
        r.method = j.at("method").get<std::string>();
        r.data_fraction = j.at("data_fraction").get<double>();
        r.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        r.accuracies = j.at("accuracies").get<std::vector<double>>();
        r.mean = j.at("mean").get<double>();
        r.stddev = j.at("stddev").get<double>();
        r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace nacd
