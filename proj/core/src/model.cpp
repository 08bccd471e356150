#include "nacd/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "nacd/hash.hpp"
#include "nacd/rng.hpp"

namespace nacd {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kMaskNegInf = -1e30;

Tensor normal_tensor(Rng& rng, Shape shape, double scale) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.next_normal() * scale;
    return t;
}

struct BlockNodes {
    NodeId norm1_gain, wq, wk, wv, wo;
    NodeId norm2_gain, w1, b1, w2, b2;
    // adapter factor pairs, -1 when rank == 0
    NodeId wq_a = -1, wq_b = -1, wk_a = -1, wk_b = -1, wv_a = -1, wv_b = -1, wo_a = -1, wo_b = -1;
    NodeId w1_a = -1, w1_b = -1, w2_a = -1, w2_b = -1;
};

// y = x W (+ x A B when adapters are present); x is (R, in)
NodeId linear(Tape& t, NodeId x, NodeId w, NodeId a, NodeId b) {
    NodeId y = t.matmul(x, w);
    if (a >= 0) y = t.add(y, t.matmul(t.matmul(x, a), b));
    return y;
}

NodeId rmsnorm(Tape& t, NodeId x, NodeId gain, int64_t d) {
    NodeId ms = t.cmul(t.row_sum(t.mul(x, x)), 1.0 / static_cast<double>(d));
    NodeId r = t.recip(t.sqrt(t.cadd(ms, kNormEps)));
    NodeId xn = t.mul(x, t.bcast_last(r, d));
    return t.mul(xn, t.tile_lead(gain, t.val(x).shape));
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 5) throw std::invalid_argument("config error: vocab_size must be >= 5");
    if (d_model < 2) throw std::invalid_argument("config error: d_model must be >= 2");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw std::invalid_argument("config error: d_model must be divisible by n_heads");
    if (n_blocks < 1) throw std::invalid_argument("config error: n_blocks must be >= 1");
    if (context_len < 2) throw std::invalid_argument("config error: context_len must be >= 2");
    if (d_ff < 1) throw std::invalid_argument("config error: d_ff must be >= 1");
    if (adapter_rank < 0 || adapter_rank > std::min(d_model, d_ff))
        throw std::invalid_argument("config error: adapter_rank must be <= min(d_model, d_ff)");
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os << "model{v=" << vocab_size << ",d=" << d_model << ",ctx=" << context_len
       << ",blocks=" << n_blocks << ",heads=" << n_heads << ",ff=" << d_ff
       << ",rank=" << adapter_rank << ",init=" << init_seed << "}";
    return os.str();
}

uint64_t ModelConfig::hash() const { return fnv1a(canonical()); }

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("params: no tensor named '" + name + "'");
}

Tensor& ParamSet::get_mut(const std::string& name) {
    for (auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("params: no tensor named '" + name + "'");
}

int64_t ParamSet::trainable_scalar_count() const {
    int64_t n = 0;
    for (const auto& t : tensors)
        if (t.trainable) n += t.value.numel();
    return n;
}

std::vector<double> ParamSet::flatten_trainable() const {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(trainable_scalar_count()));
    for (const auto& t : tensors)
        if (t.trainable) flat.insert(flat.end(), t.value.data.begin(), t.value.data.end());
    return flat;
}

void ParamSet::unflatten_trainable(std::span<const double> flat) {
    if (static_cast<int64_t>(flat.size()) != trainable_scalar_count())
        throw std::invalid_argument("params: flat vector length " + std::to_string(flat.size()) +
                                    " does not match trainable count " +
                                    std::to_string(trainable_scalar_count()));
    size_t off = 0;
    for (auto& t : tensors) {
        if (!t.trainable) continue;
        std::memcpy(t.value.data.data(), flat.data() + off,
                    t.value.data.size() * sizeof(double));
        off += t.value.data.size();
    }
}

ParamSet init_params(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.init_seed ^ 0x696e6974ULL);
    const int64_t d = cfg.d_model;
    const int64_t f = cfg.d_ff;
    const int64_t r = cfg.adapter_rank;
    const bool lora = r > 0;
    const double wscale = 1.0 / std::sqrt(static_cast<double>(d));
    const double fscale = 1.0 / std::sqrt(static_cast<double>(f));

    ParamSet ps;
    ps.config = cfg;
    auto put = [&](const std::string& name, Tensor t, bool base_tensor) {
        ps.tensors.push_back({name, std::move(t), lora ? !base_tensor : true});
    };
    auto put_adapters = [&](const std::string& stem, int64_t din, int64_t dout, double scale) {
        if (!lora) return;
        put(stem + ".lora_a", normal_tensor(rng, {din, r}, scale), false);
        put(stem + ".lora_b", Tensor::zeros({r, dout}), false);
    };

    put("embed", normal_tensor(rng, {cfg.vocab_size, d}, 0.5), true);
    for (int64_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        put(p + "norm1.gain", Tensor::full({d}, 1.0), true);
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            put(p + w, normal_tensor(rng, {d, d}, wscale), true);
            put_adapters(p + w, d, d, wscale);
        }
        put(p + "norm2.gain", Tensor::full({d}, 1.0), true);
        put(p + "ffn.w1", normal_tensor(rng, {d, f}, wscale), true);
        put_adapters(p + "ffn.w1", d, f, wscale);
        put(p + "ffn.b1", Tensor::zeros({f}), true);
        put(p + "ffn.w2", normal_tensor(rng, {f, d}, fscale), true);
        put_adapters(p + "ffn.w2", f, d, fscale);
        put(p + "ffn.b2", Tensor::zeros({d}), true);
    }
    put("final_norm.gain", Tensor::full({d}, 1.0), true);
    // zero head: uniform logits at initialization
    put("head.w", Tensor::zeros({d, cfg.vocab_size}), true);
    return ps;
}

TextBatch TextBatch::from_examples(std::span<const Example> exs) {
    return from_examples_with_prefix(exs, {});
}

TextBatch TextBatch::from_examples_with_prefix(std::span<const Example> exs,
                                               std::span<const std::vector<int64_t>> prefixes) {
    if (exs.empty()) throw std::invalid_argument("batch: no examples");
    if (!prefixes.empty() && prefixes.size() != exs.size())
        throw std::invalid_argument("batch: prefix count mismatch");
    TextBatch tb;
    tb.batch = static_cast<int64_t>(exs.size());
    size_t maxlen = 0;
    for (size_t i = 0; i < exs.size(); ++i) {
        size_t l = exs[i].input_ids.size() + (prefixes.empty() ? 0 : prefixes[i].size());
        maxlen = std::max(maxlen, l);
    }
    tb.len = static_cast<int64_t>(maxlen);
    tb.ids.assign(static_cast<size_t>(tb.batch * tb.len), Vocab::kPad);
    tb.targets.assign(static_cast<size_t>(tb.batch * tb.len), Vocab::kPad);
    tb.mask.assign(static_cast<size_t>(tb.batch * tb.len), 0);
    for (size_t i = 0; i < exs.size(); ++i) {
        size_t off = static_cast<size_t>(tb.len) * i;
        size_t pre = 0;
        if (!prefixes.empty()) {
            pre = prefixes[i].size();
            std::copy(prefixes[i].begin(), prefixes[i].end(), tb.ids.begin() + static_cast<int64_t>(off));
        }
        const Example& ex = exs[i];
        for (size_t j = 0; j < ex.input_ids.size(); ++j) {
            tb.ids[off + pre + j] = ex.input_ids[j];
            tb.targets[off + pre + j] = ex.target_ids[j];
            tb.mask[off + pre + j] = ex.loss_mask[j];
        }
    }
    return tb;
}

NodeId ModelGraph::param(const ParamSet& ps, const std::string& name) const {
    for (size_t i = 0; i < ps.tensors.size(); ++i)
        if (ps.tensors[i].name == name) return params[i];
    throw std::out_of_range("params: no tensor named '" + name + "'");
}

ModelGraph stage_params(Tape& tape, const ParamSet& ps) {
    ModelGraph g;
    g.config = ps.config;
    for (const auto& t : ps.tensors) {
        NodeId id = tape.leaf(t.value, t.trainable);
        g.params.push_back(id);
        if (t.trainable) g.trainable.push_back(id);
    }
    return g;
}

ModelGraph stage_params_from(Tape& tape, const ParamSet& base, std::span<const double> trainable_flat) {
    ParamSet tmp = base;
    tmp.unflatten_trainable(trainable_flat);
    return stage_params(tape, tmp);
}

NodeId embed_tokens(Tape& tape, const ModelGraph& g, const ParamSet& ps,
                    std::span<const int64_t> ids, int64_t batch, int64_t len) {
    for (int64_t id : ids)
        if (id < 0 || id >= g.config.vocab_size)
            throw std::invalid_argument("embed: token id out of range");
    auto idx = std::make_shared<std::vector<int64_t>>(ids.begin(), ids.end());
    NodeId flat = tape.gather_rows(g.param(ps, "embed"), idx);
    return tape.reshape(flat, {batch, len, g.config.d_model});
}

Tensor embed_tokens(const ParamSet& ps, std::span<const int64_t> ids) {
    const Tensor& table = ps.get("embed");
    const int64_t d = ps.config.d_model;
    Tensor out({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= ps.config.vocab_size)
            throw std::invalid_argument("embed: token id out of range");
        std::memcpy(out.data.data() + static_cast<int64_t>(i) * d, table.data.data() + ids[i] * d,
                    static_cast<size_t>(d) * sizeof(double));
    }
    return out;
}

NodeId concat_prompt(Tape& tape, const ModelConfig& cfg, NodeId prompt, NodeId text_embeds) {
    const Shape& sp = tape.val(prompt).shape;
    const Shape& st = tape.val(text_embeds).shape;
    if (sp.size() != 3 || st.size() != 3 || sp[0] != st[0] || sp[2] != st[2])
        throw std::invalid_argument("concat_prompt: incompatible shapes");
    if (sp[1] + st[1] > cfg.context_len)
        throw std::invalid_argument("concat_prompt: sequence length " +
                                    std::to_string(sp[1] + st[1]) + " exceeds context length " +
                                    std::to_string(cfg.context_len));
    if (sp[1] == 0) return text_embeds;
    return tape.concat_dim1(prompt, text_embeds);
}

Tensor sinusoidal_positions(int64_t len, int64_t dim, int64_t first_position) {
    Tensor pe({len, dim});
    for (int64_t row = 0; row < len; ++row)
        for (int64_t i = 0; i < dim; ++i) {
            const double angle =
                static_cast<double>(row + first_position) /
                std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            pe.at(row * dim + i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

NodeId forward_logits(Tape& tape, const ModelGraph& g, const ParamSet& ps, NodeId input_embeds,
                      int64_t prompt_len) {
    const ModelConfig& cfg = g.config;
    const Shape& s = tape.val(input_embeds).shape;
    if (s.size() != 3) throw std::invalid_argument("forward: input must be (B,S,d)");
    const int64_t B = s[0], S = s[1], d = cfg.d_model;
    if (S > cfg.context_len)
        throw std::invalid_argument("forward: sequence length exceeds context length");
    const int64_t H = cfg.n_heads;
    const int64_t dh = d / H;

    // positions + causal mask as constants for this sequence length
    Tensor pos({B, S, d});
    {
        Tensor pe = sinusoidal_positions(S, d, -prompt_len);
        for (int64_t b = 0; b < B; ++b)
            std::memcpy(pos.data.data() + b * S * d, pe.data.data(),
                        static_cast<size_t>(S * d) * sizeof(double));
    }
    Tensor causal({B * H, S, S});
    for (int64_t b = 0; b < B * H; ++b)
        for (int64_t i = 0; i < S; ++i)
            for (int64_t j = 0; j < S; ++j)
                causal.at((b * S + i) * S + j) = j <= i ? 0.0 : kMaskNegInf;

    NodeId x = tape.add(input_embeds, tape.constant(std::move(pos)));
    NodeId causal_c = tape.constant(std::move(causal));

    auto p = [&](const std::string& name) { return g.param(ps, name); };
    const bool lora = cfg.adapter_rank > 0;

    for (int64_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        auto ad = [&](const std::string& stem, const char* which) {
            return lora ? p(pre + stem + (std::strcmp(which, "a") == 0 ? ".lora_a" : ".lora_b")) : -1;
        };
        // attention
        NodeId h = rmsnorm(tape, x, p(pre + "norm1.gain"), d);
        NodeId h2 = tape.reshape(h, {B * S, d});
        NodeId q = tape.reshape(linear(tape, h2, p(pre + "attn.wq"), ad("attn.wq", "a"), ad("attn.wq", "b")), {B, S, d});
        NodeId k = tape.reshape(linear(tape, h2, p(pre + "attn.wk"), ad("attn.wk", "a"), ad("attn.wk", "b")), {B, S, d});
        NodeId v = tape.reshape(linear(tape, h2, p(pre + "attn.wv"), ad("attn.wv", "a"), ad("attn.wv", "b")), {B, S, d});
        NodeId qh = tape.split_heads(q, H);
        NodeId kh = tape.split_heads(k, H);
        NodeId vh = tape.split_heads(v, H);
        NodeId scores = tape.cmul(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        NodeId masked = tape.add(scores, causal_c);
        NodeId probs = tape.exp(tape.sub(masked, tape.bcast_last(tape.logsumexp(masked), S)));
        NodeId ctx = tape.merge_heads(tape.matmul(probs, vh), H);
        NodeId attn_out = tape.reshape(
            linear(tape, tape.reshape(ctx, {B * S, d}), p(pre + "attn.wo"), ad("attn.wo", "a"), ad("attn.wo", "b")),
            {B, S, d});
        x = tape.add(x, attn_out);
        // feed-forward
        NodeId h3 = rmsnorm(tape, x, p(pre + "norm2.gain"), d);
        NodeId a1 = linear(tape, tape.reshape(h3, {B * S, d}), p(pre + "ffn.w1"), ad("ffn.w1", "a"), ad("ffn.w1", "b"));
        a1 = tape.add(a1, tape.tile_lead(p(pre + "ffn.b1"), {B * S, cfg.d_ff}));
        NodeId act = tape.tanh(a1);
        NodeId a2 = linear(tape, act, p(pre + "ffn.w2"), ad("ffn.w2", "a"), ad("ffn.w2", "b"));
        a2 = tape.add(a2, tape.tile_lead(p(pre + "ffn.b2"), {B * S, d}));
        x = tape.add(x, tape.reshape(a2, {B, S, d}));
    }

    NodeId xn = rmsnorm(tape, x, p("final_norm.gain"), d);
    return tape.matmul(tape.reshape(xn, {B * S, d}), p("head.w"));
}

NodeId lm_loss(Tape& tape, const ModelGraph& g, const ParamSet& ps, NodeId prompt,
               const TextBatch& batch) {
    const ModelConfig& cfg = g.config;
    const int64_t B = batch.batch, L = batch.len;
    const int64_t k = prompt >= 0 ? tape.val(prompt).dim(1) : 0;
    const int64_t S = k + L;

    NodeId text = embed_tokens(tape, g, ps, batch.ids, B, L);
    NodeId full = prompt >= 0 ? concat_prompt(tape, cfg, prompt, text) : text;
    if (S > cfg.context_len)
        throw std::invalid_argument("lm_loss: sequence length exceeds context length");
    NodeId logits = forward_logits(tape, g, ps, full, k);  // (B*S, V)

    // per-row target column; prompt rows use a dummy id and are masked out
    auto cols = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * S), int64_t{0});
    Tensor maskt({B * S, 1});
    int64_t n_mask = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < L; ++j) {
            const size_t src = static_cast<size_t>(b * L + j);
            const size_t row = static_cast<size_t>(b * S + k + j);
            (*cols)[row] = batch.targets[src];
            if (batch.mask[src]) {
                maskt.at(static_cast<int64_t>(row)) = 1.0;
                ++n_mask;
            }
        }
    if (n_mask == 0) throw std::invalid_argument("lm_loss: no mask-true positions");

    NodeId lse = tape.logsumexp(logits);
    NodeId sel = tape.select_cols(logits, cols);
    NodeId ce = tape.sub(lse, sel);
    NodeId masked = tape.mul(ce, tape.constant(std::move(maskt)));
    return tape.cmul(tape.sum_all(masked), 1.0 / static_cast<double>(n_mask));
}

double sgd_step(ParamSet& params, const TextBatch& batch, const Tensor* prompt, double lr) {
    Tape tape;
    ModelGraph g = stage_params(tape, params);
    NodeId p = -1;
    if (prompt != nullptr) p = tape.constant(*prompt);
    NodeId loss = lm_loss(tape, g, params, p, batch);
    const double loss_val = tape.val(loss).at(0);
    if (lr != 0.0) {
        auto grads = tape.grad(loss, g.trainable);
        size_t ti = 0;
        for (auto& t : params.tensors) {
            if (!t.trainable) continue;
            const Tensor& gv = tape.val(grads.at(g.trainable[ti++]));
            for (size_t i = 0; i < t.value.data.size(); ++i) t.value.data[i] -= lr * gv.data[i];
        }
    }
    return loss_val;
}

double eval_loss(const ParamSet& params, const TextBatch& batch, const Tensor* prompt) {
    Tape tape;
    ModelGraph g = stage_params(tape, params);
    NodeId p = -1;
    if (prompt != nullptr) p = tape.constant(*prompt);
    NodeId loss = lm_loss(tape, g, params, p, batch);
    return tape.val(loss).at(0);
}

}  // namespace nacd
