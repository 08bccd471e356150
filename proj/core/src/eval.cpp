#include "nacd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nacd/rng.hpp"

namespace nacd {

namespace {

Tensor prompt_rows(const Tensor& bank, std::span<const size_t> picks) {
    const int64_t k = bank.dim(1);
    const int64_t d = bank.dim(2);
    Tensor out({static_cast<int64_t>(picks.size()), k, d});
    for (size_t i = 0; i < picks.size(); ++i)
        std::memcpy(out.data.data() + static_cast<int64_t>(i) * k * d,
                    bank.data.data() + static_cast<int64_t>(picks[i]) * k * d,
                    static_cast<size_t>(k * d) * sizeof(double));
    return out;
}

}  // namespace

ParamSet finetune(const ParamSet& base, const SelectedSubset& data, const SyntheticPromptSet* syn,
                  const std::vector<std::vector<int64_t>>* prefixes, int64_t epochs,
                  int64_t batch_size, double lr, uint64_t seed) {
    if (syn && prefixes) throw std::invalid_argument("finetune: give prompts or prefixes, not both");
    if (data.examples.empty()) throw std::invalid_argument("finetune: empty subset");
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("finetune: bad epochs/batch");
    const size_t n = data.examples.size();

    // one prompt bank per example, fixed for the whole fine-tune; token
    // prefixes are embedded once with this model's own table
    Tensor bank;
    bool have_prompts = false;
    if (syn && syn->prompt_len() > 0) {
        if (static_cast<size_t>(syn->n_samples()) != n)
            throw std::invalid_argument("finetune: prompt count does not match subset");
        bank = syn->prompts;
        have_prompts = true;
    } else if (prefixes) {
        if (prefixes->size() != n) throw std::invalid_argument("finetune: prefix count mismatch");
        const int64_t k = prefixes->empty() ? 0 : static_cast<int64_t>((*prefixes)[0].size());
        for (const auto& p : *prefixes)
            if (static_cast<int64_t>(p.size()) != k)
                throw std::invalid_argument("finetune: ragged prefixes");
        if (k > 0) {
            bank = Tensor({static_cast<int64_t>(n), k, base.config.d_model});
            for (size_t i = 0; i < n; ++i) {
                Tensor rows = embed_tokens(base, (*prefixes)[i]);
                std::memcpy(bank.data.data() + static_cast<int64_t>(i) * k * base.config.d_model,
                            rows.data.data(), rows.data.size() * sizeof(double));
            }
            have_prompts = true;
        }
    }

    ParamSet ps = base;
    Rng rng(seed ^ 0x66696e6574756eULL);
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        auto order = rng.permutation(n);
        for (size_t off = 0; off < n; off += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(n, off + static_cast<size_t>(batch_size));
            std::vector<Example> exs;
            exs.reserve(end - off);
            for (size_t i = off; i < end; ++i) exs.push_back(data.examples[order[i]]);
            Tensor prompt;
            if (have_prompts)
                prompt = prompt_rows(bank, std::span<const size_t>(order.data() + off, end - off));
            const double loss = sgd_step(ps, TextBatch::from_examples(exs),
                                         have_prompts ? &prompt : nullptr, lr);
            if (!std::isfinite(loss))
                throw std::runtime_error("finetune: non-finite loss at epoch " + std::to_string(epoch));
        }
    }
    return ps;
}

double mc_accuracy(const ParamSet& params, std::span<const MCItem> items) {
    if (items.empty()) throw std::invalid_argument("mc_accuracy: no items");
    const int64_t V = params.config.vocab_size;
    size_t correct = 0;

    for (const auto& item : items) {
        const int64_t C = static_cast<int64_t>(item.context_ids.size());
        int64_t maxm = 0;
        for (const auto& cand : item.candidates)
            maxm = std::max(maxm, static_cast<int64_t>(cand.size()));
        const int64_t S = C + maxm;
        if (S > params.config.context_len)
            throw std::invalid_argument("mc_accuracy: candidate exceeds context length");
        const int64_t B = static_cast<int64_t>(item.candidates.size());

        std::vector<int64_t> ids(static_cast<size_t>(B * S), Vocab::kPad);
        for (int64_t c = 0; c < B; ++c) {
            std::copy(item.context_ids.begin(), item.context_ids.end(), ids.begin() + c * S);
            const auto& cand = item.candidates[static_cast<size_t>(c)];
            std::copy(cand.begin(), cand.end(), ids.begin() + c * S + C);
        }

        Tape tape;
        ModelGraph g = stage_params(tape, params);
        NodeId emb = embed_tokens(tape, g, params, ids, B, S);
        const Tensor& logits = tape.val(forward_logits(tape, g, params, emb));  // (B*S, V)

        size_t best = 0;
        double best_score = 0.0;
        for (int64_t c = 0; c < B; ++c) {
            const auto& cand = item.candidates[static_cast<size_t>(c)];
            double acc = 0.0;
            for (size_t j = 0; j < cand.size(); ++j) {
                const int64_t row = c * S + C - 1 + static_cast<int64_t>(j);
                const double* lrow = logits.data.data() + row * V;
                double m = lrow[0];
                for (int64_t t = 1; t < V; ++t) m = std::max(m, lrow[t]);
                double z = 0.0;
                for (int64_t t = 0; t < V; ++t) z += std::exp(lrow[t] - m);
                acc += lrow[cand[j]] - (m + std::log(z));
            }
            const double score = acc / static_cast<double>(cand.size());
            if (c == 0 || score > best_score) {  // strict: ties keep the lowest index
                best = static_cast<size_t>(c);
                best_score = score;
            }
        }
        if (best == item.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<RunReport> run_matrix(const ToyData& data, const ParamSet& base,
                                  const SelectedSubset& selected, const SyntheticPromptSet* syn,
                                  const MatrixConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("run_matrix: need at least one seed");

    SelectedSubset full;
    full.indices.resize(data.corpus.size());
    for (size_t i = 0; i < data.corpus.size(); ++i) full.indices[i] = i;
    full.examples = data.corpus.examples;

    struct Cell {
        std::string method;
        uint64_t seed;
        double accuracy = 0.0;
    };
    std::vector<Cell> cells;
    for (uint64_t s : cfg.seeds) {
        cells.push_back({"baseline", s});
        cells.push_back({"full", s});
        cells.push_back({"selection", s});
        if (syn) cells.push_back({"nacd", s});
    }

    auto run_cell = [&](Cell& cell) {
        if (cell.method == "baseline") {
            cell.accuracy = mc_accuracy(base, data.mc_items);
        } else if (cell.method == "full") {
            ParamSet ps = finetune(base, full, nullptr, nullptr, cfg.epochs, cfg.batch_size, cfg.lr,
                                   cell.seed);
            cell.accuracy = mc_accuracy(ps, data.mc_items);
        } else if (cell.method == "selection") {
            ParamSet ps = finetune(base, selected, nullptr, nullptr, cfg.epochs, cfg.batch_size,
                                   cfg.lr, cell.seed);
            cell.accuracy = mc_accuracy(ps, data.mc_items);
        } else {
            ParamSet ps = finetune(base, selected, syn, nullptr, cfg.epochs, cfg.batch_size, cfg.lr,
                                   cell.seed);
            cell.accuracy = mc_accuracy(ps, data.mc_items);
        }
    };

    const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(cells.size())));
    if (workers == 1) {
        for (auto& c : cells) run_cell(c);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mu;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (size_t i = static_cast<size_t>(w); i < cells.size(); i += static_cast<size_t>(workers)) {
                    try {
                        run_cell(cells[i]);
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

    std::vector<RunReport> reports;
    std::vector<std::string> methods{"baseline", "full", "selection"};
    if (syn) methods.push_back("nacd");
    for (const auto& method : methods) {
        RunReport r;
        r.method = method;
        r.data_fraction = method == "baseline" ? 0.0 : method == "full" ? 1.0 : cfg.fraction;
        r.config_hash = cfg.config_hash;
        for (const auto& c : cells)
            if (c.method == method) {
                r.seeds.push_back(c.seed);
                r.accuracies.push_back(c.accuracy);
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
    return reports;
}

std::string report_table(std::span<const RunReport> reports) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %7s %10s %10s  %s\n", "method", "data%", "mean",
                  "std", "per-seed");
    os << line;
    for (const auto& r : reports) {
        std::string per;
        for (size_t i = 0; i < r.accuracies.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s%.4f", i ? " " : "", r.accuracies[i]);
            per += buf;
        }
        std::snprintf(line, sizeof(line), "%-10s %6.1f%% %10.4f %10.4f  %s\n", r.method.c_str(),
                      r.data_fraction * 100.0, r.mean, r.stddev, per.c_str());
        os << line;
    }
    return os.str();
}

}  // namespace nacd
