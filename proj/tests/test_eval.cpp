#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "nacd/eval.hpp"
#include "nacd/transfer.hpp"

using namespace nacd;
using testutil::rel_err;

namespace {

ModelConfig small_config(uint64_t init_seed = 9) {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.d_model = 16;
    cfg.context_len = 16;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.init_seed = init_seed;
    return cfg;
}

void scramble_head(ParamSet& ps, uint64_t seed) {
    Rng rng(seed);
    for (auto& v : ps.get_mut("head.w").data) v = rng.next_normal() * 0.5;
}

}  // namespace

TEST_CASE("uniform logits predict candidate 0 by the tie rule") {
    // zero-initialized head gives equal likelihood to every candidate of
    // equal length, so the lowest index wins every item
    ParamSet ps = init_params(small_config());
    auto data = generate_toy_corpus(3, 16, 40, TaskFamily::Pattern);
    size_t gold_zero = 0;
    for (const auto& mc : data.mc_items) gold_zero += mc.gold == 0 ? 1 : 0;
    const double acc = mc_accuracy(ps, data.mc_items);
    CHECK(acc == doctest::Approx(static_cast<double>(gold_zero) / data.mc_items.size()).epsilon(1e-12));
}

TEST_CASE("candidate scores match a log-softmax oracle, padding included") {
    ParamSet ps = init_params(small_config());
    scramble_head(ps, 7);
    const int64_t V = ps.config.vocab_size;

    // one item, candidates of different lengths force internal padding
    MCItem item;
    item.context_ids = {1, 10, 11, 4};
    item.candidates = {{12, 13}, {9}, {14, 8, 2}};
    item.gold = 1;

    // oracle: score each candidate independently at its exact length
    auto score_candidate = [&](const std::vector<int64_t>& cand) {
        std::vector<int64_t> ids = item.context_ids;
        ids.insert(ids.end(), cand.begin(), cand.end());
        Tape tape;
        ModelGraph g = stage_params(tape, ps);
        NodeId emb = embed_tokens(tape, g, ps, ids, 1, static_cast<int64_t>(ids.size()));
        const Tensor& logits = tape.val(forward_logits(tape, g, ps, emb));
        const int64_t C = static_cast<int64_t>(item.context_ids.size());
        double acc = 0.0;
        for (size_t j = 0; j < cand.size(); ++j) {
            const double* row = logits.data.data() + (C - 1 + static_cast<int64_t>(j)) * V;
            double m = row[0];
            for (int64_t t = 1; t < V; ++t) m = std::max(m, row[t]);
            double z = 0.0;
            for (int64_t t = 0; t < V; ++t) z += std::exp(row[t] - m);
            acc += row[cand[j]] - (m + std::log(z));
        }
        return acc / static_cast<double>(cand.size());
    };
    std::vector<double> scores;
    for (const auto& c : item.candidates) scores.push_back(score_candidate(c));
    const size_t oracle_pick =
        static_cast<size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());

    std::vector<MCItem> items{item};
    const double acc = mc_accuracy(ps, items);
    CHECK(acc == (oracle_pick == item.gold ? 1.0 : 0.0));

    // flip the gold to the oracle pick: accuracy must become 1
    item.gold = oracle_pick;
    std::vector<MCItem> items2{item};
    CHECK(mc_accuracy(ps, items2) == 1.0);
}

TEST_CASE("a memorizing model scores perfectly on its training items") {
    auto data = generate_toy_corpus(17, 8, 4, TaskFamily::Pattern);
    // fine-tune heavily on 4 examples, then ask for exactly those
    std::vector<Example> four(data.corpus.examples.begin(), data.corpus.examples.end() - 4);
    four.resize(4);
    SelectedSubset sel;
    sel.indices = {0, 1, 2, 3};
    sel.examples = four;

    ParamSet ps = init_params(small_config());
    for (int i = 0; i < 150; ++i)
        ps = finetune(ps, sel, nullptr, nullptr, 1, 4, 0.5, static_cast<uint64_t>(i));

    // multiple-choice items asking for those answers
    std::vector<MCItem> items;
    for (const auto& ex : four) {
        MCItem mc;
        size_t ans_pos = 0;
        for (size_t i = 0; i < ex.loss_mask.size(); ++i)
            if (ex.loss_mask[i]) ans_pos = i;
        mc.context_ids.assign(ex.input_ids.begin(), ex.input_ids.begin() + static_cast<int64_t>(ans_pos) + 1);
        const int64_t answer = ex.target_ids[ans_pos];
        mc.candidates = {{answer}, {answer == 5 ? 6 : 5}, {answer == 7 ? 8 : 7}};
        mc.gold = 0;
        items.push_back(std::move(mc));
    }
    CHECK(mc_accuracy(ps, items) == 1.0);
}

TEST_CASE("mc_accuracy is invariant to item order") {
    ParamSet ps = init_params(small_config());
    scramble_head(ps, 19);
    auto data = generate_toy_corpus(23, 16, 12, TaskFamily::Pattern);
    auto reversed = data.mc_items;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(mc_accuracy(ps, data.mc_items) == mc_accuracy(ps, reversed));
}

TEST_CASE("mc_accuracy validates inputs") {
    ParamSet ps = init_params(small_config());
    std::vector<MCItem> none;
    CHECK_THROWS(mc_accuracy(ps, none));

    MCItem too_long;
    too_long.context_ids.assign(15, 5);
    too_long.candidates = {{6}, {7, 7, 7}};
    too_long.gold = 0;
    std::vector<MCItem> items{too_long};
    CHECK_THROWS(mc_accuracy(ps, items));
}

TEST_CASE("finetune with zero epochs returns the base parameters") {
    auto data = generate_toy_corpus(29, 16, 4, TaskFamily::Pattern);
    auto sel = select_random(data.corpus, 0.5, 1);
    ParamSet base = init_params(small_config());
    ParamSet out = finetune(base, sel, nullptr, nullptr, 0, 8, 0.2, 5);
    for (size_t i = 0; i < base.tensors.size(); ++i)
        CHECK(out.tensors[i].value.data == base.tensors[i].value.data);
}

TEST_CASE("finetune without prompts is exactly selection-only tuning") {
    auto data = generate_toy_corpus(29, 16, 4, TaskFamily::Pattern);
    auto sel = select_random(data.corpus, 0.5, 1);
    ParamSet base = init_params(small_config());

    // absent prompts and a zero-length prompt set take the identical path
    SyntheticPromptSet empty;
    empty.prompts = Tensor({static_cast<int64_t>(sel.examples.size()), 0, 16});
    ParamSet a = finetune(base, sel, nullptr, nullptr, 2, 4, 0.2, 5);
    ParamSet b = finetune(base, sel, &empty, nullptr, 2, 4, 0.2, 5);
    for (size_t i = 0; i < a.tensors.size(); ++i)
        CHECK(a.tensors[i].value.data == b.tensors[i].value.data);
}

TEST_CASE("decoded-then-embedded prompts equal the token-prefix path bit-exactly") {
    auto data = generate_toy_corpus(29, 24, 4, TaskFamily::Pattern);
    auto sel = select_random(data.corpus, 0.25, 1);
    ParamSet base = init_params(small_config());
    scramble_head(base, 3);

    // arbitrary learned prompts, quantized to token ids
    Rng rng(31);
    SyntheticPromptSet syn;
    syn.prompts = Tensor({static_cast<int64_t>(sel.examples.size()), 2, 16});
    for (auto& v : syn.prompts.data) v = rng.next_normal() * 0.4;
    auto decoded = decode_prompts(syn, toy_vocab(), base.get("embed"));
    auto reenc = reencode(decoded, toy_vocab());
    REQUIRE(reenc.miss_count == 0);

    // embedding-consistent path: embed the decoded ids, pass as prompts
    SyntheticPromptSet quantized = syn;
    for (size_t i = 0; i < decoded.size(); ++i)
        for (size_t j = 0; j < decoded[i].tokens.size(); ++j) {
            const int64_t id = decoded[i].tokens[j].id;
            std::copy(base.get("embed").data.begin() + id * 16,
                      base.get("embed").data.begin() + (id + 1) * 16,
                      quantized.prompts.data.begin() +
                          (static_cast<int64_t>(i) * 2 + static_cast<int64_t>(j)) * 16);
        }

    ParamSet via_embeds = finetune(base, sel, &quantized, nullptr, 2, 4, 0.2, 9);
    ParamSet via_tokens = finetune(base, sel, nullptr, &reenc.prefixes, 2, 4, 0.2, 9);
    for (size_t i = 0; i < via_embeds.tensors.size(); ++i)
        CHECK(via_embeds.tensors[i].value.data == via_tokens.tensors[i].value.data);
}

TEST_CASE("run_matrix reports all four methods over shared data") {
    auto data = generate_toy_corpus(37, 32, 8, TaskFamily::Pattern);
    auto sel = select_random(data.corpus, 0.25, 2);
    ParamSet base = init_params(small_config());
    SyntheticPromptSet syn = init_synthetic(static_cast<int64_t>(sel.examples.size()),
                                            base.get("embed"), 2, 0.05);
    MatrixConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.lr = 0.2;
    cfg.seeds = {4, 5};
    cfg.fraction = 0.25;
    cfg.threads = 2;

    auto reports = run_matrix(data, base, sel, &syn, cfg);
    REQUIRE(reports.size() == 4);
    CHECK(reports[0].method == "baseline");
    CHECK(reports[1].method == "full");
    CHECK(reports[2].method == "selection");
    CHECK(reports[3].method == "nacd");
    for (const auto& r : reports) {
        CHECK(r.seeds == std::vector<uint64_t>{4, 5});
        REQUIRE(r.accuracies.size() == 2);
        for (double a : r.accuracies) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
        const double mean = (r.accuracies[0] + r.accuracies[1]) / 2.0;
        CHECK(r.mean == doctest::Approx(mean).epsilon(1e-15));
    }
    // the baseline is untrained: identical accuracy for every seed
    CHECK(reports[0].accuracies[0] == reports[0].accuracies[1]);
    CHECK(reports[0].stddev == 0.0);

    // single-threaded run gives identical numbers
    cfg.threads = 1;
    auto serial = run_matrix(data, base, sel, &syn, cfg);
    for (size_t i = 0; i < reports.size(); ++i)
        CHECK(serial[i].accuracies == reports[i].accuracies);

    const std::string table = report_table(reports);
    CHECK(table.find("baseline") != std::string::npos);
    CHECK(table.find("nacd") != std::string::npos);
}
