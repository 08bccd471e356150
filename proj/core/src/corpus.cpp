#include "nacd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "nacd/rng.hpp"

namespace nacd {

namespace {

constexpr int64_t kQry = 4;
constexpr size_t kNumSymbols = 24;
constexpr size_t kLexicon = 12;

const int64_t kSymBase = 5;                               // 24 pattern symbols
const int64_t kPosBase = kSymBase + kNumSymbols;          // 12 positive words
const int64_t kNegBase = kPosBase + kLexicon;             // 12 negative words
const int64_t kPosAns = kNegBase + kLexicon;              // "positive"
const int64_t kNegAns = kPosAns + 1;                      // "negative"

std::vector<std::string> toy_tokens() {
    std::vector<std::string> t = {"<pad>", "<bos>", "<eos>", "<unk>", "=>"};
    const char* syms[kNumSymbols] = {"apple", "stone", "river", "cloud", "tiger", "moon",
                                     "leaf",  "iron",  "glass", "sand",  "wolf",  "pearl",
                                     "oak",   "flame", "snow",  "crow",  "maple", "amber",
                                     "ridge", "fern",  "dusk",  "coral", "thorn", "brook"};
    const char* pos[kLexicon] = {"great", "good",   "fine",  "nice", "super", "happy",
                                 "bright", "fresh", "calm",  "neat", "pure",  "warm"};
    const char* neg[kLexicon] = {"bad",   "poor",   "awful", "sad",  "gloomy", "dull",
                                 "broken", "sour",  "weak",  "harsh", "gray",  "lost"};
    t.insert(t.end(), syms, syms + kNumSymbols);
    t.insert(t.end(), pos, pos + kLexicon);
    t.insert(t.end(), neg, neg + kLexicon);
    t.emplace_back("positive");
    t.emplace_back("negative");
    while (t.size() < 64) t.push_back("fill" + std::to_string(t.size()));
    return t;
}

struct Rendered {
    Example ex;
    MCItem mc;
};

Example make_example(const std::vector<int64_t>& body, int64_t answer) {
    // sequence: <bos> body... => answer <eos>
    std::vector<int64_t> seq;
    seq.reserve(body.size() + 4);
    seq.push_back(Vocab::kBos);
    seq.insert(seq.end(), body.begin(), body.end());
    seq.push_back(kQry);
    seq.push_back(answer);
    seq.push_back(Vocab::kEos);

    Example ex;
    ex.input_ids.assign(seq.begin(), seq.end() - 1);
    ex.target_ids.assign(seq.begin() + 1, seq.end());
    ex.loss_mask.assign(ex.input_ids.size(), 0);
    ex.loss_mask[body.size() + 1] = 1;  // the answer position only
    return ex;
}

MCItem make_mc(const std::vector<int64_t>& body, int64_t answer,
               const std::vector<int64_t>& distractors, size_t gold) {
    MCItem mc;
    mc.context_ids.push_back(Vocab::kBos);
    mc.context_ids.insert(mc.context_ids.end(), body.begin(), body.end());
    mc.context_ids.push_back(kQry);
    mc.candidates.resize(distractors.size() + 1);
    size_t di = 0;
    for (size_t i = 0; i < mc.candidates.size(); ++i)
        mc.candidates[i] = {i == gold ? answer : distractors[di++]};
    mc.gold = gold;
    return mc;
}

Rendered render_pattern(Rng& rng, size_t gold_slot) {
    const size_t period = 2 + static_cast<size_t>(rng.next_below(2));
    auto perm = rng.permutation(kNumSymbols);
    std::vector<int64_t> pat(period);
    for (size_t i = 0; i < period; ++i) pat[i] = kSymBase + static_cast<int64_t>(perm[i]);

    const size_t m = 6 + static_cast<size_t>(rng.next_below(2));
    std::vector<int64_t> body(m);
    for (size_t i = 0; i < m; ++i) body[i] = pat[i % period];
    const int64_t answer = pat[m % period];

    // 3 distractors drawn from symbols outside the pattern
    std::vector<int64_t> distractors;
    for (size_t i = period; distractors.size() < 3; ++i)
        distractors.push_back(kSymBase + static_cast<int64_t>(perm[i]));

    Rendered r;
    r.ex = make_example(body, answer);
    r.mc = make_mc(body, answer, distractors, gold_slot % 4);
    return r;
}

Rendered render_polarity(Rng& rng, size_t gold_slot) {
    const bool positive = rng.next_below(2) == 0;
    const size_t majority = 3 + static_cast<size_t>(rng.next_below(3));  // 3..5 of 5
    const int64_t maj_base = positive ? kPosBase : kNegBase;
    const int64_t min_base = positive ? kNegBase : kPosBase;

    std::vector<int64_t> body;
    for (size_t i = 0; i < majority; ++i)
        body.push_back(maj_base + static_cast<int64_t>(rng.next_below(kLexicon)));
    for (size_t i = majority; i < 5; ++i)
        body.push_back(min_base + static_cast<int64_t>(rng.next_below(kLexicon)));
    auto order = rng.permutation(body.size());
    std::vector<int64_t> shuffled(body.size());
    for (size_t i = 0; i < body.size(); ++i) shuffled[i] = body[order[i]];

    const int64_t answer = positive ? kPosAns : kNegAns;
    const int64_t other = positive ? kNegAns : kPosAns;

    Rendered r;
    r.ex = make_example(shuffled, answer);
    r.mc = make_mc(shuffled, answer, {other}, gold_slot % 2);
    return r;
}

}  // namespace

TaskFamily task_from_string(const std::string& name) {
    if (name == "pattern") return TaskFamily::Pattern;
    if (name == "polarity") return TaskFamily::Polarity;
    throw std::invalid_argument("config error: unknown task family '" + name + "'");
}

std::string task_to_string(TaskFamily t) {
    return t == TaskFamily::Pattern ? "pattern" : "polarity";
}

const Vocab& toy_vocab() {
    static const Vocab v = Vocab::from_tokens(toy_tokens());
    return v;
}

ToyData generate_toy_corpus(uint64_t seed, size_t n_train, size_t n_eval, TaskFamily task) {
    if (n_train < 8) throw std::invalid_argument("config error: n_train must be >= 8");
    if (n_eval < 4) throw std::invalid_argument("config error: n_eval must be >= 4");

    Rng rng(seed ^ 0x746f79636f727075ULL);
    ToyData out;
    out.task = task;
    out.corpus.seed = seed;
    out.corpus.examples.reserve(n_train);
    out.mc_items.reserve(n_eval);

    for (size_t i = 0; i < n_train + n_eval; ++i) {
        const size_t gold_slot = i >= n_train ? i - n_train : i;
        Rendered r = task == TaskFamily::Pattern ? render_pattern(rng, gold_slot)
                                                 : render_polarity(rng, gold_slot);
        if (i < n_train)
            out.corpus.examples.push_back(std::move(r.ex));
        else
            out.mc_items.push_back(std::move(r.mc));
    }
    return out;
}

SelectedSubset select_random(const Corpus& corpus, double fraction, uint64_t seed) {
    if (corpus.examples.empty()) throw std::invalid_argument("select_random: empty corpus");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("select_random: fraction must be in (0,1]");
    const size_t n = corpus.size();
    size_t m = static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));
    if (m < 1) m = 1;
    if (m > n) m = n;

    Rng rng(seed ^ 0x73656c656374ULL);
    SelectedSubset s;
    s.indices = rng.sample_without_replacement(n, m);
    s.examples.reserve(m);
    for (size_t i : s.indices) s.examples.push_back(corpus.examples[i]);
    return s;
}

SelectedSubset select_by_scores(const Corpus& corpus, const std::vector<double>& scores,
                                double fraction) {
    if (corpus.examples.empty()) throw std::invalid_argument("select_by_scores: empty corpus");
    if (scores.size() != corpus.size())
        throw std::invalid_argument("format error: score count " + std::to_string(scores.size()) +
                                    " does not match corpus size " + std::to_string(corpus.size()));
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("select_by_scores: fraction must be in (0,1]");
    const size_t n = corpus.size();
    size_t m = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
    if (m < 1) m = 1;
    if (m > n) m = n;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(m);
    std::sort(order.begin(), order.end());

    SelectedSubset s;
    s.indices = std::move(order);
    s.examples.reserve(m);
    for (size_t i : s.indices) s.examples.push_back(corpus.examples[i]);
    return s;
}

SelectedSubset select_by_scores(const Corpus& corpus, const std::string& score_path,
                                double fraction) {
    std::ifstream in(score_path);
    if (!in) throw std::runtime_error("missing artifact: score file '" + score_path + "'");
    std::vector<double> scores;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t pos = 0;
        double v;
        try {
            v = std::stod(line, &pos);
        } catch (const std::exception&) {
            throw std::runtime_error("format error: bad score line '" + line + "'");
        }
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\r' || line[pos] == '\t')) ++pos;
        if (pos != line.size())
            throw std::runtime_error("format error: bad score line '" + line + "'");
        scores.push_back(v);
    }
    return select_by_scores(corpus, scores, fraction);
}

}  // namespace nacd
