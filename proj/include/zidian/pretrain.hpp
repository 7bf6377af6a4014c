#pragma once
// The combined optimization loop over the three dictionary objectives, and
// the post-training measurements used to judge a run: masked-entry
// recovery, EL retrieval accuracy, and the synonym/negative similarity gap.

#include <functional>
#include <vector>

#include "zidian/adamw.hpp"
#include "zidian/objectives.hpp"

namespace zidian {

template <typename S>
struct PretrainSetup {
    const Lexicon* lex = nullptr;
    SequenceEncoder<S> enc;
    LossWeights weights;
    BatchConfig batch;
    AdamWConfig opt;
    double warmup_ratio = 0.05;
    int steps = 0;
    uint64_t seed = 42;
};

// Runs `steps` combined steps and returns the per-step reports. The
// optional callback sees every report as it is produced (logging,
// checkpoint cadence).
template <typename S>
std::vector<LossReport> run_pretraining(
    const PretrainSetup<S>& setup,
    const std::function<void(const LossReport&)>& on_step = {}) {
    ZIDIAN_REQUIRE(setup.lex && setup.enc.model, "run_pretraining: setup is incomplete");
    ZIDIAN_REQUIRE(setup.steps > 0, "run_pretraining: steps must be positive");
    BatchStream stream(*setup.lex, setup.batch, setup.seed);
    AdamW<S> opt(setup.enc.model->params(), setup.opt);
    std::vector<LossReport> log;
    log.reserve(static_cast<size_t>(setup.steps));
    for (int step = 0; step < setup.steps; ++step) {
        const double lr = warmup_lr(setup.opt.lr, step, setup.steps, setup.warmup_ratio);
        PretrainBatch batch = stream.next();
        LossReport report = combined_step(batch, *setup.lex, setup.enc, setup.weights, opt, lr);
        report.step = step + 1;
        if (on_step) on_step(report);
        log.push_back(report);
    }
    return log;
}

// Fraction of (entry, sense) items whose masked entry is fully recovered
// by argmax at every masked position.
template <typename S>
double mem_recovery_rate(const Lexicon& lex, const SequenceEncoder<S>& enc) {
    size_t total = 0, hit = 0;
    for (const DictEntry& e : lex.entries()) {
        for (size_t s = 0; s < e.senses.size(); ++s) {
            ++total;
            if (mem_recovers(e, static_cast<int>(s), enc)) ++hit;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

// Fraction of EL items whose attention argmax equals the gold sense.
template <typename S>
double el_retrieval_accuracy(const Lexicon& lex, const SequenceEncoder<S>& enc,
                             const std::vector<ELItem>& items) {
    if (items.empty()) return 0.0;
    size_t hit = 0;
    for (const ELItem& item : items) {
        ELResult<S> r = el_loss(item, lex, enc);
        int best = 0;
        for (int64_t k = 1; k < r.attention.numel(); ++k)
            if (r.attention.data()[k] > r.attention.data()[best]) best = static_cast<int>(k);
        if (best == item.gold) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(items.size());
}

struct SimilarityGap {
    double mean_positive = 0;
    double mean_negative = 0;
    size_t pairs = 0;
};

// Mean [CLS] dot-product similarity of (entry, synonym) vs (entry,
// negative) over one deterministic pass of contrast pairs.
template <typename S>
SimilarityGap similarity_gap(const Lexicon& lex, const SequenceEncoder<S>& enc,
                             const std::vector<ContrastPair>& pairs) {
    SimilarityGap gap;
    for (const ContrastPair& p : pairs) {
        auto [a, b] = cl4sa_similarities(p, lex, enc);
        gap.mean_positive += a;
        gap.mean_negative += b;
        ++gap.pairs;
    }
    if (gap.pairs) {
        gap.mean_positive /= static_cast<double>(gap.pairs);
        gap.mean_negative /= static_cast<double>(gap.pairs);
    }
    return gap;
}

// One deterministic contrast pair per (entry, synonym) in the lexicon.
inline std::vector<ContrastPair> enumerate_contrast_pairs(const Lexicon& lex,
                                                          const BatchConfig& cfg,
                                                          uint64_t seed) {
    BatchStream stream(lex, cfg, seed);
    std::vector<ContrastPair> out;
    for (size_t i = 0; i < lex.size(); ++i) {
        for (const std::string& syn : lex.entry(i).synonyms)
            out.push_back(stream.draw_pair(static_cast<int>(i), syn));
    }
    return out;
}

}  // namespace zidian
