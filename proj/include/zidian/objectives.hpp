#pragma once
// The three dictionary pre-training objectives and the combined step.
//
//   MEM    mask every character of the entry in {[CLS] ent [SEP] def [SEP]}
//          and recover it (whole-word masking, cross-entropy at the masked
//          positions).
//   CL4SA  pull entry/synonym [CLS] representations together, push the
//          entry/negative pair apart: weight * log(1 + exp(b - a)) with
//          a, b the dot products against positive and negative.
//   EL     attend with the example's [CLS] over the sense definitions'
//          [CLS] vectors and cross-entropy against the gold sense.
//
// Batch construction derives every random decision from named substreams
// of the run seed, so disabling one objective never shifts the randomness
// seen by another.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zidian/adamw.hpp"
#include "zidian/dict.hpp"
#include "zidian/encoder.hpp"
#include "zidian/rng.hpp"
#include "zidian/tensor.hpp"
#include "zidian/utf8.hpp"

namespace zidian {

// Token positions of the entry span inside the composed sequence, with the
// ids they replaced. Positions are contiguous and cover exactly the entry.
struct MaskPlan {
    std::vector<int> positions;
    std::vector<int> original_ids;
};

struct ContrastPair {
    enum class NegKind { antonym, sampled };
    int anchor = -1;  // entry index in the lexicon
    std::string positive;
    std::string negative;
    NegKind kind = NegKind::sampled;
    double weight = 0.0;
};

struct ELItem {
    int entry = -1;  // entry index in the lexicon; K = sense count >= 2
    int gold = -1;
    std::string example;
};

struct MemItem {
    int entry = -1;
    int sense = -1;
};

struct LossWeights {
    double mem = 0.6;
    double cl4sa = 0.2;
    double el = 0.2;
};

struct PretrainBatch {
    std::vector<MemItem> mem;
    std::vector<ContrastPair> cl4sa;
    std::vector<ELItem> el;

    bool empty() const { return mem.empty() && cl4sa.empty() && el.empty(); }
};

struct BatchConfig {
    int mem_batch = 64;
    int cl4sa_batch = 16;
    int el_batch = 16;
    double w_anto = 1.0;
    double w_rand = 0.5;
};

// ---------------------------------------------------------------------------
// Sequence building

// Tokenized MEM input with the mask applied. Radical ids are computed from
// the masked sequence, so the radical of a hidden character never leaks.
struct MemEncoding {
    std::vector<int> ids;
    MaskPlan plan;
};

inline MemEncoding build_mem_input(const Vocab& vocab, const std::string& surface,
                                   const std::string& definition, int max_len) {
    std::vector<int> ent = vocab.encode(surface);
    std::vector<int> def = vocab.encode(definition);
    const int budget = max_len - 3 - static_cast<int>(ent.size());
    ZIDIAN_REQUIRE(budget >= 0, "entry '" << surface << "' alone exceeds max length " << max_len);
    if (static_cast<int>(def.size()) > budget) def.resize(static_cast<size_t>(budget));

    MemEncoding out;
    out.ids = def.empty() ? compose_pair(ent) : compose_pair(ent, &def);
    for (size_t i = 0; i < ent.size(); ++i) {
        out.plan.positions.push_back(1 + static_cast<int>(i));
        out.plan.original_ids.push_back(ent[i]);
        out.ids[1 + i] = Vocab::kMask;
    }
    return out;
}

// The representation input for a surface: its first sense's definition when
// the dictionary knows it, the bare surface otherwise.
template <typename S>
Tensor<S> surface_cls(const SequenceEncoder<S>& enc, const Lexicon& lex,
                      const std::string& surface) {
    const DictEntry* e = lex.find(surface);
    if (e && !e->senses.empty()) return enc.cls_pair(surface, e->senses[0].definition);
    return enc.cls_text(surface);
}

// ---------------------------------------------------------------------------
// Losses

template <typename S>
Tensor<S> mem_loss(const DictEntry& entry, int sense_index, const SequenceEncoder<S>& enc,
                   MaskPlan* plan_out = nullptr) {
    ZIDIAN_REQUIRE(0 <= sense_index && sense_index < static_cast<int>(entry.senses.size()),
                   "sense index " << sense_index << " out of " << entry.senses.size());
    const MemEncoding in = build_mem_input(*enc.vocab, entry.surface,
                                           entry.senses[static_cast<size_t>(sense_index)].definition,
                                           enc.model->cfg.max_len);
    if (plan_out) *plan_out = in.plan;
    Tensor<S> hidden = encode(*enc.model, in.ids, enc.radical_ids(in.ids));
    Tensor<S> logits = mlm_logits(*enc.model, hidden, in.plan.positions);
    return cross_entropy(logits, in.plan.original_ids);
}

// Argmax recovery of the masked entry; true when every masked position's
// top-1 prediction equals the original id.
template <typename S>
bool mem_recovers(const DictEntry& entry, int sense_index, const SequenceEncoder<S>& enc) {
    const MemEncoding in = build_mem_input(*enc.vocab, entry.surface,
                                           entry.senses[static_cast<size_t>(sense_index)].definition,
                                           enc.model->cfg.max_len);
    Tensor<S> hidden = encode(*enc.model, in.ids, enc.radical_ids(in.ids));
    Tensor<S> logits = mlm_logits(*enc.model, hidden, in.plan.positions);
    const int V = logits.dim(1);
    for (int r = 0; r < logits.dim(0); ++r) {
        int best = 0;
        for (int c = 1; c < V; ++c)
            if (logits.data()[static_cast<int64_t>(r) * V + c] >
                logits.data()[static_cast<int64_t>(r) * V + best])
                best = c;
        if (best != in.plan.original_ids[static_cast<size_t>(r)]) return false;
    }
    return true;
}

// weight * log(1 + exp(b - a)): the stable form of
// -log(e^a / (e^a + e^b)), with a and b scalar similarity tensors.
template <typename S>
Tensor<S> contrast_from_similarities(const Tensor<S>& a, const Tensor<S>& b, double weight) {
    return scale(softplus(sub(b, a)), static_cast<S>(weight));
}

// a = h_ent.h_syno, b = h_ent.h_neg over [CLS] representations.
template <typename S>
Tensor<S> cl4sa_loss(const ContrastPair& pair, const Lexicon& lex,
                     const SequenceEncoder<S>& enc) {
    const DictEntry& anchor = lex.entry(static_cast<size_t>(pair.anchor));
    Tensor<S> h_ent = surface_cls(enc, lex, anchor.surface);
    Tensor<S> h_pos = surface_cls(enc, lex, pair.positive);
    Tensor<S> h_neg = surface_cls(enc, lex, pair.negative);
    Tensor<S> a = dot(h_ent, h_pos);
    Tensor<S> b = dot(h_ent, h_neg);
    return contrast_from_similarities(a, b, pair.weight);
}

// Similarity pair (a, b) used by the CL4SA diagnostics.
template <typename S>
std::pair<double, double> cl4sa_similarities(const ContrastPair& pair, const Lexicon& lex,
                                             const SequenceEncoder<S>& enc) {
    const DictEntry& anchor = lex.entry(static_cast<size_t>(pair.anchor));
    Tensor<S> h_ent = surface_cls(enc, lex, anchor.surface);
    Tensor<S> h_pos = surface_cls(enc, lex, pair.positive);
    Tensor<S> h_neg = surface_cls(enc, lex, pair.negative);
    return {static_cast<double>(dot(h_ent, h_pos).item()),
            static_cast<double>(dot(h_ent, h_neg).item())};
}

template <typename S>
struct ELResult {
    Tensor<S> loss;
    Tensor<S> attention;  // [K], sums to one
};

// Query = [CLS] of the bare example; keys = [CLS] of {ent [SEP] def_i}.
// The pre-softmax scores feed cross-entropy directly, so softmax is applied
// exactly once.
template <typename S>
ELResult<S> el_loss(const ELItem& item, const Lexicon& lex, const SequenceEncoder<S>& enc) {
    const DictEntry& entry = lex.entry(static_cast<size_t>(item.entry));
    const int K = static_cast<int>(entry.senses.size());
    ZIDIAN_REQUIRE(K >= 2, "el_loss: entry '" << entry.surface << "' has " << K
                                              << " senses, need at least 2");
    ZIDIAN_REQUIRE(0 <= item.gold && item.gold < K, "el_loss: gold " << item.gold << " out of " << K);

    Tensor<S> q = enc.cls_text(item.example);
    std::vector<Tensor<S>> scores;
    scores.reserve(static_cast<size_t>(K));
    for (const Sense& s : entry.senses) scores.push_back(dot(q, enc.cls_pair(entry.surface, s.definition)));
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(enc.model->cfg.d)));
    Tensor<S> logits = reshape(scale(concat(scores), inv_sqrt_d), {1, K});
    ELResult<S> out;
    out.loss = cross_entropy(logits, {item.gold});
    out.attention = reshape(softmax_lastdim(logits), {K});
    return out;
}

// ---------------------------------------------------------------------------
// Batch construction

// Deterministic, cycling item streams. Every (entry, sense) appears in MEM
// once per epoch; CL4SA enumerates (entry, synonym) pairs and draws one
// negative each; EL enumerates every (multi-sense entry, example) pair.
class BatchStream {
public:
    BatchStream(const Lexicon& lex, BatchConfig cfg, uint64_t seed)
        : lex_(&lex), cfg_(cfg), root_(seed) {
        for (size_t i = 0; i < lex.size(); ++i) {
            const DictEntry& e = lex.entry(i);
            for (size_t s = 0; s < e.senses.size(); ++s)
                mem_items_.push_back({static_cast<int>(i), static_cast<int>(s)});
            for (const std::string& syn : e.synonyms)
                pair_seeds_.push_back({static_cast<int>(i), syn});
            if (e.senses.size() >= 2) {
                for (size_t s = 0; s < e.senses.size(); ++s)
                    for (const std::string& ex : e.senses[s].examples)
                        el_items_.push_back({static_cast<int>(i), static_cast<int>(s), ex});
            }
        }
    }

    const std::vector<MemItem>& mem_items() const { return mem_items_; }
    const std::vector<ELItem>& el_items() const { return el_items_; }
    size_t pair_count() const { return pair_seeds_.size(); }

    int steps_per_epoch() const {
        if (mem_items_.empty()) return 1;
        return static_cast<int>((mem_items_.size() + static_cast<size_t>(cfg_.mem_batch) - 1) /
                                static_cast<size_t>(cfg_.mem_batch));
    }

    PretrainBatch next() {
        PretrainBatch batch;
        for (int i = 0; i < cfg_.mem_batch && !mem_items_.empty(); ++i)
            batch.mem.push_back(mem_items_[take(mem_cursor_, mem_order_, mem_items_.size(), "mem")]);
        for (int i = 0; i < cfg_.cl4sa_batch && !pair_seeds_.empty(); ++i) {
            const auto& [anchor, positive] =
                pair_seeds_[take(pair_cursor_, pair_order_, pair_seeds_.size(), "cl4sa")];
            batch.cl4sa.push_back(draw_pair(anchor, positive));
        }
        for (int i = 0; i < cfg_.el_batch && !el_items_.empty(); ++i)
            batch.el.push_back(el_items_[take(el_cursor_, el_order_, el_items_.size(), "el")]);
        ++step_;
        return batch;
    }

    // One negative per anchor: an antonym when the entry has a usable one,
    // otherwise a surface sampled uniformly outside the anchor and its
    // synonyms.
    ContrastPair draw_pair(int anchor_index, const std::string& positive) {
        const DictEntry& anchor = lex_->entry(static_cast<size_t>(anchor_index));
        Rng rng = root_.fork("negative", static_cast<uint64_t>(step_), draw_counter_++);
        ContrastPair pair;
        pair.anchor = anchor_index;
        pair.positive = positive;
        std::vector<std::string> antonyms;
        for (const std::string& a : anchor.antonyms)
            if (a != positive) antonyms.push_back(a);
        if (!antonyms.empty()) {
            pair.negative = antonyms[rng.below(antonyms.size())];
            pair.kind = ContrastPair::NegKind::antonym;
            pair.weight = cfg_.w_anto;
            return pair;
        }
        pair.kind = ContrastPair::NegKind::sampled;
        pair.weight = cfg_.w_rand;
        for (int attempt = 0; attempt < 64; ++attempt) {
            const std::string& cand =
                lex_->entry(static_cast<size_t>(rng.below(lex_->size()))).surface;
            const bool is_syn =
                std::find(anchor.synonyms.begin(), anchor.synonyms.end(), cand) !=
                anchor.synonyms.end();
            if (cand != anchor.surface && cand != positive && !is_syn) {
                pair.negative = cand;
                return pair;
            }
        }
        throw DictError("cannot sample a negative for '" + anchor.surface +
                        "': lexicon too small");
    }

private:
    // Consumes the next index of a shuffled cycle, reshuffling per epoch
    // from a substream named after the consumer.
    size_t take(size_t& cursor, std::vector<size_t>& order, size_t n, const char* label) {
        if (order.size() != n || cursor >= n) {
            if (order.size() != n) {
                order.resize(n);
                for (size_t i = 0; i < n; ++i) order[i] = i;
            }
            Rng rng = root_.fork(label, epoch_of_[label]++);
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    }

    const Lexicon* lex_;
    BatchConfig cfg_;
    Rng root_;
    std::vector<MemItem> mem_items_;
    std::vector<std::pair<int, std::string>> pair_seeds_;
    std::vector<ELItem> el_items_;
    std::vector<size_t> mem_order_, pair_order_, el_order_;
    size_t mem_cursor_ = 0, pair_cursor_ = 0, el_cursor_ = 0;
    std::map<std::string, uint64_t> epoch_of_;
    uint64_t step_ = 0;
    uint64_t draw_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Combined step

struct LossReport {
    int64_t step = 0;
    double total = 0;
    double mem = 0;
    double cl4sa = 0;
    double el = 0;
};

template <typename S>
Tensor<S> mean_of(std::vector<Tensor<S>> scalars) {
    return mean(concat(scalars));
}

// Forward all active objectives, one backward, one AdamW update.
// Objectives with zero weight (or no items) are skipped entirely, so their
// removal cannot perturb the remaining gradients.
template <typename S>
LossReport combined_step(const PretrainBatch& batch, const Lexicon& lex,
                         const SequenceEncoder<S>& enc, const LossWeights& weights,
                         AdamW<S>& opt, double lr_now) {
    ZIDIAN_REQUIRE(!batch.empty(), "combined_step: batch has no items for any objective");
    Tape<S> tape;
    LossReport report;
    bool any_active = false;
    {
        TapeScope<S> scope(tape);
        Tensor<S> total = Tensor<S>::scalar(S(0));
        if (weights.mem > 0 && !batch.mem.empty()) {
            any_active = true;
            std::vector<Tensor<S>> losses;
            for (const MemItem& it : batch.mem)
                losses.push_back(mem_loss(lex.entry(static_cast<size_t>(it.entry)), it.sense, enc));
            Tensor<S> l = mean_of(std::move(losses));
            report.mem = static_cast<double>(l.item());
            total = add(total, scale(l, static_cast<S>(weights.mem)));
        }
        if (weights.cl4sa > 0 && !batch.cl4sa.empty()) {
            any_active = true;
            std::vector<Tensor<S>> losses;
            for (const ContrastPair& p : batch.cl4sa) losses.push_back(cl4sa_loss(p, lex, enc));
            Tensor<S> l = mean_of(std::move(losses));
            report.cl4sa = static_cast<double>(l.item());
            total = add(total, scale(l, static_cast<S>(weights.cl4sa)));
        }
        if (weights.el > 0 && !batch.el.empty()) {
            any_active = true;
            std::vector<Tensor<S>> losses;
            for (const ELItem& it : batch.el) losses.push_back(el_loss(it, lex, enc).loss);
            Tensor<S> l = mean_of(std::move(losses));
            report.el = static_cast<double>(l.item());
            total = add(total, scale(l, static_cast<S>(weights.el)));
        }
        ZIDIAN_REQUIRE(any_active, "combined_step: every objective is inactive (zero weight or no items)");
        report.total = static_cast<double>(total.item());
        tape.backward(total);
    }
    opt.step(lr_now);
    opt.zero_grad();
    return report;
}

}  // namespace zidian
