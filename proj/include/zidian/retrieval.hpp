#pragma once
// Downstream application path: match entries in the input, weight their
// senses with the EL-pre-trained attention, pool by weighted sum, and
// concatenate the pooled dictionary vector with the encoder's own [CLS]
// representation for a linear task head.
//
// Everything here is a pure function of (text, lexicon, weights), safe to
// run in parallel across inputs.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zidian/adamw.hpp"
#include "zidian/dict.hpp"
#include "zidian/encoder.hpp"
#include "zidian/rng.hpp"

namespace zidian {

template <typename S>
struct SenseScore {
    EntryMatch match;
    std::vector<double> weights;  // simplex over the entry's K senses
    Tensor<S> pooled;             // [d] = sum_i weight_i * sense_vec_i
};

// Lowest index wins ties, so evaluation is deterministic.
inline int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// Attention of the full input's [CLS] (query) over each matched entry's
// sense [CLS] vectors (keys). Single-sense entries get weight [1.0].
template <typename S>
std::vector<SenseScore<S>> retrieve(const std::string& text, const Lexicon& lex,
                                    const SequenceEncoder<S>& enc) {
    std::vector<SenseScore<S>> out;
    const std::vector<EntryMatch> matches = match_entries(text, lex);
    if (matches.empty()) return out;

    Tensor<S> query = enc.cls_text(text);
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(enc.model->cfg.d)));
    for (const EntryMatch& m : matches) {
        const DictEntry* e = lex.find(m.surface);
        if (!e) continue;
        SenseScore<S> score;
        score.match = m;
        std::vector<Tensor<S>> sense_vecs;
        sense_vecs.reserve(e->senses.size());
        for (const Sense& s : e->senses)
            sense_vecs.push_back(enc.cls_pair(e->surface, s.definition));
        if (sense_vecs.size() == 1) {
            score.weights = {1.0};
            score.pooled = sense_vecs[0];
        } else {
            std::vector<Tensor<S>> dots;
            dots.reserve(sense_vecs.size());
            for (const Tensor<S>& v : sense_vecs) dots.push_back(dot(query, v));
            Tensor<S> attn = softmax_lastdim(scale(concat(dots), inv_sqrt_d));
            for (int64_t i = 0; i < attn.numel(); ++i)
                score.weights.push_back(static_cast<double>(attn.data()[i]));
            Tensor<S> pooled = matmul(reshape(attn, {1, static_cast<int>(sense_vecs.size())}),
                                      stack_rows(sense_vecs));
            score.pooled = row(pooled, 0);
        }
        out.push_back(std::move(score));
    }
    return out;
}

template <typename S>
struct FusedRepresentation {
    Tensor<S> lm;     // [d_lm]
    Tensor<S> dict;   // [d]
    Tensor<S> fused;  // [d_lm + d], lm part first
};

template <typename S>
struct TaskHead {
    Tensor<S> w;  // [in_dim, classes]
    Tensor<S> b;  // [classes]

    static TaskHead init(int in_dim, int classes, Rng rng) {
        TaskHead h;
        h.w = param<S>({in_dim, classes}, rng, 0.02);
        h.b = param_zeros<S>({classes});
        return h;
    }

    Tensor<S> logits(const Tensor<S>& features) const {
        return row(add_rowvec(matmul(reshape(features, {1, features.dim(0)}), w), b), 0);
    }

    std::vector<Tensor<S>> params() const { return {w, b}; }
};

// Pooled vectors of all matches combine by unweighted mean; no matches
// degrade to a zero dictionary vector.
template <typename S>
Tensor<S> dict_vector(const std::string& text, const Lexicon& lex,
                      const SequenceEncoder<S>& enc) {
    const std::vector<SenseScore<S>> scores = retrieve(text, lex, enc);
    if (scores.empty()) return Tensor<S>::zeros({enc.model->cfg.d});
    std::vector<Tensor<S>> pooled;
    pooled.reserve(scores.size());
    for (const SenseScore<S>& s : scores) pooled.push_back(s.pooled);
    return pooled.size() == 1 ? pooled[0] : mean_rows(stack_rows(pooled));
}

template <typename S>
std::pair<FusedRepresentation<S>, Tensor<S>> fuse(const std::string& text, const Lexicon& lex,
                                                  const SequenceEncoder<S>& enc,
                                                  const TaskHead<S>& head) {
    FusedRepresentation<S> rep;
    rep.lm = enc.cls_text(text);
    rep.dict = dict_vector(text, lex, enc);
    rep.fused = concat<S>({rep.lm, rep.dict});
    Tensor<S> logits = head.logits(rep.fused);
    return {std::move(rep), std::move(logits)};
}

// PolyMRC inference primitive: attention logits of the context [CLS] over
// the choice [CLS] vectors. argmax (lowest index on ties) is the predicted
// sense.
template <typename S>
std::vector<double> score_choices(const std::string& context, const std::string& entry_surface,
                                  const std::vector<std::string>& choices,
                                  const SequenceEncoder<S>& enc) {
    ZIDIAN_REQUIRE(choices.size() >= 2,
                   "score_choices: " << choices.size() << " choices, need at least 2");
    Tensor<S> q = enc.cls_text(context);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(enc.model->cfg.d));
    std::vector<double> scores;
    scores.reserve(choices.size());
    for (const std::string& def : choices)
        scores.push_back(static_cast<double>(dot(q, enc.cls_pair(entry_surface, def)).item()) *
                         inv_sqrt_d);
    return scores;
}

// ---------------------------------------------------------------------------
// Head-only fusion fine-tuning (linear probe over frozen features)

struct FuseExample {
    std::string text;
    int label = 0;
};

struct FuseTrainResult {
    double first_loss = 0;
    double final_loss = 0;
    int classes = 0;
    int feature_dim = 0;
};

// Trains a linear head on frozen [CLS] features, optionally concatenated
// with the dictionary vector. Full-batch AdamW; deterministic per seed.
template <typename S>
FuseTrainResult train_fused_classifier(const std::vector<FuseExample>& data, const Lexicon& lex,
                                       const SequenceEncoder<S>& enc, bool use_fusion,
                                       uint64_t seed, int steps = 300, double lr = 0.05) {
    ZIDIAN_REQUIRE(!data.empty(), "train_fused_classifier: no examples");
    int classes = 0;
    for (const FuseExample& ex : data) classes = std::max(classes, ex.label + 1);
    ZIDIAN_REQUIRE(classes >= 2, "train_fused_classifier: need at least 2 classes");

    const int d_lm = enc.model->cfg.d;
    const int din = use_fusion ? 2 * d_lm : d_lm;
    std::vector<S> feat;
    feat.reserve(data.size() * static_cast<size_t>(din));
    std::vector<int> labels;
    for (const FuseExample& ex : data) {
        Tensor<S> lm = enc.cls_text(ex.text);
        for (int i = 0; i < d_lm; ++i) feat.push_back(lm.data()[i]);
        if (use_fusion) {
            Tensor<S> dv = dict_vector(ex.text, lex, enc);
            for (int i = 0; i < d_lm; ++i) feat.push_back(dv.data()[i]);
        }
        labels.push_back(ex.label);
    }
    Tensor<S> features = Tensor<S>::from({static_cast<int>(data.size()), din}, std::move(feat));

    Rng rng = Rng(seed).fork("fuse_head");
    TaskHead<S> head = TaskHead<S>::init(din, classes, rng);
    AdamWConfig opt_cfg;
    opt_cfg.lr = lr;
    opt_cfg.weight_decay = 0.0;
    AdamW<S> opt(head.params(), opt_cfg);

    FuseTrainResult result;
    result.classes = classes;
    result.feature_dim = din;
    for (int step = 0; step < steps; ++step) {
        Tape<S> tape;
        double value = 0;
        {
            TapeScope<S> scope(tape);
            Tensor<S> logits = add_rowvec(matmul(features, head.w), head.b);
            Tensor<S> loss = cross_entropy(logits, labels);
            value = static_cast<double>(loss.item());
            tape.backward(loss);
        }
        if (step == 0) result.first_loss = value;
        opt.step();
        opt.zero_grad();
    }
    result.final_loss = static_cast<double>(
        cross_entropy(add_rowvec(matmul(features, head.w), head.b), labels).item());
    return result;
}

}  // namespace zidian
