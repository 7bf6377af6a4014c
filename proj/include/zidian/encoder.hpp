#pragma once
// Character-level transformer encoder with token + position + radical
// embeddings, pre-layer-norm blocks, and a tied masked-LM head.
//
// Sequences are processed one at a time (no cross-sequence batching), so
// padding only matters when a caller supplies it explicitly; [PAD] key
// positions are masked out of attention with a large negative score.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zidian/checkpoint.hpp"
#include "zidian/tensor.hpp"
#include "zidian/vocab.hpp"

namespace zidian {

struct EncodeError : std::runtime_error {
    explicit EncodeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EncoderConfig {
    int d = 64;
    int layers = 2;
    int heads = 2;
    int ffn_mult = 4;
    int max_len = 256;
    int vocab_size = 0;
    int radical_vocab_size = 1;

    int head_dim() const { return d / heads; }
    int ffn_dim() const { return d * ffn_mult; }
};

template <typename S>
struct EncoderModel {
    EncoderConfig cfg;

    Tensor<S> tok_emb;  // [V, d]
    Tensor<S> pos_emb;  // [max_len, d]
    Tensor<S> rad_emb;  // [R, d]

    struct Block {
        Tensor<S> ln1_g, ln1_b;
        Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<S> ln2_g, ln2_b;
        Tensor<S> w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    Tensor<S> final_ln_g, final_ln_b;

    // MLM head: dense transform + layer norm, decoder tied to tok_emb plus
    // an output bias.
    Tensor<S> mlm_w, mlm_b, mlm_ln_g, mlm_ln_b, mlm_out_b;

    static EncoderModel init(const EncoderConfig& cfg, Rng rng) {
        ZIDIAN_REQUIRE(cfg.d % cfg.heads == 0,
                       "hidden size " << cfg.d << " not divisible by " << cfg.heads << " heads");
        ZIDIAN_REQUIRE(cfg.vocab_size > Vocab::kNumSpecials, "vocab_size not set");
        EncoderModel m;
        m.cfg = cfg;
        const double std = 0.02;
        m.tok_emb = param<S>({cfg.vocab_size, cfg.d}, rng, std);
        m.pos_emb = param<S>({cfg.max_len, cfg.d}, rng, std);
        m.rad_emb = param<S>({std::max(1, cfg.radical_vocab_size), cfg.d}, rng, std);
        for (int l = 0; l < cfg.layers; ++l) {
            Block b;
            b.ln1_g = param_full<S>({cfg.d}, S(1));
            b.ln1_b = param_zeros<S>({cfg.d});
            b.wq = param<S>({cfg.d, cfg.d}, rng, std);
            b.bq = param_zeros<S>({cfg.d});
            b.wk = param<S>({cfg.d, cfg.d}, rng, std);
            b.bk = param_zeros<S>({cfg.d});
            b.wv = param<S>({cfg.d, cfg.d}, rng, std);
            b.bv = param_zeros<S>({cfg.d});
            b.wo = param<S>({cfg.d, cfg.d}, rng, std);
            b.bo = param_zeros<S>({cfg.d});
            b.ln2_g = param_full<S>({cfg.d}, S(1));
            b.ln2_b = param_zeros<S>({cfg.d});
            b.w1 = param<S>({cfg.d, cfg.ffn_dim()}, rng, std);
            b.b1 = param_zeros<S>({cfg.ffn_dim()});
            b.w2 = param<S>({cfg.ffn_dim(), cfg.d}, rng, std);
            b.b2 = param_zeros<S>({cfg.d});
            m.blocks.push_back(std::move(b));
        }
        m.final_ln_g = param_full<S>({cfg.d}, S(1));
        m.final_ln_b = param_zeros<S>({cfg.d});
        m.mlm_w = param<S>({cfg.d, cfg.d}, rng, std);
        m.mlm_b = param_zeros<S>({cfg.d});
        m.mlm_ln_g = param_full<S>({cfg.d}, S(1));
        m.mlm_ln_b = param_zeros<S>({cfg.d});
        m.mlm_out_b = param_zeros<S>({cfg.vocab_size});
        return m;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        out.emplace_back("tok_emb", tok_emb);
        out.emplace_back("pos_emb", pos_emb);
        out.emplace_back("rad_emb", rad_emb);
        for (size_t l = 0; l < blocks.size(); ++l) {
            const Block& b = blocks[l];
            const std::string p = "block" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1_g", b.ln1_g);
            out.emplace_back(p + "ln1_b", b.ln1_b);
            out.emplace_back(p + "wq", b.wq);
            out.emplace_back(p + "bq", b.bq);
            out.emplace_back(p + "wk", b.wk);
            out.emplace_back(p + "bk", b.bk);
            out.emplace_back(p + "wv", b.wv);
            out.emplace_back(p + "bv", b.bv);
            out.emplace_back(p + "wo", b.wo);
            out.emplace_back(p + "bo", b.bo);
            out.emplace_back(p + "ln2_g", b.ln2_g);
            out.emplace_back(p + "ln2_b", b.ln2_b);
            out.emplace_back(p + "w1", b.w1);
            out.emplace_back(p + "b1", b.b1);
            out.emplace_back(p + "w2", b.w2);
            out.emplace_back(p + "b2", b.b2);
        }
        out.emplace_back("final_ln_g", final_ln_g);
        out.emplace_back("final_ln_b", final_ln_b);
        out.emplace_back("mlm_w", mlm_w);
        out.emplace_back("mlm_b", mlm_b);
        out.emplace_back("mlm_ln_g", mlm_ln_g);
        out.emplace_back("mlm_ln_b", mlm_ln_b);
        out.emplace_back("mlm_out_b", mlm_out_b);
        return out;
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : named_params()) n += t.numel();
        return n;
    }

    static EncoderModel from_checkpoint(const Checkpoint<S>& ck) {
        EncoderConfig cfg;
        const nlohmann::json& meta = ck.meta.at("encoder");
        cfg.d = meta.at("d").template get<int>();
        cfg.layers = meta.at("layers").template get<int>();
        cfg.heads = meta.at("heads").template get<int>();
        cfg.ffn_mult = meta.at("ffn_mult").template get<int>();
        cfg.max_len = meta.at("max_len").template get<int>();
        cfg.vocab_size = meta.at("vocab_size").template get<int>();
        cfg.radical_vocab_size = meta.at("radical_vocab_size").template get<int>();
        Rng rng(0);
        EncoderModel m = init(cfg, rng);
        for (auto& [name, t] : m.named_params()) {
            const Tensor<S>* src = ck.find(name);
            if (!src) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
            ZIDIAN_REQUIRE(src->shape() == t.shape(),
                           "checkpoint tensor '" << name << "' has shape "
                                                 << shape_str(src->shape()) << ", expected "
                                                 << shape_str(t.shape()));
            std::copy(src->data(), src->data() + src->numel(), t.data());
        }
        return m;
    }

    nlohmann::json meta_json() const {
        nlohmann::json j;
        j["d"] = cfg.d;
        j["layers"] = cfg.layers;
        j["heads"] = cfg.heads;
        j["ffn_mult"] = cfg.ffn_mult;
        j["max_len"] = cfg.max_len;
        j["vocab_size"] = cfg.vocab_size;
        j["radical_vocab_size"] = cfg.radical_vocab_size;
        return j;
    }
};

// Attention probabilities captured per block (heads stacked row-blocks),
// for tests that inspect the softmax rows.
template <typename S>
using AttnTrace = std::vector<Tensor<S>>;

// Runs the full stack over a composed id sequence. [PAD] ids are masked out
// of attention as keys; their own outputs are meaningless.
template <typename S>
Tensor<S> encode(const EncoderModel<S>& m, const std::vector<int>& ids,
                 const std::vector<int>& radical_ids, AttnTrace<S>* trace = nullptr) {
    const EncoderConfig& cfg = m.cfg;
    const int L = static_cast<int>(ids.size());
    if (L > cfg.max_len)
        throw EncodeError("sequence of length " + std::to_string(L) + " exceeds max length " +
                          std::to_string(cfg.max_len));
    ZIDIAN_REQUIRE(L > 0, "encode: empty sequence");
    ZIDIAN_REQUIRE(radical_ids.size() == ids.size(),
                   "encode: " << radical_ids.size() << " radical ids for " << ids.size()
                              << " tokens");

    std::vector<int> positions(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = i;

    Tensor<S> x = add(add(embedding_lookup(m.tok_emb, ids), embedding_lookup(m.pos_emb, positions)),
                      embedding_lookup(m.rad_emb, radical_ids));

    // Additive attention mask over key positions; exp(-1e9 - max) underflows
    // to exactly zero, so padded keys contribute nothing to any softmax row.
    Tensor<S> key_mask;
    bool any_pad = false;
    {
        std::vector<S> mask(static_cast<size_t>(L), S(0));
        for (int i = 0; i < L; ++i)
            if (ids[static_cast<size_t>(i)] == Vocab::kPad) {
                mask[static_cast<size_t>(i)] = S(-1e9);
                any_pad = true;
            }
        if (any_pad) key_mask = Tensor<S>::from({L}, std::move(mask));
    }

    const int dk = cfg.head_dim();
    const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
    for (const auto& blk : m.blocks) {
        Tensor<S> h = layer_norm(x, blk.ln1_g, blk.ln1_b);
        Tensor<S> q = add_rowvec(matmul(h, blk.wq), blk.bq);
        Tensor<S> k = add_rowvec(matmul(h, blk.wk), blk.bk);
        Tensor<S> v = add_rowvec(matmul(h, blk.wv), blk.bv);
        std::vector<Tensor<S>> ctx_heads;
        std::vector<Tensor<S>> attn_heads;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            Tensor<S> qh = slice_cols(q, hd * dk, (hd + 1) * dk);
            Tensor<S> kh = slice_cols(k, hd * dk, (hd + 1) * dk);
            Tensor<S> vh = slice_cols(v, hd * dk, (hd + 1) * dk);
            Tensor<S> scores = scale(matmul(qh, kh, false, true), inv_sqrt_dk);
            if (any_pad) scores = add_rowvec(scores, key_mask);
            Tensor<S> attn = softmax_lastdim(scores);
            if (trace) attn_heads.push_back(attn);
            ctx_heads.push_back(matmul(attn, vh));
        }
        if (trace) {
            Tensor<S> stacked = attn_heads.size() == 1 ? attn_heads[0] : Tensor<S>();
            if (attn_heads.size() > 1) {
                std::vector<Tensor<S>> rows;
                for (auto& a : attn_heads)
                    for (int r = 0; r < a.dim(0); ++r) rows.push_back(row(a, r));
                stacked = stack_rows(rows);
            }
            trace->push_back(stacked);
        }
        Tensor<S> ctx = cfg.heads == 1 ? ctx_heads[0] : concat_cols(ctx_heads);
        Tensor<S> attn_out = add_rowvec(matmul(ctx, blk.wo), blk.bo);
        x = add(x, attn_out);

        Tensor<S> h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
        Tensor<S> ffn = add_rowvec(
            matmul(gelu(add_rowvec(matmul(h2, blk.w1), blk.b1)), blk.w2), blk.b2);
        x = add(x, ffn);
    }
    return layer_norm(x, m.final_ln_g, m.final_ln_b);
}

// Input layout {[CLS] a [SEP]} or {[CLS] a [SEP] b [SEP]}.
inline std::vector<int> compose_pair(const std::vector<int>& a,
                                     const std::vector<int>* b = nullptr) {
    std::vector<int> ids;
    ids.reserve(a.size() + (b ? b->size() : 0) + 3);
    ids.push_back(Vocab::kCls);
    ids.insert(ids.end(), a.begin(), a.end());
    ids.push_back(Vocab::kSep);
    if (b) {
        ids.insert(ids.end(), b->begin(), b->end());
        ids.push_back(Vocab::kSep);
    }
    return ids;
}

template <typename S>
struct Encoded {
    Tensor<S> hidden;  // [L, d]
    Tensor<S> cls;     // [d]
};

template <typename S>
Encoded<S> encode_pair(const EncoderModel<S>& m, const std::vector<int>& a,
                       const std::vector<int>* b, const std::vector<int>& radical_ids,
                       AttnTrace<S>* trace = nullptr) {
    const std::vector<int> ids = compose_pair(a, b);
    Tensor<S> hidden = encode(m, ids, radical_ids, trace);
    return {hidden, row(hidden, 0)};
}

// Logits at the requested positions: gather -> dense+gelu+layer norm ->
// tied decoder. Returns an undefined tensor for an empty position list.
template <typename S>
Tensor<S> mlm_logits(const EncoderModel<S>& m, const Tensor<S>& hidden,
                     const std::vector<int>& positions) {
    if (positions.empty()) return Tensor<S>();
    for (int p : positions)
        ZIDIAN_REQUIRE(0 <= p && p < hidden.dim(0),
                       "mlm position " << p << " out of " << hidden.dim(0));
    Tensor<S> h = gather_rows(hidden, positions);
    h = layer_norm(gelu(add_rowvec(matmul(h, m.mlm_w), m.mlm_b)), m.mlm_ln_g, m.mlm_ln_b);
    return add_rowvec(matmul(h, m.tok_emb, false, true), m.mlm_out_b);
}

// Bundles the model with its vocabulary and radical table so callers can
// encode raw text. The radical table may be null (every token then maps to
// NO_RADICAL).
template <typename S>
struct SequenceEncoder {
    const EncoderModel<S>* model = nullptr;
    const Vocab* vocab = nullptr;
    const RadicalTable* radicals = nullptr;

    std::vector<int> tokenize(std::string_view text) const { return vocab->encode(text); }

    std::vector<int> radical_ids(const std::vector<int>& ids) const {
        if (!radicals) return std::vector<int>(ids.size(), RadicalTable::kNoRadical);
        return radical_ids_for(ids, *vocab, *radicals);
    }

    Encoded<S> encode_ids(const std::vector<int>& a, const std::vector<int>* b = nullptr,
                          AttnTrace<S>* trace = nullptr) const {
        const std::vector<int> ids = compose_pair(a, b);
        Tensor<S> hidden = encode(*model, ids, radical_ids(ids), trace);
        return {hidden, row(hidden, 0)};
    }

    // Free-text queries clamp their tail to fit; the id-level entry points
    // keep the strict overlong error.
    Encoded<S> encode_text(std::string_view a) const {
        std::vector<int> ids = tokenize(a);
        const size_t budget = static_cast<size_t>(model->cfg.max_len - 2);
        if (ids.size() > budget) ids.resize(budget);
        return encode_ids(ids);
    }

    Encoded<S> encode_text_pair(std::string_view a, std::string_view b) const {
        // The second segment tail is truncated when the pair would not fit.
        std::vector<int> ta = tokenize(a);
        std::vector<int> tb = tokenize(b);
        const int budget = model->cfg.max_len - 3 - static_cast<int>(ta.size());
        if (budget < 0)
            throw EncodeError("first segment of length " + std::to_string(ta.size()) +
                              " cannot fit in max length " + std::to_string(model->cfg.max_len));
        if (static_cast<int>(tb.size()) > budget) tb.resize(static_cast<size_t>(budget));
        if (tb.empty()) return encode_ids(ta);
        return encode_ids(ta, &tb);
    }

    Tensor<S> cls_text(std::string_view a) const { return encode_text(a).cls; }
    Tensor<S> cls_pair(std::string_view a, std::string_view b) const {
        return encode_text_pair(a, b).cls;
    }
};

}  // namespace zidian
