#pragma once
// Glyph branch: fixed-size grayscale bitmaps per character, a small
// convolutional feature extractor, and the symmetric contrastive objective
// that aligns glyph features with definition-text features.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "zidian/encoder.hpp"
#include "zidian/tensor.hpp"
#include "zidian/utf8.hpp"

namespace zidian {

struct GlyphError : std::runtime_error {
    explicit GlyphError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GlyphAtlas {
    int side = 24;
    std::vector<char32_t> order;  // file order, load-bearing for round-trips
    std::unordered_map<char32_t, std::vector<double>> glyphs;  // side*side in [0,1]

    bool contains(char32_t c) const { return glyphs.count(c) != 0; }
    const std::vector<double>& bitmap(char32_t c) const;
    void insert(char32_t c, std::vector<double> bitmap);

    // Atlas file: "GLYPH v1 <side> <count>" header, then per glyph one line
    // with the character followed by <side> lines of <side> values in 0..255.
    static GlyphAtlas load(const std::string& path);
    void save(const std::string& path) const;
};

// Rotation is in degrees; the output stays side x side with values clamped
// to [0,1].
struct GlyphAugmentation {
    double rotation_deg = 0.0;  // {-10, 0, +10}
    double scale = 1.0;         // {0.9, 1.0}
    double shear = 0.0;         // optional horizontal shear
};

// Bilinear resample through the inverse affine map around the bitmap center.
std::vector<double> augment_bitmap(const std::vector<double>& bitmap, int side,
                                   const GlyphAugmentation& aug);

// Two conv blocks with pooling, then a linear projection to d.
template <typename S>
struct GlyphEncoder {
    int side = 24;
    int c1 = 8, c2 = 16;
    int out_dim = 64;

    Tensor<S> conv1_w, conv1_b;
    Tensor<S> conv2_w, conv2_b;
    Tensor<S> proj_w, proj_b;

    static int flat_dim(int side, int c2) {
        const int h1 = (side - 2) / 2;      // conv 3x3 valid, pool 2
        const int h2 = (h1 - 2) / 2;
        ZIDIAN_REQUIRE(h2 >= 1, "glyph side " << side << " too small for two conv blocks");
        return c2 * h2 * h2;
    }

    static GlyphEncoder init(int side, int d, Rng rng, int c1 = 8, int c2 = 16) {
        GlyphEncoder g;
        g.side = side;
        g.c1 = c1;
        g.c2 = c2;
        g.out_dim = d;
        // Fan-in scaled init keeps feature norms O(1) through the stack.
        const int flat = flat_dim(side, c2);
        g.conv1_w = param<S>({c1, 1, 3, 3}, rng, std::sqrt(2.0 / 9.0));
        g.conv1_b = param_zeros<S>({c1});
        g.conv2_w = param<S>({c2, c1, 3, 3}, rng, std::sqrt(2.0 / (9.0 * c1)));
        g.conv2_b = param_zeros<S>({c2});
        g.proj_w = param<S>({flat, d}, rng, std::sqrt(2.0 / flat));
        g.proj_b = param_zeros<S>({d});
        return g;
    }

    Tensor<S> forward(const std::vector<double>& bitmap) const {
        ZIDIAN_REQUIRE(static_cast<int>(bitmap.size()) == side * side,
                       "glyph bitmap has " << bitmap.size() << " pixels, expected "
                                           << side * side);
        std::vector<S> pix(bitmap.size());
        for (size_t i = 0; i < bitmap.size(); ++i) pix[i] = static_cast<S>(bitmap[i]);
        Tensor<S> x = Tensor<S>::from({1, side, side}, std::move(pix));
        x = avg_pool2(gelu(conv2d(x, conv1_w, conv1_b)));
        x = avg_pool2(gelu(conv2d(x, conv2_w, conv2_b)));
        Tensor<S> flat = reshape(x, {1, static_cast<int>(x.numel())});
        return row(add_rowvec(matmul(flat, proj_w), proj_b), 0);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        return {{"glyph.conv1_w", conv1_w}, {"glyph.conv1_b", conv1_b},
                {"glyph.conv2_w", conv2_w}, {"glyph.conv2_b", conv2_b},
                {"glyph.proj_w", proj_w},   {"glyph.proj_b", proj_b}};
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }
};

// Visual-branch feature of one character (deterministic without an
// augmentation).
template <typename S>
Tensor<S> glyph_feature(char32_t character, const GlyphEncoder<S>& enc, const GlyphAtlas& atlas,
                        const std::optional<GlyphAugmentation>& aug = std::nullopt) {
    const std::vector<double>& bm = atlas.bitmap(character);
    if (aug) return enc.forward(augment_bitmap(bm, atlas.side, *aug));
    return enc.forward(bm);
}

// After alignment the deployed feature can come from either branch; the
// visual branch is the default, this is the text-branch alternative.
template <typename S>
Tensor<S> aligned_text_feature(char32_t character, const std::string& definition,
                               const SequenceEncoder<S>& text_enc) {
    return text_enc.cls_pair(utf8_encode_one(character), definition);
}

enum class GlyphFeatureBranch { visual, text };

struct GlyphPairing {
    char32_t character;
    std::string definition;
};

// Symmetric cross-entropy over the scaled cosine-similarity matrix of two
// feature batches, diagonal pairs as targets:
// 1/2 (CE over image rows + CE over text rows).
template <typename S>
Tensor<S> clip_symmetric_loss(const Tensor<S>& img_feats, const Tensor<S>& txt_feats,
                              const Tensor<S>& log_inv_temp) {
    ZIDIAN_REQUIRE(img_feats.rank() == 2 && img_feats.shape() == txt_feats.shape(),
                   "clip_symmetric_loss: feature shapes " << shape_str(img_feats.shape())
                                                          << " vs "
                                                          << shape_str(txt_feats.shape()));
    const int B = img_feats.dim(0);
    ZIDIAN_REQUIRE(B >= 2, "clip_symmetric_loss: batch of " << B << ", need at least 2");
    Tensor<S> img = l2_normalize_rows(img_feats);
    Tensor<S> txt = l2_normalize_rows(txt_feats);
    Tensor<S> inv_temp = exp_elem(log_inv_temp);
    Tensor<S> sim_it = mul(matmul(img, txt, false, true), inv_temp);  // rows: images
    Tensor<S> sim_ti = mul(matmul(txt, img, false, true), inv_temp);  // rows: texts
    std::vector<int> diag(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<size_t>(i)] = i;
    return scale(add(cross_entropy(sim_it, diag), cross_entropy(sim_ti, diag)), S(0.5));
}

// The glyph objective: visual features from the conv encoder, text features
// from the [CLS] of {[CLS] char [SEP] def [SEP]}. The temperature enters as
// a trainable log inverse temperature scalar.
template <typename S>
Tensor<S> glyph_contrastive_loss(const std::vector<GlyphPairing>& batch,
                                 const GlyphEncoder<S>& glyph_enc,
                                 const SequenceEncoder<S>& text_enc, const GlyphAtlas& atlas,
                                 const Tensor<S>& log_inv_temp) {
    const int B = static_cast<int>(batch.size());
    ZIDIAN_REQUIRE(B >= 2, "glyph_contrastive_loss: batch of " << B << ", need at least 2");
    std::vector<Tensor<S>> img_rows, txt_rows;
    img_rows.reserve(batch.size());
    txt_rows.reserve(batch.size());
    for (const GlyphPairing& p : batch) {
        img_rows.push_back(glyph_feature(p.character, glyph_enc, atlas));
        txt_rows.push_back(text_enc.cls_pair(utf8_encode_one(p.character), p.definition));
    }
    return clip_symmetric_loss(stack_rows(img_rows), stack_rows(txt_rows), log_inv_temp);
}

// CLIP-style default temperature 0.07, stored as log(1/tau) so training can
// move it freely.
template <typename S>
Tensor<S> init_log_inv_temp(double tau = 0.07) {
    Tensor<S> t = Tensor<S>::scalar(static_cast<S>(std::log(1.0 / tau)));
    t.set_requires_grad(true);
    return t;
}

}  // namespace zidian
