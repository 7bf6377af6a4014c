#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "zidian/adamw.hpp"
#include "zidian/glyph.hpp"
#include "zidian/gradcheck.hpp"
#include "zidian/utf8.hpp"

using namespace zidian;

namespace {

const std::string kAtlasPath = std::string(ZIDIAN_FIXTURE_DIR) + "/glyph_atlas.txt";

Vocab glyph_vocab() {
    std::set<char32_t> chars;
    for (char32_t c : utf8_decode("大小明暗猫狗水火山动物器具的用刀灯")) chars.insert(c);
    return Vocab::from_chars(chars);
}

double cosine(const Tensor<float>& a, const Tensor<float>& b) {
    double num = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        num += a.data()[i] * b.data()[i];
        na += a.data()[i] * a.data()[i];
        nb += b.data()[i] * b.data()[i];
    }
    return num / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("atlas fixture loads with validated bitmaps") {
    GlyphAtlas atlas = GlyphAtlas::load(kAtlasPath);
    CHECK(atlas.side == 24);
    CHECK(atlas.order.size() >= 100);
    CHECK(atlas.contains(U'明'));
    const auto& bm = atlas.bitmap(U'明');
    CHECK(bm.size() == 24u * 24u);
    bool any = false;
    for (double v : bm) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        any = any || v > 0.0;
    }
    CHECK(any);
}

TEST_CASE("all-zero bitmaps are rejected with the character named") {
    GlyphAtlas atlas;
    atlas.side = 4;
    try {
        atlas.insert(U'空', std::vector<double>(16, 0.0));
        FAIL("expected GlyphError");
    } catch (const GlyphError& e) {
        CHECK(std::string(e.what()).find("空") != std::string::npos);
    }
    CHECK_THROWS_AS(atlas.insert(U'歪', std::vector<double>(9, 0.5)), GlyphError);
}

TEST_CASE("atlas save/load round trip is bit-identical") {
    GlyphAtlas atlas = GlyphAtlas::load(kAtlasPath);
    const std::string p1 = "atlas_rt.txt";
    atlas.save(p1);
    GlyphAtlas again = GlyphAtlas::load(p1);
    const std::string p2 = "atlas_rt2.txt";
    again.save(p2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("atlas format errors") {
    auto write = [](const std::string& name, const std::string& content) {
        std::ofstream out(name, std::ios::trunc);
        out << content;
        return name;
    };
    auto bad_magic = write("atlas_bad1.txt", "NOPE v1 4 0\n");
    CHECK_THROWS_AS(GlyphAtlas::load(bad_magic), GlyphError);
    auto truncated = write("atlas_bad2.txt", "GLYPH v1 4 1\n明\n0 0 0 0\n");
    CHECK_THROWS_AS(GlyphAtlas::load(truncated), GlyphError);
    std::remove(bad_magic.c_str());
    std::remove(truncated.c_str());
    CHECK_THROWS_AS(GlyphAtlas::load("missing_atlas.txt"), GlyphError);
}

TEST_CASE("augmentation keeps size and value bounds") {
    GlyphAtlas atlas = GlyphAtlas::load(kAtlasPath);
    const auto& bm = atlas.bitmap(U'大');
    for (double rot : {-10.0, 0.0, 10.0}) {
        for (double sc : {0.9, 1.0}) {
            GlyphAugmentation aug{rot, sc, 0.1};
            auto out = augment_bitmap(bm, atlas.side, aug);
            CHECK(out.size() == bm.size());
            for (double v : out) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    // Identity augmentation reproduces the bitmap.
    auto ident = augment_bitmap(bm, atlas.side, GlyphAugmentation{});
    for (size_t i = 0; i < bm.size(); ++i) CHECK(ident[i] == doctest::Approx(bm[i]).epsilon(1e-12));
}

TEST_CASE("glyph features are deterministic with the right length") {
    GlyphAtlas atlas = GlyphAtlas::load(kAtlasPath);
    GlyphEncoder<float> enc = GlyphEncoder<float>::init(atlas.side, 32, Rng(3));
    Tensor<float> a = glyph_feature(U'猫', enc, atlas);
    Tensor<float> b = glyph_feature(U'猫', enc, atlas);
    CHECK(a.shape() == std::vector<int>{32});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

    CHECK_THROWS_AS(glyph_feature(U'〄', enc, atlas), GlyphError);
}

TEST_CASE("contrastive loss closed forms") {
    Tensor<double> log_unit = Tensor<double>::scalar(0.0);  // inverse temperature 1

    SUBCASE("identical rows give ln 2 at B = 2") {
        auto img = Tensor<double>::from({2, 3}, {1, 2, 3, 1, 2, 3});
        auto txt = Tensor<double>::from({2, 3}, {0.5, -1, 2, 0.5, -1, 2});
        CHECK(clip_symmetric_loss(img, txt, log_unit).item() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }
    SUBCASE("uniform similarities give ln B") {
        for (int B : {2, 3, 5}) {
            std::vector<double> rowvals = {1, -2, 0.5};
            std::vector<double> img_data, txt_data;
            for (int i = 0; i < B; ++i)
                for (double v : rowvals) {
                    img_data.push_back(v);
                    txt_data.push_back(-v);
                }
            auto img = Tensor<double>::from({B, 3}, img_data);
            auto txt = Tensor<double>::from({B, 3}, txt_data);
            CHECK(clip_symmetric_loss(img, txt, log_unit).item() ==
                  doctest::Approx(std::log(static_cast<double>(B))).epsilon(1e-9));
        }
    }
    SUBCASE("saturated alignment gives ~0") {
        // Orthogonal-sign unit features and inverse temperature 30: the
        // similarity matrix is +30 on the diagonal, -30 off it.
        auto img = Tensor<double>::from({2, 2}, {1, 0, -1, 0});
        auto txt = Tensor<double>::from({2, 2}, {1, 0, -1, 0});
        Tensor<double> log_30 = Tensor<double>::scalar(std::log(30.0));
        CHECK(clip_symmetric_loss(img, txt, log_30).item() == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("loss is non-negative and symmetric in the two batches") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            const int B = 2 + static_cast<int>(rng.below(4));
            auto img = randn<double>({B, 6}, rng, 1.0);
            auto txt = randn<double>({B, 6}, rng, 1.0);
            Tensor<double> lit = Tensor<double>::scalar(rng.uniform(-1.0, 2.0));
            const double fwd = clip_symmetric_loss(img, txt, lit).item();
            const double swapped = clip_symmetric_loss(txt, img, lit).item();
            CHECK(fwd >= 0.0);
            CHECK(fwd == doctest::Approx(swapped).epsilon(1e-9));
        }
    }
    SUBCASE("batch of one is rejected") {
        auto img = Tensor<double>::from({1, 2}, {1, 0});
        CHECK_THROWS_AS(clip_symmetric_loss(img, img, log_unit), ShapeError);
    }
}

TEST_CASE("gradcheck through both encoders") {
    // Tiny atlas and text encoder in double precision.
    GlyphAtlas atlas;
    atlas.side = 10;
    Rng pix(5);
    for (char32_t c : {U'日', U'月', U'山'}) {
        std::vector<double> bm(100);
        for (double& v : bm) v = pix.uniform();
        atlas.insert(c, std::move(bm));
    }
    std::set<char32_t> chars;
    for (char32_t c : utf8_decode("日月山光亮高")) chars.insert(c);
    Vocab v = Vocab::from_chars(chars);
    EncoderConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.max_len = 16;
    cfg.vocab_size = v.size();
    EncoderModel<double> text_model = EncoderModel<double>::init(cfg, Rng(31));
    SequenceEncoder<double> text_enc{&text_model, &v, nullptr};
    GlyphEncoder<double> glyph_enc = GlyphEncoder<double>::init(atlas.side, cfg.d, Rng(32), 2, 3);
    Tensor<double> log_it = init_log_inv_temp<double>();

    std::vector<GlyphPairing> batch = {{U'日', "光亮"}, {U'月', "夜光"}, {U'山', "高地"}};
    auto forward = [&] {
        return glyph_contrastive_loss(batch, glyph_enc, text_enc, atlas, log_it);
    };
    std::vector<Tensor<double>> wrt = glyph_enc.params();
    for (auto& p : text_model.params()) wrt.push_back(p);
    wrt.push_back(log_it);
    CHECK(gradcheck_max_err(forward, wrt, 3e-4) < 1e-4);
}

TEST_CASE("after toy alignment, augmented views stay closer than other characters") {
    GlyphAtlas atlas = GlyphAtlas::load(kAtlasPath);
    Vocab v = glyph_vocab();
    EncoderConfig cfg;
    cfg.d = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.max_len = 16;
    cfg.vocab_size = v.size();
    EncoderModel<float> text_model = EncoderModel<float>::init(cfg, Rng(41));
    SequenceEncoder<float> text_enc{&text_model, &v, nullptr};
    GlyphEncoder<float> glyph_enc = GlyphEncoder<float>::init(atlas.side, cfg.d, Rng(42), 4, 8);
    Tensor<float> log_it = init_log_inv_temp<float>();

    std::vector<GlyphPairing> batch = {
        {U'大', "体积大的"}, {U'小', "体积小的"}, {U'明', "明亮的"},
        {U'猫', "捕鼠动物"}, {U'刀', "切割器具"}, {U'灯', "照明器具"},
    };
    std::vector<Tensor<float>> params = glyph_enc.params();
    for (auto& p : text_model.params()) params.push_back(p);
    params.push_back(log_it);
    AdamWConfig opt_cfg;
    opt_cfg.lr = 2e-3;
    AdamW<float> opt(params, opt_cfg);
    for (int step = 0; step < 40; ++step) {
        Tape<float> tape;
        {
            TapeScope<float> scope(tape);
            Tensor<float> loss = glyph_contrastive_loss(batch, glyph_enc, text_enc, atlas, log_it);
            tape.backward(loss);
        }
        opt.step();
        opt.zero_grad();
    }

    // Augmented view of a character should look more like its clean view
    // than like other characters' clean views, on average.
    GlyphAugmentation aug{10.0, 0.9, 0.0};
    double self_sim = 0, cross_sim = 0;
    int n_self = 0, n_cross = 0;
    for (const GlyphPairing& p : batch) {
        Tensor<float> clean = glyph_feature(p.character, glyph_enc, atlas);
        Tensor<float> moved = glyph_feature(p.character, glyph_enc, atlas, aug);
        self_sim += cosine(clean, moved);
        ++n_self;
        for (const GlyphPairing& q : batch) {
            if (q.character == p.character) continue;
            cross_sim += cosine(moved, glyph_feature(q.character, glyph_enc, atlas));
            ++n_cross;
        }
    }
    CHECK(self_sim / n_self > cross_sim / n_cross);
}
