#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "zidian/objectives.hpp"
#include "zidian/retrieval.hpp"
#include "zidian/utf8.hpp"

using namespace zidian;

namespace {

DictEntry make_entry(const std::string& surface, std::vector<std::string> defs) {
    DictEntry e;
    e.surface = surface;
    for (auto& d : defs) e.senses.push_back({d, {"说到" + surface + "就想起" + d + "。"}});
    return e;
}

struct Toy {
    Lexicon lex;
    Vocab vocab;
    EncoderModel<float> model;
    SequenceEncoder<float> enc;

    Toy() {
        std::vector<DictEntry> entries;
        entries.push_back(make_entry("东西", {"具体的事物", "两个方向"}));
        entries.push_back(make_entry("面子", {"物体的表面", "体面荣誉", "情面"}));
        entries.push_back(make_entry("灯", {"照明的器具"}));
        entries.push_back(make_entry("同解", {"解释甲", "解释甲", "解释甲"}));
        lex = Lexicon::build(std::move(entries));
        vocab = Vocab::from_lexicon(lex);
        EncoderConfig cfg;
        cfg.d = 16;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.ffn_mult = 2;
        cfg.max_len = 64;
        cfg.vocab_size = vocab.size();
        model = EncoderModel<float>::init(cfg, Rng(501));
        enc = {&model, &vocab, nullptr};
    }
};

}  // namespace

TEST_CASE("retrieve on text without lexicon entries is empty") {
    Toy toy;
    CHECK(retrieve("完全无关的话", toy.lex, toy.enc).empty());
}

TEST_CASE("single-sense matches get weight one and their sense vector") {
    Toy toy;
    auto scores = retrieve("屋里的灯亮了", toy.lex, toy.enc);
    REQUIRE(scores.size() == 1);
    CHECK(scores[0].match.surface == "灯");
    REQUIRE(scores[0].weights.size() == 1);
    CHECK(scores[0].weights[0] == 1.0);
    Tensor<float> expect = toy.enc.cls_pair("灯", "照明的器具");
    REQUIRE(scores[0].pooled.numel() == expect.numel());
    for (int64_t i = 0; i < expect.numel(); ++i)
        CHECK(scores[0].pooled.data()[i] == expect.data()[i]);
}

TEST_CASE("identical definitions get uniform weights") {
    Toy toy;
    auto scores = retrieve("这个同解很难", toy.lex, toy.enc);
    REQUIRE(scores.size() == 1);
    REQUIRE(scores[0].weights.size() == 3);
    for (double w : scores[0].weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("retrieve weights form a simplex and pooled is the weighted sum") {
    Toy toy;
    auto scores = retrieve("他买的东西很有面子", toy.lex, toy.enc);
    REQUIRE(scores.size() == 2);
    for (const auto& s : scores) {
        double sum = 0;
        for (double w : s.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        const DictEntry* e = toy.lex.find(s.match.surface);
        REQUIRE(e != nullptr);
        REQUIRE(s.weights.size() == e->senses.size());
        std::vector<double> manual(16, 0.0);
        for (size_t k = 0; k < e->senses.size(); ++k) {
            Tensor<float> v = toy.enc.cls_pair(e->surface, e->senses[k].definition);
            for (int i = 0; i < 16; ++i) manual[i] += s.weights[k] * v.data()[i];
        }
        for (int i = 0; i < 16; ++i)
            CHECK(s.pooled.data()[i] == doctest::Approx(manual[i]).epsilon(1e-4));
    }
}

TEST_CASE("fuse without matches degrades to the zero dictionary vector") {
    Toy toy;
    TaskHead<float> head = TaskHead<float>::init(32, 2, Rng(3));
    auto [rep, logits] = fuse("完全无关的话", toy.lex, toy.enc, head);
    CHECK(rep.fused.shape() == std::vector<int>{32});
    for (int i = 0; i < 16; ++i) CHECK(rep.dict.data()[i] == 0.0f);
    // fused = lm ++ dict, lm part first
    for (int i = 0; i < 16; ++i) CHECK(rep.fused.data()[i] == rep.lm.data()[i]);
    for (int i = 16; i < 32; ++i) CHECK(rep.fused.data()[i] == 0.0f);
    // logits equal the head applied to lm ++ 0
    Tensor<float> manual = head.logits(rep.fused);
    REQUIRE(logits.numel() == manual.numel());
    for (int64_t i = 0; i < logits.numel(); ++i) CHECK(logits.data()[i] == manual.data()[i]);
}

TEST_CASE("fuse is deterministic") {
    Toy toy;
    TaskHead<float> head = TaskHead<float>::init(32, 2, Rng(3));
    auto [rep1, l1] = fuse("他买的东西不少", toy.lex, toy.enc, head);
    auto [rep2, l2] = fuse("他买的东西不少", toy.lex, toy.enc, head);
    for (int64_t i = 0; i < l1.numel(); ++i) CHECK(l1.data()[i] == l2.data()[i]);
    for (int64_t i = 0; i < rep1.fused.numel(); ++i)
        CHECK(rep1.fused.data()[i] == rep2.fused.data()[i]);
}

TEST_CASE("score_choices symmetry, tie break, permutation invariance") {
    Toy toy;
    SUBCASE("identical choices score identically; ties resolve to index 0") {
        std::vector<std::string> twins = {"一样的解释", "一样的解释"};
        auto scores = score_choices("他看着东西发呆", "东西", twins, toy.enc);
        REQUIRE(scores.size() == 2);
        CHECK(scores[0] == doctest::Approx(scores[1]).epsilon(1e-7));
        CHECK(argmax_lowest(scores) == 0);
    }
    SUBCASE("permuting choices permutes scores") {
        std::vector<std::string> choices = {"具体的事物", "两个方向", "完全别的意思"};
        auto base = score_choices("这东西真不错", "东西", choices, toy.enc);
        std::vector<std::string> perm = {choices[2], choices[0], choices[1]};
        auto moved = score_choices("这东西真不错", "东西", perm, toy.enc);
        CHECK(moved[0] == doctest::Approx(base[2]).epsilon(1e-6));
        CHECK(moved[1] == doctest::Approx(base[0]).epsilon(1e-6));
        CHECK(moved[2] == doctest::Approx(base[1]).epsilon(1e-6));
    }
    SUBCASE("fewer than two choices is rejected") {
        CHECK_THROWS_AS(score_choices("文本", "东西", {"唯一解释"}, toy.enc), ShapeError);
    }
}

TEST_CASE("score_choices agrees with el_loss attention") {
    Toy toy;
    const int idx = toy.lex.index_of("东西");
    const DictEntry& e = toy.lex.entry(idx);
    ELItem item{idx, 0, "他买了一堆东西回家。"};
    ELResult<float> r = el_loss(item, toy.lex, toy.enc);

    std::vector<std::string> defs;
    for (const Sense& s : e.senses) defs.push_back(s.definition);
    auto scores = score_choices(item.example, e.surface, defs, toy.enc);

    // softmax of score_choices logits reproduces the EL attention row.
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double denom = 0;
    for (double s : scores) denom += std::exp(s - mx);
    for (size_t k = 0; k < scores.size(); ++k) {
        const double p = std::exp(scores[k] - mx) / denom;
        CHECK(p == doctest::Approx(static_cast<double>(r.attention.data()[k])).epsilon(1e-6));
    }
}

TEST_CASE("head-only fusion training runs deterministically") {
    Toy toy;
    std::vector<FuseExample> data = {
        {"灯下看东西", 0}, {"他讲面子", 1}, {"屋里有灯", 0}, {"爱面子的人", 1},
        {"买东西回家", 0}, {"给他留面子", 1}, {"灯光很亮", 0}, {"面子上过不去", 1},
    };
    FuseTrainResult a = train_fused_classifier(data, toy.lex, toy.enc, true, 9, 50, 0.05);
    FuseTrainResult b = train_fused_classifier(data, toy.lex, toy.enc, true, 9, 50, 0.05);
    CHECK(a.final_loss == b.final_loss);
    CHECK(a.feature_dim == 32);
    CHECK(a.final_loss < a.first_loss);

    FuseTrainResult base = train_fused_classifier(data, toy.lex, toy.enc, false, 9, 50, 0.05);
    CHECK(base.feature_dim == 16);
}
