#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "zidian/polymrc.hpp"
#include "zidian/rng.hpp"
#include "zidian/utf8.hpp"

using namespace zidian;

namespace {

const std::string kFixtureDict = std::string(ZIDIAN_FIXTURE_DIR) + "/dict_toy.jsonl";

DictEntry entry_with(const std::string& surface, std::vector<std::pair<std::string, int>> defs) {
    // defs: (definition, number of examples)
    DictEntry e;
    e.surface = surface;
    int n = 0;
    for (auto& [d, k] : defs) {
        Sense s;
        s.definition = d;
        for (int i = 0; i < k; ++i)
            s.examples.push_back("第" + std::to_string(++n) + "次提到" + surface + "。");
        e.senses.push_back(std::move(s));
    }
    return e;
}

Lexicon fixture_lexicon() {
    auto [lex, report] = ingest(kFixtureDict);
    REQUIRE(report.rejected == 0);
    return lex;
}

}  // namespace

TEST_CASE("build enumerates (multi-sense entry, example) pairs") {
    std::vector<DictEntry> entries;
    entries.push_back(entry_with("甲", {{"解释一", 1}, {"解释二", 1}, {"解释三", 1}}));
    entries.push_back(entry_with("乙", {{"只有一个解释", 3}}));
    Lexicon lex = Lexicon::build(std::move(entries));
    SplitSpec spec;
    spec.train = 1.0;
    spec.val = 0.0;
    spec.test = 0.0;
    PolyMRCDataset ds = build_polymrc(lex, spec);
    CHECK(ds.train.size() == 3);  // single-sense entries contribute nothing
    for (const auto& inst : ds.train) {
        CHECK(inst.entry == "甲");
        CHECK(inst.choices.size() == 3);
        CHECK(inst.context.find(inst.entry) != std::string::npos);
    }
    CHECK(ds.val.empty());
    CHECK(ds.test.empty());
}

TEST_CASE("duplicate definitions collapse with gold remapped") {
    std::vector<DictEntry> entries;
    entries.push_back(entry_with("丙", {{"同一个讲法", 1}, {"同一个讲法", 1}, {"另一个讲法", 1}}));
    Lexicon lex = Lexicon::build(std::move(entries));
    SplitSpec spec{1.0, 0.0, 0.0, 0};
    PolyMRCDataset ds = build_polymrc(lex, spec);
    REQUIRE(ds.train.size() == 3);
    for (const auto& inst : ds.train) {
        CHECK(inst.choices.size() == 2);
        CHECK(inst.choices[0] == "同一个讲法");
        CHECK(inst.choices[1] == "另一个讲法");
    }
    CHECK(ds.train[0].gold == 0);
    CHECK(ds.train[1].gold == 0);  // second sense remaps onto the first choice
    CHECK(ds.train[2].gold == 1);
}

TEST_CASE("entries whose senses all collapse are ineligible") {
    std::vector<DictEntry> entries;
    entries.push_back(entry_with("丁", {{"一样", 1}, {"一样", 1}}));
    Lexicon lex = Lexicon::build(std::move(entries));
    CHECK_THROWS_AS(build_polymrc(lex, SplitSpec{1.0, 0.0, 0.0, 0}), PolyMRCError);
}

TEST_CASE("long contexts truncate to a window containing the entry") {
    std::vector<DictEntry> entries;
    DictEntry e = entry_with("戊", {{"讲法甲", 0}, {"讲法乙", 0}});
    std::string filler;
    for (int i = 0; i < 100; ++i) filler += "废";
    e.senses[0].examples.push_back(filler + "戊" + filler);
    e.senses[1].examples.push_back("戊" + filler + filler);
    entries.push_back(std::move(e));
    Lexicon lex = Lexicon::build(std::move(entries));
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{1.0, 0.0, 0.0, 0}, 40);
    REQUIRE(ds.train.size() == 2);
    for (const auto& inst : ds.train) {
        CHECK(utf8_length(inst.context) == 40);
        CHECK(inst.context.find("戊") != std::string::npos);
    }
}

TEST_CASE("split is by entry and deterministic") {
    Lexicon lex = fixture_lexicon();
    SplitSpec spec;
    spec.seed = 12;
    PolyMRCDataset a = build_polymrc(lex, spec);
    PolyMRCDataset b = build_polymrc(lex, spec);

    // Pure function: identical outputs for identical inputs.
    REQUIRE(a.train.size() == b.train.size());
    REQUIRE(a.test.size() == b.test.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].entry == b.train[i].entry);
        CHECK(a.train[i].context == b.train[i].context);
        CHECK(a.train[i].gold == b.train[i].gold);
    }

    // No surface appears in two splits.
    std::set<std::string> train_e, val_e, test_e;
    for (const auto& i : a.train) train_e.insert(i.entry);
    for (const auto& i : a.val) val_e.insert(i.entry);
    for (const auto& i : a.test) test_e.insert(i.entry);
    for (const auto& s : val_e) CHECK(train_e.count(s) == 0);
    for (const auto& s : test_e) {
        CHECK(train_e.count(s) == 0);
        CHECK(val_e.count(s) == 0);
    }
    CHECK(!a.train.empty());
    CHECK(!a.val.empty());
    CHECK(!a.test.empty());
}

TEST_CASE("invalid split ratios are rejected") {
    Lexicon lex = fixture_lexicon();
    CHECK_THROWS_AS(build_polymrc(lex, SplitSpec{0.5, 0.1, 0.1, 0}), PolyMRCError);
    CHECK_THROWS_AS(build_polymrc(Lexicon(), SplitSpec{}), PolyMRCError);
}

TEST_CASE("fixture stats match an independent scan") {
    // Oracle: count eligible instances straight off the JSONL, with the
    // same eligibility rule (>= 2 distinct normalized definitions, example
    // contains surface).
    std::ifstream in(kFixtureDict);
    REQUIRE(in);
    size_t expected_instances = 0;
    double expected_len_sum = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line);
        const std::string surface = rec.at("entry").get<std::string>();
        std::set<std::string> distinct;
        for (const auto& s : rec.at("senses")) distinct.insert(s.at("definition").get<std::string>());
        if (distinct.size() < 2) continue;
        for (const auto& s : rec.at("senses")) {
            if (!s.contains("examples")) continue;
            for (const auto& ex : s.at("examples")) {
                const std::string ctx = ex.get<std::string>();
                if (ctx.find(surface) == std::string::npos) continue;
                ++expected_instances;
                expected_len_sum += static_cast<double>(utf8_length(ctx));
            }
        }
    }
    REQUIRE(expected_instances > 0);

    Lexicon lex = fixture_lexicon();
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{});
    const size_t total = ds.train.size() + ds.val.size() + ds.test.size();
    CHECK(total == expected_instances);

    const double avg =
        (ds.train_stats.avg_len * static_cast<double>(ds.train_stats.count) +
         ds.val_stats.avg_len * static_cast<double>(ds.val_stats.count) +
         ds.test_stats.avg_len * static_cast<double>(ds.test_stats.count)) /
        static_cast<double>(total);
    CHECK(avg == doctest::Approx(expected_len_sum / expected_instances).epsilon(1e-9));
}

TEST_CASE("filter_pretrain_overlap") {
    Lexicon lex = fixture_lexicon();
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{});
    REQUIRE(!ds.test.empty());

    SUBCASE("disjoint inputs are untouched") {
        std::vector<DictEntry> other;
        DictEntry e = entry_with("完全无关词", {{"别的解释", 1}});
        other.push_back(e);
        Lexicon small = Lexicon::build(std::move(other));
        auto [pruned, removed] = filter_pretrain_overlap(small, ds.test);
        CHECK(removed == 0);
        CHECK(pruned.size() == 1);
    }
    SUBCASE("test entries are removed and the intersection is empty") {
        auto [pruned, removed] = filter_pretrain_overlap(lex, ds.test);
        std::set<std::string> test_surfaces;
        for (const auto& i : ds.test) test_surfaces.insert(i.entry);
        CHECK(removed == test_surfaces.size());
        CHECK(pruned.size() == lex.size() - removed);
        for (const DictEntry& e : pruned.entries()) CHECK(test_surfaces.count(e.surface) == 0);
        for (const auto& s : test_surfaces) CHECK(pruned.find(s) == nullptr);
    }
}

TEST_CASE("few-shot sampling") {
    Lexicon lex = fixture_lexicon();
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{});
    REQUIRE(ds.train.size() >= 10);

    auto sets = sample_few_shot(ds.train, 10, 3, 77);
    REQUIRE(sets.size() == 3);
    for (const auto& s : sets) CHECK(s.size() == 10);

    auto again = sample_few_shot(ds.train, 10, 3, 77);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 10; ++i) {
            CHECK(sets[k][i].entry == again[k][i].entry);
            CHECK(sets[k][i].context == again[k][i].context);
        }

    // Distinct seed sets differ somewhere (overwhelmingly likely on a
    // large pool; validated on a 1000-instance pool in the acceptance run).
    bool any_diff = false;
    for (int i = 0; i < 10 && !any_diff; ++i)
        any_diff = sets[0][i].context != sets[1][i].context;
    CHECK(any_diff);

    CHECK_THROWS_AS(sample_few_shot(ds.train, static_cast<int>(ds.train.size()) + 1, 1, 0),
                    PolyMRCError);
}

TEST_CASE("few-shot seed sets differ pairwise on a 1000-instance pool") {
    std::vector<PolyMRCInstance> pool;
    for (int i = 0; i < 1000; ++i) {
        PolyMRCInstance inst;
        inst.entry = "条目" + std::to_string(i);
        inst.context = "上下文" + std::to_string(i);
        inst.choices = {"甲", "乙"};
        inst.gold = i % 2;
        pool.push_back(std::move(inst));
    }
    auto sets = sample_few_shot(pool, 10, 3, 31337);
    for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
            bool differ = false;
            for (int i = 0; i < 10 && !differ; ++i)
                differ = sets[static_cast<size_t>(a)][static_cast<size_t>(i)].context !=
                         sets[static_cast<size_t>(b)][static_cast<size_t>(i)].context;
            CHECK(differ);
        }
    }
}

TEST_CASE("evaluate: oracle, constant and random scorers") {
    Lexicon lex = fixture_lexicon();
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{});
    const auto& pool = ds.train;
    REQUIRE(!pool.empty());

    ChoiceScorer oracle = [](const PolyMRCInstance& inst) {
        std::vector<double> s(inst.choices.size(), 0.0);
        s[static_cast<size_t>(inst.gold)] = 1.0;
        return s;
    };
    PolyMRCEvalResult r = evaluate_polymrc(oracle, pool);
    CHECK(r.accuracy == 1.0);
    CHECK(r.total == pool.size());
    size_t per_k_total = 0;
    for (auto& [k, bucket] : r.per_choice_count) {
        CHECK(k >= 2);
        CHECK(bucket.first == bucket.second);
        per_k_total += bucket.second;
    }
    CHECK(per_k_total == pool.size());

    ChoiceScorer anti = [](const PolyMRCInstance& inst) {
        std::vector<double> s(inst.choices.size(), 1.0);
        s[static_cast<size_t>(inst.gold)] = 0.0;
        return s;
    };
    CHECK(evaluate_polymrc(anti, pool).accuracy == 0.0);

    // A constant scorer always picks index 0.
    ChoiceScorer constant = [](const PolyMRCInstance& inst) {
        return std::vector<double>(inst.choices.size(), 0.0);
    };
    size_t gold_zero = 0;
    for (const auto& inst : pool)
        if (inst.gold == 0) ++gold_zero;
    CHECK(evaluate_polymrc(constant, pool).accuracy ==
          doctest::Approx(static_cast<double>(gold_zero) / pool.size()));

    CHECK_THROWS_AS(evaluate_polymrc(constant, {}), PolyMRCError);
}

TEST_CASE("instances round trip through JSONL") {
    Lexicon lex = fixture_lexicon();
    PolyMRCDataset ds = build_polymrc(lex, SplitSpec{});
    const std::string path = "instances_rt.jsonl";
    save_instances_jsonl(path, ds.val);
    auto loaded = load_instances_jsonl(path);
    REQUIRE(loaded.size() == ds.val.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].entry == ds.val[i].entry);
        CHECK(loaded[i].context == ds.val[i].context);
        CHECK(loaded[i].choices == ds.val[i].choices);
        CHECK(loaded[i].gold == ds.val[i].gold);
    }
    std::remove(path.c_str());
}
