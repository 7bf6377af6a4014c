#include "zidian/polymrc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "zidian/retrieval.hpp"
#include "zidian/rng.hpp"
#include "zidian/utf8.hpp"

namespace zidian {

using nlohmann::json;

namespace {

// Truncates to a window of max_chars centered on the first occurrence of
// the surface; the occurrence always survives.
std::string center_truncate(const std::string& context, const std::string& surface,
                            int max_chars) {
    const std::vector<char32_t> cps = utf8_decode(context);
    if (static_cast<int>(cps.size()) <= max_chars) return context;
    const std::vector<char32_t> surf = utf8_decode(surface);
    int occ = 0;
    for (size_t i = 0; i + surf.size() <= cps.size(); ++i) {
        if (std::equal(surf.begin(), surf.end(), cps.begin() + static_cast<long>(i))) {
            occ = static_cast<int>(i);
            break;
        }
    }
    const int center = occ + static_cast<int>(surf.size()) / 2;
    int start = center - max_chars / 2;
    start = std::max(0, std::min(start, static_cast<int>(cps.size()) - max_chars));
    std::vector<char32_t> window(cps.begin() + start, cps.begin() + start + max_chars);
    return utf8_encode(window);
}

SplitStats stats_for(const std::vector<PolyMRCInstance>& v) {
    SplitStats s;
    s.count = v.size();
    if (v.empty()) return s;
    double total = 0;
    for (const PolyMRCInstance& i : v) total += static_cast<double>(utf8_length(i.context));
    s.avg_len = total / static_cast<double>(v.size());
    return s;
}

}  // namespace

PolyMRCDataset build_polymrc(const Lexicon& lex, const SplitSpec& spec, int max_context_chars) {
    if (lex.empty()) throw PolyMRCError("build_polymrc: empty lexicon");
    if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw PolyMRCError("build_polymrc: split ratios must sum to 1");

    // Instances grouped per eligible entry, in lexicon order.
    std::vector<std::vector<PolyMRCInstance>> per_entry;
    for (const DictEntry& e : lex.entries()) {
        if (e.senses.size() < 2) continue;

        // Collapse duplicate definitions, keep the original order.
        std::vector<std::string> choices;
        std::vector<int> remap(e.senses.size());
        for (size_t s = 0; s < e.senses.size(); ++s) {
            const std::string norm = normalize_whitespace(e.senses[s].definition);
            int idx = -1;
            for (size_t c = 0; c < choices.size(); ++c)
                if (choices[c] == norm) {
                    idx = static_cast<int>(c);
                    break;
                }
            if (idx < 0) {
                choices.push_back(norm);
                idx = static_cast<int>(choices.size()) - 1;
            }
            remap[s] = idx;
        }
        if (choices.size() < 2) continue;

        std::vector<PolyMRCInstance> group;
        for (size_t s = 0; s < e.senses.size(); ++s) {
            for (const std::string& ex : e.senses[s].examples) {
                if (ex.find(e.surface) == std::string::npos) continue;
                PolyMRCInstance inst;
                inst.entry = e.surface;
                inst.context = center_truncate(ex, e.surface, max_context_chars);
                inst.choices = choices;
                inst.gold = remap[s];
                group.push_back(std::move(inst));
            }
        }
        if (!group.empty()) per_entry.push_back(std::move(group));
    }
    if (per_entry.empty()) throw PolyMRCError("build_polymrc: no entry has multiple senses with examples");

    std::vector<size_t> order(per_entry.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng(spec.seed).fork("polymrc_split");
    rng.shuffle(order);

    const size_t n = order.size();
    const size_t n_val = static_cast<size_t>(std::floor(spec.val * static_cast<double>(n)));
    const size_t n_test = static_cast<size_t>(std::floor(spec.test * static_cast<double>(n)));
    const size_t n_train = n - n_val - n_test;

    PolyMRCDataset out;
    for (size_t i = 0; i < n; ++i) {
        auto& group = per_entry[order[i]];
        auto* dest = i < n_train ? &out.train : i < n_train + n_val ? &out.val : &out.test;
        for (auto& inst : group) dest->push_back(std::move(inst));
    }
    out.train_stats = stats_for(out.train);
    out.val_stats = stats_for(out.val);
    out.test_stats = stats_for(out.test);
    return out;
}

std::pair<Lexicon, size_t> filter_pretrain_overlap(const Lexicon& pretrain_lex,
                                                   const std::vector<PolyMRCInstance>& test) {
    std::unordered_set<std::string> held_out;
    for (const PolyMRCInstance& i : test) held_out.insert(i.entry);
    std::vector<DictEntry> kept;
    size_t removed = 0;
    for (const DictEntry& e : pretrain_lex.entries()) {
        if (held_out.count(e.surface)) {
            ++removed;
        } else {
            kept.push_back(e);
        }
    }
    return {Lexicon::build(std::move(kept)), removed};
}

std::vector<std::vector<PolyMRCInstance>> sample_few_shot(
    const std::vector<PolyMRCInstance>& train, int n_per_task, int n_seeds, uint64_t seed) {
    if (static_cast<int>(train.size()) < n_per_task)
        throw PolyMRCError("sample_few_shot: only " + std::to_string(train.size()) +
                           " instances for " + std::to_string(n_per_task) + "-shot sampling");
    std::vector<std::vector<PolyMRCInstance>> out;
    for (int s = 0; s < n_seeds; ++s) {
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng = Rng(seed).fork("few_shot", static_cast<uint64_t>(s));
        rng.shuffle(order);
        std::vector<PolyMRCInstance> shots;
        for (int i = 0; i < n_per_task; ++i) shots.push_back(train[order[static_cast<size_t>(i)]]);
        out.push_back(std::move(shots));
    }
    return out;
}

PolyMRCEvalResult evaluate_polymrc(const ChoiceScorer& scorer,
                                   const std::vector<PolyMRCInstance>& instances) {
    if (instances.empty()) throw PolyMRCError("evaluate_polymrc: no instances");
    PolyMRCEvalResult result;
    for (const PolyMRCInstance& inst : instances) {
        const std::vector<double> scores = scorer(inst);
        if (scores.size() != inst.choices.size())
            throw PolyMRCError("scorer returned " + std::to_string(scores.size()) +
                               " scores for " + std::to_string(inst.choices.size()) + " choices");
        const int pred = argmax_lowest(scores);
        const int k = static_cast<int>(inst.choices.size());
        auto& bucket = result.per_choice_count[k];
        ++bucket.second;
        ++result.total;
        if (pred == inst.gold) {
            ++bucket.first;
            ++result.correct;
        }
    }
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    return result;
}

void save_instances_jsonl(const std::string& path, const std::vector<PolyMRCInstance>& instances) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw PolyMRCError("cannot open for writing: " + path);
    for (const PolyMRCInstance& inst : instances) {
        json rec;
        rec["entry"] = inst.entry;
        rec["context"] = inst.context;
        rec["choices"] = inst.choices;
        rec["gold"] = inst.gold;
        out << rec.dump() << "\n";
    }
}

ShapeCheck polymrc_shape_check(const PolyMRCDataset& ds) {
    ShapeCheck check;
    const double total = static_cast<double>(ds.train_stats.count + ds.val_stats.count +
                                             ds.test_stats.count);
    if (total == 0) return check;
    check.val_share = static_cast<double>(ds.val_stats.count) / total;
    check.test_share = static_cast<double>(ds.test_stats.count) / total;
    check.ratio_ok = std::abs(check.val_share - 0.1) < 0.1 / 3.0 &&
                     std::abs(check.test_share - 0.1) < 0.1 / 3.0;
    check.avg_len =
        (ds.train_stats.avg_len * static_cast<double>(ds.train_stats.count) +
         ds.val_stats.avg_len * static_cast<double>(ds.val_stats.count) +
         ds.test_stats.avg_len * static_cast<double>(ds.test_stats.count)) /
        total;
    const double reference = 38.5;
    check.avg_len_ok = check.avg_len > reference * 0.8 && check.avg_len < reference * 1.2;
    return check;
}

std::vector<PolyMRCInstance> load_instances_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PolyMRCError("cannot open instances: " + path);
    std::vector<PolyMRCInstance> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json rec = json::parse(line);
            PolyMRCInstance inst;
            inst.entry = rec.at("entry").get<std::string>();
            inst.context = rec.at("context").get<std::string>();
            inst.choices = rec.at("choices").get<std::vector<std::string>>();
            inst.gold = rec.at("gold").get<int>();
            if (inst.choices.size() < 2 || inst.gold < 0 ||
                inst.gold >= static_cast<int>(inst.choices.size()))
                throw PolyMRCError("invalid instance at line " + std::to_string(lineno));
            out.push_back(std::move(inst));
        } catch (const json::exception& e) {
            throw PolyMRCError("malformed instance at line " + std::to_string(lineno) + ": " +
                               e.what());
        }
    }
    return out;
}

}  // namespace zidian
