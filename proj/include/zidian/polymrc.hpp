#pragma once
// PolyMRC: build polysemy multiple-choice instances from a dictionary,
// split by entry, enforce pre-training/test separation, sample few-shot
// sets, and evaluate accuracy.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "zidian/dict.hpp"

namespace zidian {

struct PolyMRCError : std::runtime_error {
    explicit PolyMRCError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PolyMRCInstance {
    std::string entry;
    std::string context;                // the example sentence, contains the entry
    std::vector<std::string> choices;   // K >= 2 pairwise-distinct definitions
    int gold = 0;
};

// Splitting is by entry, never by instance, so no test entry's other
// examples can leak into train.
struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    uint64_t seed = 0;
};

struct SplitStats {
    size_t count = 0;
    double avg_len = 0.0;  // average context length in characters
};

struct PolyMRCDataset {
    std::vector<PolyMRCInstance> train, val, test;
    SplitStats train_stats, val_stats, test_stats;
};

// One instance per (multi-sense entry, example). Senses whose normalized
// definitions repeat collapse to a single choice with the gold index
// remapped; entries left with fewer than two distinct choices drop out.
// Contexts longer than max_context_chars truncate to a window centered on
// the first occurrence of the entry.
PolyMRCDataset build_polymrc(const Lexicon& lex, const SplitSpec& spec,
                             int max_context_chars = 256);

// Lexicon minus every entry that appears in the given test instances.
std::pair<Lexicon, size_t> filter_pretrain_overlap(const Lexicon& pretrain_lex,
                                                   const std::vector<PolyMRCInstance>& test);

// n_seeds independently-seeded samples of n_per_task instances each.
std::vector<std::vector<PolyMRCInstance>> sample_few_shot(
    const std::vector<PolyMRCInstance>& train, int n_per_task, int n_seeds, uint64_t seed);

using ChoiceScorer = std::function<std::vector<double>(const PolyMRCInstance&)>;

struct PolyMRCEvalResult {
    double accuracy = 0.0;
    size_t total = 0;
    size_t correct = 0;
    // K -> (correct, total)
    std::map<int, std::pair<size_t, size_t>> per_choice_count;
};

PolyMRCEvalResult evaluate_polymrc(const ChoiceScorer& scorer,
                                   const std::vector<PolyMRCInstance>& instances);

// Instance JSONL: {"entry": s, "context": s, "choices": [...], "gold": i}.
void save_instances_jsonl(const std::string& path, const std::vector<PolyMRCInstance>& instances);
std::vector<PolyMRCInstance> load_instances_jsonl(const std::string& path);

// Soft check for full-scale builds: split instance counts in an 8:1:1
// shape (val and test each within a third of their 10% share) and average
// context length within 20% of the 38.5-character reference.
struct ShapeCheck {
    bool ratio_ok = false;
    bool avg_len_ok = false;
    double val_share = 0, test_share = 0, avg_len = 0;
};
ShapeCheck polymrc_shape_check(const PolyMRCDataset& ds);

}  // namespace zidian
