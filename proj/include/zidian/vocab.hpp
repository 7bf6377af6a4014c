#pragma once
// Character vocabulary and the radical table.
//
// Tokenization is one token per Unicode scalar value. The five specials
// occupy fixed ids; everything else is assigned in code-point order so a
// vocabulary built twice from the same corpus is identical.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zidian/dict.hpp"

namespace zidian {

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kMask = 3;
    static constexpr int kUnk = 4;
    static constexpr int kNumSpecials = 5;

    Vocab() = default;

    static Vocab from_chars(const std::set<char32_t>& chars);
    // Every character occurring in surfaces, definitions, examples,
    // synonyms and antonyms.
    static Vocab from_lexicon(const Lexicon& lex);

    // One character per line; line number = id - number of specials.
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return kNumSpecials + static_cast<int>(chars_.size()); }
    int id_of(char32_t c) const {
        auto it = ids_.find(c);
        return it == ids_.end() ? kUnk : it->second;
    }
    // U+0000 for specials and out-of-range ids.
    char32_t char_of(int id) const {
        int i = id - kNumSpecials;
        if (i < 0 || i >= static_cast<int>(chars_.size())) return 0;
        return chars_[static_cast<size_t>(i)];
    }
    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

private:
    std::vector<char32_t> chars_;
    std::unordered_map<char32_t, int> ids_;
};

// Character -> radical mapping plus the radical id space. Id 0 is reserved
// for NO_RADICAL (specials, unknown characters, characters without an
// assigned radical).
class RadicalTable {
public:
    static constexpr int kNoRadical = 0;

    RadicalTable() = default;

    // TSV, one "character<TAB>radical" per line, UTF-8.
    static RadicalTable load_tsv(const std::string& path);
    static RadicalTable from_pairs(const std::vector<std::pair<char32_t, char32_t>>& pairs);

    int radical_vocab_size() const { return 1 + static_cast<int>(radicals_.size()); }
    int radical_id(char32_t c) const {
        auto it = char_to_rid_.find(c);
        return it == char_to_rid_.end() ? kNoRadical : it->second;
    }
    // U+0000 when the character has no radical assigned.
    char32_t radical_of(char32_t c) const {
        auto it = char_to_radical_.find(c);
        return it == char_to_radical_.end() ? 0 : it->second;
    }
    size_t size() const { return char_to_radical_.size(); }

private:
    void build_index();

    std::vector<char32_t> radicals_;  // rid - 1 -> radical char, code-point order
    std::unordered_map<char32_t, char32_t> char_to_radical_;
    std::unordered_map<char32_t, int> char_to_rid_;
};

// Per-token radical ids. Specials and characters absent from the table map
// to NO_RADICAL.
std::vector<int> radical_ids_for(const std::vector<int>& token_ids, const Vocab& vocab,
                                 const RadicalTable& radicals);

}  // namespace zidian
