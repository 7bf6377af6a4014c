#pragma once
// Dictionary store: parse, validate, index and query the knowledge base.
//
// Entries live in a vector in ingest order (lookup goes through a side
// index), and a code-point trie over the surfaces drives forward maximum
// matching. A Lexicon is immutable once built, so concurrent readers are
// fine.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace zidian {

struct DictError : std::runtime_error {
    explicit DictError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Sense {
    std::string definition;
    std::vector<std::string> examples;
};

struct DictEntry {
    std::string surface;
    std::vector<Sense> senses;  // order is load-bearing: gold indices depend on it
    std::vector<std::string> synonyms;
    std::vector<std::string> antonyms;
    std::string radical;  // optional metadata, may be empty
};

// Match span in character offsets; [start, end) of the input text.
struct EntryMatch {
    std::string surface;
    int start = 0;
    int end = 0;
};

struct IngestConfig {
    bool strict = false;     // malformed record syntax is fatal instead of skipped
    size_t max_entries = 0;  // 0 = unlimited
};

struct IngestIssue {
    int line = 0;
    std::string reason;
    bool rejected = false;  // false = kept with a warning
};

struct IngestReport {
    std::vector<IngestIssue> issues;
    size_t accepted = 0;
    size_t rejected = 0;
    size_t warnings = 0;

    // One "line <n>: <reason>" per issue.
    std::string to_text() const;
};

class Lexicon {
public:
    Lexicon() = default;

    static Lexicon build(std::vector<DictEntry> entries);

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<DictEntry>& entries() const { return entries_; }
    const DictEntry& entry(size_t i) const { return entries_[i]; }

    const DictEntry* find(std::string_view surface) const;
    int index_of(std::string_view surface) const;  // -1 when absent

    // Longest trie hit starting at text[pos]; 0 when none.
    int longest_match_len(const std::vector<char32_t>& text, size_t pos) const;

private:
    struct TrieNode {
        std::map<char32_t, int> next;
        bool terminal = false;
    };

    std::vector<DictEntry> entries_;
    std::unordered_map<std::string, int> index_;
    std::vector<TrieNode> trie_;
};

// Parses line-delimited JSON records into a validated Lexicon.
// Records that violate invariants are rejected and reported with their line
// number; duplicates keep the first occurrence. Examples that do not
// contain the owning surface and self-referencing synonyms/antonyms are
// flagged but do not reject the record (self references are dropped to keep
// the invariant).
std::pair<Lexicon, IngestReport> ingest(const std::string& path, const IngestConfig& cfg = {});

// Same validation applied to already-parsed entries (used by tests and by
// serialization round-trips).
std::pair<Lexicon, IngestReport> build_lexicon(std::vector<DictEntry> raw,
                                               const IngestConfig& cfg = {});

// Forward maximum matching, left to right: at each character position emit
// the longest entry starting there and jump past it, else advance one
// character. Matches never overlap and come back sorted by start.
std::vector<EntryMatch> match_entries(const std::string& text, const Lexicon& lex);

// K (sense count) -> number of entries with K senses.
std::map<int, int> sense_count_histogram(const Lexicon& lex);

// One JSON record per line, in entry order; inverse of ingest.
void save_jsonl(const Lexicon& lex, const std::string& path);

}  // namespace zidian
