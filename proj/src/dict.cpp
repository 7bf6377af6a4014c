#include "zidian/dict.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "zidian/utf8.hpp"

namespace zidian {

using nlohmann::json;

std::string IngestReport::to_text() const {
    std::string out;
    for (const auto& issue : issues) {
        out += "line " + std::to_string(issue.line) + ": " + issue.reason + "\n";
    }
    return out;
}

Lexicon Lexicon::build(std::vector<DictEntry> entries) {
    Lexicon lex;
    lex.entries_ = std::move(entries);
    lex.trie_.emplace_back();
    for (size_t i = 0; i < lex.entries_.size(); ++i) {
        const std::string& surf = lex.entries_[i].surface;
        lex.index_.emplace(surf, static_cast<int>(i));
        int node = 0;
        for (char32_t cp : utf8_decode(surf)) {
            auto it = lex.trie_[static_cast<size_t>(node)].next.find(cp);
            if (it == lex.trie_[static_cast<size_t>(node)].next.end()) {
                lex.trie_.emplace_back();
                int fresh = static_cast<int>(lex.trie_.size()) - 1;
                lex.trie_[static_cast<size_t>(node)].next.emplace(cp, fresh);
                node = fresh;
            } else {
                node = it->second;
            }
        }
        lex.trie_[static_cast<size_t>(node)].terminal = true;
    }
    return lex;
}

const DictEntry* Lexicon::find(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    return it == index_.end() ? nullptr : &entries_[static_cast<size_t>(it->second)];
}

int Lexicon::index_of(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    return it == index_.end() ? -1 : it->second;
}

int Lexicon::longest_match_len(const std::vector<char32_t>& text, size_t pos) const {
    if (trie_.empty()) return 0;
    int node = 0;
    int best = 0;
    for (size_t i = pos; i < text.size(); ++i) {
        auto it = trie_[static_cast<size_t>(node)].next.find(text[i]);
        if (it == trie_[static_cast<size_t>(node)].next.end()) break;
        node = it->second;
        if (trie_[static_cast<size_t>(node)].terminal) best = static_cast<int>(i - pos + 1);
    }
    return best;
}

namespace {

// Parses one JSONL record into a DictEntry. Throws json exceptions on
// malformed syntax or types; semantic validation happens later.
DictEntry parse_record(const json& rec) {
    DictEntry e;
    e.surface = rec.at("entry").get<std::string>();
    for (const auto& s : rec.at("senses")) {
        Sense sense;
        sense.definition = s.at("definition").get<std::string>();
        if (s.contains("examples"))
            for (const auto& ex : s.at("examples")) sense.examples.push_back(ex.get<std::string>());
        e.senses.push_back(std::move(sense));
    }
    if (rec.contains("synonyms"))
        for (const auto& s : rec.at("synonyms")) e.synonyms.push_back(s.get<std::string>());
    if (rec.contains("antonyms"))
        for (const auto& s : rec.at("antonyms")) e.antonyms.push_back(s.get<std::string>());
    if (rec.contains("radical")) e.radical = rec.at("radical").get<std::string>();
    return e;
}

bool contains_substring(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

// Validates one entry in place. Returns false when the record must be
// rejected; keepable issues are appended as warnings.
bool validate_entry(DictEntry& e, int line, std::vector<IngestIssue>& issues) {
    if (utf8_decode(e.surface).empty() || normalize_whitespace(e.surface).empty()) {
        issues.push_back({line, "empty entry surface", true});
        return false;
    }
    if (e.senses.empty()) {
        issues.push_back({line, "entry '" + e.surface + "' has no senses", true});
        return false;
    }
    for (size_t i = 0; i < e.senses.size(); ++i) {
        if (normalize_whitespace(e.senses[i].definition).empty()) {
            issues.push_back({line, "entry '" + e.surface + "' sense " + std::to_string(i) +
                                        " has an empty definition",
                              true});
            return false;
        }
    }
    for (size_t i = 0; i < e.senses.size(); ++i) {
        for (const std::string& ex : e.senses[i].examples) {
            if (!contains_substring(ex, e.surface)) {
                issues.push_back({line, "entry '" + e.surface + "' sense " + std::to_string(i) +
                                            " example does not contain the surface",
                                  false});
            }
        }
    }
    auto drop_self = [&](std::vector<std::string>& v, const char* field) {
        auto it = std::remove(v.begin(), v.end(), e.surface);
        if (it != v.end()) {
            issues.push_back({line, "entry '" + e.surface + "' lists itself under " + field,
                              false});
            v.erase(it, v.end());
        }
    };
    drop_self(e.synonyms, "synonyms");
    drop_self(e.antonyms, "antonyms");
    return true;
}

}  // namespace

std::pair<Lexicon, IngestReport> build_lexicon(std::vector<DictEntry> raw,
                                               const IngestConfig& cfg) {
    IngestReport report;
    std::vector<DictEntry> kept;
    std::unordered_map<std::string, int> seen;  // surface -> first line
    int line = 0;
    for (DictEntry& e : raw) {
        ++line;
        if (cfg.max_entries && kept.size() >= cfg.max_entries) break;
        size_t before = report.issues.size();
        if (!validate_entry(e, line, report.issues)) {
            ++report.rejected;
            continue;
        }
        for (size_t i = before; i < report.issues.size(); ++i)
            if (!report.issues[i].rejected) ++report.warnings;
        auto [it, fresh] = seen.emplace(e.surface, line);
        if (!fresh) {
            report.issues.push_back({line, "duplicate surface '" + e.surface +
                                               "' (first seen at line " +
                                               std::to_string(it->second) + ")",
                                     true});
            ++report.rejected;
            continue;
        }
        kept.push_back(std::move(e));
        ++report.accepted;
    }
    return {Lexicon::build(std::move(kept)), std::move(report)};
}

std::pair<Lexicon, IngestReport> ingest(const std::string& path, const IngestConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw DictError("cannot open dictionary: " + path);

    IngestReport report;
    std::vector<DictEntry> raw;
    std::vector<int> raw_lines;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
            raw.push_back(parse_record(rec));
            raw_lines.push_back(lineno);
        } catch (const json::exception& e) {
            if (cfg.strict)
                throw DictError("malformed record at line " + std::to_string(lineno) + ": " +
                                e.what());
            report.issues.push_back({lineno, std::string("malformed record: ") + e.what(), true});
            ++report.rejected;
        }
    }

    // Re-run the shared builder, then remap its 1-based positions back to
    // the real file line numbers.
    auto [lex, sub] = build_lexicon(std::move(raw), cfg);
    for (IngestIssue issue : sub.issues) {
        issue.line = raw_lines[static_cast<size_t>(issue.line - 1)];
        report.issues.push_back(std::move(issue));
    }
    std::sort(report.issues.begin(), report.issues.end(),
              [](const IngestIssue& a, const IngestIssue& b) { return a.line < b.line; });
    report.accepted = sub.accepted;
    report.rejected += sub.rejected;
    report.warnings = sub.warnings;
    return {std::move(lex), std::move(report)};
}

std::vector<EntryMatch> match_entries(const std::string& text, const Lexicon& lex) {
    std::vector<EntryMatch> out;
    const std::vector<char32_t> cps = utf8_decode(text);
    size_t pos = 0;
    while (pos < cps.size()) {
        const int len = lex.longest_match_len(cps, pos);
        if (len > 0) {
            std::vector<char32_t> piece(cps.begin() + static_cast<long>(pos),
                                        cps.begin() + static_cast<long>(pos) + len);
            out.push_back({utf8_encode(piece), static_cast<int>(pos), static_cast<int>(pos) + len});
            pos += static_cast<size_t>(len);
        } else {
            ++pos;
        }
    }
    return out;
}

std::map<int, int> sense_count_histogram(const Lexicon& lex) {
    std::map<int, int> hist;
    for (const DictEntry& e : lex.entries()) ++hist[static_cast<int>(e.senses.size())];
    return hist;
}

void save_jsonl(const Lexicon& lex, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DictError("cannot open for writing: " + path);
    for (const DictEntry& e : lex.entries()) {
        json rec;
        rec["entry"] = e.surface;
        rec["senses"] = json::array();
        for (const Sense& s : e.senses) {
            json sj;
            sj["definition"] = s.definition;
            sj["examples"] = s.examples;
            rec["senses"].push_back(sj);
        }
        rec["synonyms"] = e.synonyms;
        rec["antonyms"] = e.antonyms;
        if (!e.radical.empty()) rec["radical"] = e.radical;
        out << rec.dump() << "\n";
    }
}

}  // namespace zidian
