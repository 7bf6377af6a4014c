#include "zidian/vocab.hpp"

#include <fstream>

#include "zidian/utf8.hpp"

namespace zidian {

Vocab Vocab::from_chars(const std::set<char32_t>& chars) {
    Vocab v;
    v.chars_.assign(chars.begin(), chars.end());
    for (size_t i = 0; i < v.chars_.size(); ++i)
        v.ids_.emplace(v.chars_[i], kNumSpecials + static_cast<int>(i));
    return v;
}

Vocab Vocab::from_lexicon(const Lexicon& lex) {
    std::set<char32_t> chars;
    auto take = [&](const std::string& s) {
        for (char32_t c : utf8_decode(s)) chars.insert(c);
    };
    for (const DictEntry& e : lex.entries()) {
        take(e.surface);
        for (const Sense& s : e.senses) {
            take(s.definition);
            for (const std::string& ex : s.examples) take(ex);
        }
        for (const std::string& s : e.synonyms) take(s);
        for (const std::string& s : e.antonyms) take(s);
    }
    return from_chars(chars);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw VocabError("cannot open vocab: " + path);
    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cps = utf8_decode(line);
        if (cps.size() != 1)
            throw VocabError("vocab line " + std::to_string(lineno) +
                             " is not a single character: '" + line + "'");
        if (v.ids_.count(cps[0]))
            throw VocabError("vocab line " + std::to_string(lineno) + " duplicates a character");
        v.ids_.emplace(cps[0], kNumSpecials + static_cast<int>(v.chars_.size()));
        v.chars_.push_back(cps[0]);
    }
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw VocabError("cannot open vocab for writing: " + path);
    for (char32_t c : chars_) out << utf8_encode_one(c) << "\n";
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    for (char32_t c : utf8_decode(text)) ids.push_back(id_of(c));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad) out += "[PAD]";
        else if (id == kCls) out += "[CLS]";
        else if (id == kSep) out += "[SEP]";
        else if (id == kMask) out += "[MASK]";
        else if (id == kUnk) out += "[UNK]";
        else utf8_append(out, char_of(id));
    }
    return out;
}

RadicalTable RadicalTable::load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw VocabError("cannot open radical table: " + path);
    RadicalTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw VocabError("radical table line " + std::to_string(lineno) + " has no tab");
        auto ch = utf8_decode(line.substr(0, tab));
        auto rad = utf8_decode(line.substr(tab + 1));
        if (ch.size() != 1 || rad.size() != 1)
            throw VocabError("radical table line " + std::to_string(lineno) +
                             " must be one character per column");
        t.char_to_radical_[ch[0]] = rad[0];
    }
    t.build_index();
    return t;
}

RadicalTable RadicalTable::from_pairs(const std::vector<std::pair<char32_t, char32_t>>& pairs) {
    RadicalTable t;
    for (auto [c, r] : pairs) t.char_to_radical_[c] = r;
    t.build_index();
    return t;
}

void RadicalTable::build_index() {
    std::set<char32_t> rads;
    for (const auto& [c, r] : char_to_radical_) rads.insert(r);
    radicals_.assign(rads.begin(), rads.end());
    std::unordered_map<char32_t, int> rid;
    for (size_t i = 0; i < radicals_.size(); ++i)
        rid.emplace(radicals_[i], 1 + static_cast<int>(i));
    for (const auto& [c, r] : char_to_radical_) char_to_rid_[c] = rid[r];
}

std::vector<int> radical_ids_for(const std::vector<int>& token_ids, const Vocab& vocab,
                                 const RadicalTable& radicals) {
    std::vector<int> out;
    out.reserve(token_ids.size());
    for (int id : token_ids) {
        if (Vocab::is_special(id)) {
            out.push_back(RadicalTable::kNoRadical);
        } else {
            out.push_back(radicals.radical_id(vocab.char_of(id)));
        }
    }
    return out;
}

}  // namespace zidian
