#pragma once
// Minimal UTF-8 codec. All text in this project is processed as a sequence
// of Unicode scalar values; offsets in the public API are character offsets.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace zidian {

// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD and
// consume one byte, so decoding never fails.
inline std::vector<char32_t> utf8_decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        unsigned char b0 = static_cast<unsigned char>(s[i]);
        char32_t cp = 0xFFFD;
        size_t len = 1;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
            cp = static_cast<char32_t>((b0 & 0x1F) << 6 | (s[i + 1] & 0x3F));
            len = 2;
        } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
            cp = static_cast<char32_t>((b0 & 0x0F) << 12 | (s[i + 1] & 0x3F) << 6 |
                                       (s[i + 2] & 0x3F));
            len = 3;
        } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
            cp = static_cast<char32_t>((b0 & 0x07) << 18 | (s[i + 1] & 0x3F) << 12 |
                                       (s[i + 2] & 0x3F) << 6 | (s[i + 3] & 0x3F));
            len = 4;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string utf8_encode(const std::vector<char32_t>& cps) {
    std::string out;
    out.reserve(cps.size() * 3);
    for (char32_t cp : cps) utf8_append(out, cp);
    return out;
}

inline std::string utf8_encode_one(char32_t cp) {
    std::string out;
    utf8_append(out, cp);
    return out;
}

inline size_t utf8_length(std::string_view s) { return utf8_decode(s).size(); }

// Collapses runs of ASCII/ideographic whitespace to a single space and trims.
inline std::string normalize_whitespace(std::string_view s) {
    auto cps = utf8_decode(s);
    std::vector<char32_t> out;
    out.reserve(cps.size());
    auto is_ws = [](char32_t c) {
        return c == U' ' || c == U'\t' || c == U'\r' || c == U'\n' || c == U'\x3000';
    };
    bool pending = false;
    for (char32_t c : cps) {
        if (is_ws(c)) {
            pending = !out.empty();
        } else {
            if (pending) out.push_back(U' ');
            pending = false;
            out.push_back(c);
        }
    }
    return utf8_encode(out);
}

}  // namespace zidian
