#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace bridgerag::text {

inline bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Non-ASCII bytes are treated as word characters so UTF-8 words stay whole.
inline bool is_word_char(char c) noexcept {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u) != 0;
}

// Apostrophes and hyphens join word characters ("horner's", "iron-sulfur").
inline bool is_joiner(char c) noexcept { return c == '\'' || c == '-'; }

inline char to_lower(char c) noexcept {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

/// Lowercases ASCII, collapses whitespace runs to one space and trims.
inline std::string canonicalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(to_lower(c));
    }
    return out;
}

namespace detail {
template <bool Lower, bool ClausePunct>
std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    };
    for (size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (is_word_char(c)) {
            cur.push_back(Lower ? to_lower(c) : c);
        } else if (is_joiner(c) && !cur.empty() && i + 1 < s.size() && is_word_char(s[i + 1])) {
            cur.push_back(c);
        } else {
            flush();
            if (ClausePunct && (c == ',' || c == ';' || c == ':' || c == '(' || c == ')')) out.emplace_back(1, c);
        }
    }
    flush();
    return out;
}
}  // namespace detail

/// Lowercased word tokens; punctuation other than inner joiners is dropped.
inline std::vector<std::string> word_tokens(std::string_view s) { return detail::tokenize<true, false>(s); }

/// Word tokens plus clause punctuation ("," ";" ":" "(" ")") as their own tokens.
inline std::vector<std::string> clause_tokens(std::string_view s) { return detail::tokenize<true, true>(s); }

/// clause_tokens with the original letter case kept.
inline std::vector<std::string> raw_clause_tokens(std::string_view s) { return detail::tokenize<false, true>(s); }

inline bool is_clause_punct(std::string_view tok) noexcept { return tok.size() == 1 && !is_word_char(tok[0]); }

/// Entity canonical form: word tokens joined by single spaces.
inline std::string canonical_entity(std::string_view s) {
    std::string out;
    for (auto& t : word_tokens(s)) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

inline std::vector<std::string_view> whitespace_tokens(std::string_view s) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        size_t start = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

inline size_t count_tokens(std::string_view s) {
    size_t n = 0;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        if (i < s.size()) ++n;
        while (i < s.size() && !is_space(s[i])) ++i;
    }
    return n;
}

/// Splits on runs of '.', '!' or '?' followed by whitespace or end of text.
/// Returned views are trimmed and never empty.
inline std::vector<std::string_view> split_sentences(std::string_view s) {
    std::vector<std::string_view> out;
    auto push = [&](size_t b, size_t e) {
        while (b < e && is_space(s[b])) ++b;
        while (e > b && is_space(s[e - 1])) --e;
        if (e > b) out.push_back(s.substr(b, e - b));
    };
    size_t start = 0;
    size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (c == '.' || c == '!' || c == '?') {
            size_t j = i;
            while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
            if (j == s.size() || is_space(s[j])) {
                push(start, j);
                start = j;
            }
            i = j;
        } else {
            ++i;
        }
    }
    push(start, s.size());
    return out;
}

/// First sentence of a text, or the whole text if it has no terminator.
inline std::string_view first_sentence(std::string_view s) {
    auto sentences = split_sentences(s);
    return sentences.empty() ? std::string_view{} : sentences.front();
}

}  // namespace bridgerag::text
