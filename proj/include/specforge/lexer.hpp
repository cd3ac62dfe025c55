#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace specforge {

enum class TokenKind {
    Identifier,
    Number,
    String,
    Char,
    Punct,
    Attribute,     // a whole "{: ... }" attribute, braces balanced
    LineComment,
    BlockComment,
};

struct Token {
    TokenKind kind;
    std::size_t begin = 0;  // byte offset
    std::size_t end = 0;    // one past the last byte
    int line = 1;           // 1-based, of the first byte
    int col = 1;            // 1-based, of the first byte
    std::string_view text;

    bool is(std::string_view s) const {
        return (kind == TokenKind::Identifier || kind == TokenKind::Punct) && text == s;
    }
    bool is_comment() const {
        return kind == TokenKind::LineComment || kind == TokenKind::BlockComment;
    }
};

/// Tolerant Dafny tokenizer. Never fails: unterminated strings and comments run to
/// the end of input, unknown bytes become one-byte punctuation tokens.
std::vector<Token> tokenize(std::string_view text);

bool is_ident_start(char c);
bool is_ident_char(char c);

}  // namespace specforge
