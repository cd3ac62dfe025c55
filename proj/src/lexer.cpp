#include "specforge/lexer.hpp"

#include <cctype>

namespace specforge {

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' ||
           static_cast<unsigned char>(c) >= 0x80;
}

bool is_ident_char(char c) {
    return is_ident_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '\'' ||
           c == '?';
}

namespace {

class Lexer {
public:
    explicit Lexer(std::string_view text) : text_(text) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '\n') {
                advance(1);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                advance(1);
                continue;
            }
            std::size_t begin = pos_;
            int line = line_, col = col_;
            TokenKind kind = lex_one();
            out.push_back(Token{kind, begin, pos_, line, col, text_.substr(begin, pos_ - begin)});
        }
        return out;
    }

private:
    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0';
    }

    void advance(std::size_t n) {
        for (std::size_t i = 0; i < n && pos_ < text_.size(); ++i) {
            if (text_[pos_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
            ++pos_;
        }
    }

    TokenKind lex_one() {
        char c = peek();
        if (c == '/' && peek(1) == '/') {
            while (pos_ < text_.size() && text_[pos_] != '\n') advance(1);
            return TokenKind::LineComment;
        }
        if (c == '/' && peek(1) == '*') {
            advance(2);
            int depth = 1;
            while (pos_ < text_.size() && depth > 0) {
                if (peek() == '/' && peek(1) == '*') {
                    ++depth;
                    advance(2);
                } else if (peek() == '*' && peek(1) == '/') {
                    --depth;
                    advance(2);
                } else {
                    advance(1);
                }
            }
            return TokenKind::BlockComment;
        }
        if (c == '@' && peek(1) == '"') {
            advance(2);
            while (pos_ < text_.size()) {
                if (peek() == '"' && peek(1) == '"') {
                    advance(2);
                } else if (peek() == '"') {
                    advance(1);
                    break;
                } else {
                    advance(1);
                }
            }
            return TokenKind::String;
        }
        if (c == '"') {
            advance(1);
            while (pos_ < text_.size() && peek() != '"' && peek() != '\n') {
                advance(peek() == '\\' ? 2 : 1);
            }
            if (peek() == '"') advance(1);
            return TokenKind::String;
        }
        if (c == '\'' && char_literal_length() > 0) {
            advance(char_literal_length());
            return TokenKind::Char;
        }
        if (is_ident_start(c)) {
            while (pos_ < text_.size() && is_ident_char(peek())) advance(1);
            return TokenKind::Identifier;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            if (c == '0' && (peek(1) == 'x' || peek(1) == 'X')) {
                advance(2);
                while (std::isxdigit(static_cast<unsigned char>(peek())) || peek() == '_') advance(1);
                return TokenKind::Number;
            }
            while (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '_') advance(1);
            if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1)))) {
                advance(1);
                while (std::isdigit(static_cast<unsigned char>(peek()))) advance(1);
            }
            return TokenKind::Number;
        }
        if (c == '{' && peek(1) == ':') {
            advance(2);
            int depth = 1;
            while (pos_ < text_.size() && depth > 0) {
                if (peek() == '"') {
                    advance(1);
                    while (pos_ < text_.size() && peek() != '"' && peek() != '\n')
                        advance(peek() == '\\' ? 2 : 1);
                    advance(1);
                    continue;
                }
                if (peek() == '{') ++depth;
                if (peek() == '}') --depth;
                advance(1);
            }
            return TokenKind::Attribute;
        }
        static constexpr std::string_view kMulti[] = {
            "<==>", "==>", "<==", ":=", "::", ":|", "==", "!=", "<=", ">=", "&&", "||", "..", "=>",
        };
        for (auto op : kMulti) {
            if (text_.substr(pos_, op.size()) == op) {
                advance(op.size());
                return TokenKind::Punct;
            }
        }
        advance(1);
        return TokenKind::Punct;
    }

    // Returns the byte length of a char literal starting at pos_, or 0 if the quote
    // is a prime in an identifier or otherwise not a literal.
    std::size_t char_literal_length() const {
        if (pos_ > 0 && is_ident_char(text_[pos_ - 1])) return 0;
        if (peek(1) == '\\') {
            if (peek(2) == 'u') {
                for (std::size_t n = 3; n < 12 && pos_ + n < text_.size(); ++n) {
                    if (text_[pos_ + n] == '\'') return n + 1;
                }
                return 0;
            }
            return peek(3) == '\'' ? 4 : 0;
        }
        if (peek(1) != '\0' && peek(1) != '\n' && peek(2) == '\'') return 3;
        return 0;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

}  // namespace

std::vector<Token> tokenize(std::string_view text) { return Lexer(text).run(); }

}  // namespace specforge
