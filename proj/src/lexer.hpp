#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cmml/diagnostics.hpp"

namespace cmml::detail {

enum class Tok {
    ident,
    number,
    string,
    lbrace,
    rbrace,
    lparen,
    rparen,
    comma,
    colon,
    dot,
    equals,
    dashdash,
    lt,
    le,
    gt,
    ge,
    ne,
    plus,
    minus,
    star,
    slash,
    invalid,
    end,
};

std::string_view tok_name(Tok t);

struct Token {
    Tok kind = Tok::end;
    std::string text;  // identifier/number spelling, decoded string contents
    SourceLocation loc;
};

/// Tokenizes the whole source. `#` starts a line comment. Invalid characters
/// produce Tok::invalid tokens plus a diagnostic; the stream always ends with
/// Tok::end.
std::vector<Token> tokenize(std::string_view src, const std::string& origin, Diagnostics& diags);

/// Cursor over a token vector shared by the expression and schema parsers.
class TokenCursor {
public:
    explicit TokenCursor(const std::vector<Token>& toks) : toks_(toks) {}

    const Token& peek(std::size_t ahead = 0) const {
        const std::size_t i = pos_ + ahead;
        return i < toks_.size() ? toks_[i] : toks_.back();
    }
    const Token& next() {
        const Token& t = peek();
        if (pos_ < toks_.size() - 1) ++pos_;
        return t;
    }
    bool at(Tok k) const { return peek().kind == k; }
    bool at_word(std::string_view w) const { return peek().kind == Tok::ident && peek().text == w; }
    bool at_end() const { return at(Tok::end); }
    std::size_t position() const { return pos_; }
    void reset(std::size_t p) { pos_ = p; }

private:
    const std::vector<Token>& toks_;
    std::size_t pos_ = 0;
};

/// Internal control flow for parse failures; converted to diagnostics by callers.
struct ParseFailure {
    Diagnostic diagnostic;
};

[[noreturn]] void fail(const Token& at, std::string code, std::string message);

}  // namespace cmml::detail

namespace cmml {
struct Expr;
namespace detail {
/// Parses one expression starting at the cursor; stops at the first token
/// that cannot continue it. Throws ParseFailure.
Expr parse_expression(TokenCursor& cur);
}  // namespace detail
}  // namespace cmml
