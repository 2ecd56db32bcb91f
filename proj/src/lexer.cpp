#include "lexer.hpp"

#include <cctype>

namespace cmml::detail {

std::string_view tok_name(Tok t) {
    switch (t) {
        case Tok::ident: return "identifier";
        case Tok::number: return "number";
        case Tok::string: return "string";
        case Tok::lbrace: return "'{'";
        case Tok::rbrace: return "'}'";
        case Tok::lparen: return "'('";
        case Tok::rparen: return "')'";
        case Tok::comma: return "','";
        case Tok::colon: return "':'";
        case Tok::dot: return "'.'";
        case Tok::equals: return "'='";
        case Tok::dashdash: return "'--'";
        case Tok::lt: return "'<'";
        case Tok::le: return "'<='";
        case Tok::gt: return "'>'";
        case Tok::ge: return "'>='";
        case Tok::ne: return "'!='";
        case Tok::plus: return "'+'";
        case Tok::minus: return "'-'";
        case Tok::star: return "'*'";
        case Tok::slash: return "'/'";
        case Tok::invalid: return "invalid character";
        case Tok::end: return "end of input";
    }
    return "?";
}

void fail(const Token& at, std::string code, std::string message) {
    throw ParseFailure{Diagnostic{Severity::error, std::move(code), std::move(message), at.loc}};
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::vector<Token> tokenize(std::string_view src, const std::string& origin, Diagnostics& diags) {
    std::vector<Token> out;
    std::size_t i = 0, line = 1, line_start = 0;

    auto loc_at = [&](std::size_t off) { return SourceLocation{origin, line, off - line_start + 1, off}; };
    auto push = [&](Tok k, std::size_t start, std::string text) {
        out.push_back(Token{k, std::move(text), loc_at(start)});
    };

    while (i < src.size()) {
        const char c = src[i];
        if (c == '\n') {
            ++i;
            ++line;
            line_start = i;
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') ++i;
            continue;
        }
        const std::size_t start = i;
        if (ident_start(c)) {
            while (i < src.size() && ident_char(src[i])) ++i;
            push(Tok::ident, start, std::string(src.substr(start, i - start)));
            continue;
        }
        if (digit(c)) {
            while (i < src.size() && digit(src[i])) ++i;
            if (i + 1 < src.size() && src[i] == '.' && digit(src[i + 1])) {
                ++i;
                while (i < src.size() && digit(src[i])) ++i;
            }
            if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
                std::size_t j = i + 1;
                if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
                if (j < src.size() && digit(src[j])) {
                    i = j;
                    while (i < src.size() && digit(src[i])) ++i;
                }
            }
            push(Tok::number, start, std::string(src.substr(start, i - start)));
            continue;
        }
        if (c == '"') {
            std::string text;
            ++i;
            bool closed = false;
            while (i < src.size()) {
                const char d = src[i];
                if (d == '"') {
                    closed = true;
                    ++i;
                    break;
                }
                if (d == '\n') break;
                if (d == '\\' && i + 1 < src.size()) {
                    const char e = src[i + 1];
                    text += e == 'n' ? '\n' : e == 't' ? '\t' : e;
                    i += 2;
                    continue;
                }
                text += d;
                ++i;
            }
            if (!closed) {
                diags.push_back({Severity::error, "unterminated-string", "unterminated string literal", loc_at(start)});
                push(Tok::invalid, start, std::string(src.substr(start, i - start)));
            } else {
                push(Tok::string, start, std::move(text));
            }
            continue;
        }
        auto two = [&](char a, char b) { return c == a && i + 1 < src.size() && src[i + 1] == b; };
        Tok k = Tok::invalid;
        std::size_t len = 1;
        if (two('-', '-')) k = Tok::dashdash, len = 2;
        else if (two('<', '=')) k = Tok::le, len = 2;
        else if (two('>', '=')) k = Tok::ge, len = 2;
        else if (two('!', '=')) k = Tok::ne, len = 2;
        else {
            switch (c) {
                case '{': k = Tok::lbrace; break;
                case '}': k = Tok::rbrace; break;
                case '(': k = Tok::lparen; break;
                case ')': k = Tok::rparen; break;
                case ',': k = Tok::comma; break;
                case ':': k = Tok::colon; break;
                case '.': k = Tok::dot; break;
                case '=': k = Tok::equals; break;
                case '<': k = Tok::lt; break;
                case '>': k = Tok::gt; break;
                case '+': k = Tok::plus; break;
                case '-': k = Tok::minus; break;
                case '*': k = Tok::star; break;
                case '/': k = Tok::slash; break;
                default: break;
            }
        }
        if (k == Tok::invalid) {
            // Consume a whole UTF-8 sequence so the diagnostic shows one character.
            std::size_t n = 1;
            const auto u = static_cast<unsigned char>(c);
            if (u >= 0xF0) n = 4;
            else if (u >= 0xE0) n = 3;
            else if (u >= 0xC0) n = 2;
            len = std::min(n, src.size() - i);
            diags.push_back({Severity::error, "invalid-character",
                             "unexpected character '" + std::string(src.substr(start, len)) + "'", loc_at(start)});
        }
        i += len;
        push(k, start, std::string(src.substr(start, len)));
    }
    out.push_back(Token{Tok::end, {}, loc_at(i)});
    return out;
}

}  // namespace cmml::detail
