#include "olts/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>

namespace olts::toml {

ParseError::ParseError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

const char* to_string(Value::Kind kind) {
    switch (kind) {
        case Value::Kind::Bool: return "boolean";
        case Value::Kind::Int: return "integer";
        case Value::Kind::Float: return "float";
        case Value::Kind::String: return "string";
        case Value::Kind::Array: return "array";
    }
    return "?";
}

namespace {

bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Table run() {
        Table out;
        std::string section;
        while (pos_ < text_.size()) {
            skip_blank();
            if (pos_ >= text_.size()) break;
            const char c = text_[pos_];
            if (c == '\n') {
                ++pos_;
                ++line_;
                continue;
            }
            if (c == '#') {
                skip_comment();
                continue;
            }
            if (c == '[') {
                ++pos_;
                skip_blank();
                section = dotted_key();
                skip_blank();
                expect(']');
                end_of_line();
                if (!sections_.insert(section).second) throw ParseError(line_, "section [" + section + "] repeated");
                continue;
            }
            const int key_line = line_;
            std::string key = dotted_key();
            skip_blank();
            expect('=');
            skip_blank();
            Value v = value();
            v.line = key_line;
            end_of_line();
            if (!section.empty()) key = section + "." + key;
            if (!out.emplace(key, std::move(v)).second) throw ParseError(key_line, "key '" + key + "' defined twice");
        }
        return out;
    }

private:
    void skip_blank() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
    }

    // Inside arrays newlines and comments count as whitespace.
    void skip_space_in_array() {
        for (;;) {
            skip_blank();
            if (pos_ >= text_.size()) return;
            if (text_[pos_] == '\n') {
                ++pos_;
                ++line_;
            } else if (text_[pos_] == '#') {
                skip_comment();
            } else {
                return;
            }
        }
    }

    void skip_comment() {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    }

    void end_of_line() {
        skip_blank();
        if (pos_ < text_.size() && text_[pos_] == '#') skip_comment();
        if (pos_ < text_.size()) {
            if (text_[pos_] != '\n') throw ParseError(line_, "unexpected text after value");
            ++pos_;
            ++line_;
        }
    }

    void expect(char c) {
        if (pos_ >= text_.size() || text_[pos_] != c) throw ParseError(line_, std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string dotted_key() {
        std::string key;
        for (;;) {
            const std::size_t start = pos_;
            while (pos_ < text_.size() && bare_key_char(text_[pos_])) ++pos_;
            if (pos_ == start) throw ParseError(line_, "expected a bare key");
            key.append(text_.substr(start, pos_ - start));
            skip_blank();
            if (pos_ < text_.size() && text_[pos_] == '.') {
                ++pos_;
                skip_blank();
                key.push_back('.');
                continue;
            }
            return key;
        }
    }

    Value value() {
        if (pos_ >= text_.size()) throw ParseError(line_, "missing value");
        const char c = text_[pos_];
        if (c == '"') return string_value();
        if (c == '[') return array_value();
        if (c == '{') throw ParseError(line_, "inline tables are not supported");
        if (c == '\'') throw ParseError(line_, "literal strings are not supported");
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != ',' &&
               text_[pos_] != ']' && text_[pos_] != '#')
            ++pos_;
        return scalar(text_.substr(start, pos_ - start));
    }

    Value string_value() {
        ++pos_;
        Value v;
        v.kind = Value::Kind::String;
        for (;;) {
            if (pos_ >= text_.size() || text_[pos_] == '\n') throw ParseError(line_, "unterminated string");
            const char c = text_[pos_++];
            if (c == '"') break;
            if (c != '\\') {
                v.s.push_back(c);
                continue;
            }
            if (pos_ >= text_.size()) throw ParseError(line_, "unterminated escape");
            switch (text_[pos_++]) {
                case '"': v.s.push_back('"'); break;
                case '\\': v.s.push_back('\\'); break;
                case 'n': v.s.push_back('\n'); break;
                case 't': v.s.push_back('\t'); break;
                default: throw ParseError(line_, "unsupported escape sequence");
            }
        }
        return v;
    }

    Value array_value() {
        ++pos_;
        Value v;
        v.kind = Value::Kind::Array;
        for (;;) {
            skip_space_in_array();
            if (pos_ < text_.size() && text_[pos_] == ']') {
                ++pos_;
                return v;
            }
            Value item = value();
            if (item.kind == Value::Kind::Array) throw ParseError(line_, "nested arrays are not supported");
            item.line = line_;
            v.items.push_back(std::move(item));
            skip_space_in_array();
            if (pos_ < text_.size() && text_[pos_] == ',') {
                ++pos_;
                continue;
            }
            skip_space_in_array();
            expect(']');
            return v;
        }
    }

    Value scalar(std::string_view tok) {
        Value v;
        if (tok.empty()) throw ParseError(line_, "missing value");
        if (tok == "true" || tok == "false") {
            v.kind = Value::Kind::Bool;
            v.b = tok == "true";
            return v;
        }
        std::string clean;
        for (std::size_t k = 0; k < tok.size(); ++k) {
            if (tok[k] != '_') {
                clean.push_back(tok[k]);
                continue;
            }
            const bool ok = k > 0 && k + 1 < tok.size() && std::isdigit(static_cast<unsigned char>(tok[k - 1])) &&
                            std::isdigit(static_cast<unsigned char>(tok[k + 1]));
            if (!ok) throw ParseError(line_, "misplaced underscore in number");
        }
        std::string_view body = clean;
        const bool neg = !body.empty() && body.front() == '-';
        if (!body.empty() && (body.front() == '+' || body.front() == '-')) body.remove_prefix(1);
        if (body == "inf" || body == "nan") {
            v.kind = Value::Kind::Float;
            v.f = body == "inf" ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
            if (neg) v.f = -v.f;
            return v;
        }
        const bool is_float = body.find_first_of(".eE") != std::string_view::npos;
        const char* first = clean.data() + (clean.front() == '+' ? 1 : 0);
        const char* last = clean.data() + clean.size();
        if (is_float) {
            v.kind = Value::Kind::Float;
            auto [p, ec] = std::from_chars(first, last, v.f);
            if (ec != std::errc() || p != last) throw ParseError(line_, "bad number '" + std::string(tok) + "'");
        } else {
            v.kind = Value::Kind::Int;
            auto [p, ec] = std::from_chars(first, last, v.i);
            if (ec != std::errc() || p != last) throw ParseError(line_, "bad value '" + std::string(tok) + "'");
        }
        return v;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    std::set<std::string> sections_;
};

}  // namespace

Table parse(std::string_view text) { return Parser(text).run(); }

}  // namespace olts::toml
