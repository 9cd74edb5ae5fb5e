#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Reader for the subset of TOML used by run files: [section] and
// [section.sub] headers, bare keys, and values that are strings, booleans,
// integers, floats, or flat arrays of those. Inline tables, dates and
// multi-line strings are rejected.

namespace olts::toml {

class ParseError : public std::runtime_error {
public:
    ParseError(int line, const std::string& what);
    int line() const noexcept { return line_; }

private:
    int line_;
};

struct Value {
    enum class Kind { Bool, Int, Float, String, Array };

    Kind kind = Kind::Int;
    bool b = false;
    std::int64_t i = 0;
    double f = 0.0;
    std::string s;
    std::vector<Value> items;
    int line = 0;

    bool is_number() const { return kind == Kind::Int || kind == Kind::Float; }
    double number() const { return kind == Kind::Int ? static_cast<double>(i) : f; }
};

const char* to_string(Value::Kind kind);

/// Keys are fully qualified with dots ("trainer.lr0").
using Table = std::map<std::string, Value>;

/// Throws ParseError on malformed input or a key defined twice.
Table parse(std::string_view text);

}  // namespace olts::toml
