#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace cmml {

enum class AttributeKind : std::uint8_t { identifier, numeric, nominal, boolean, date, text };

std::string_view kind_name(AttributeKind k);
std::optional<AttributeKind> parse_kind(std::string_view s);

/// True for kinds whose values are stored as strings.
constexpr bool is_string_kind(AttributeKind k) {
    return k == AttributeKind::identifier || k == AttributeKind::nominal || k == AttributeKind::text;
}

/// Calendar date as a day count since 1970-01-01.
struct Date {
    std::int32_t days = 0;

    static std::optional<Date> parse_iso(std::string_view s);
    static Date from_ymd(int y, unsigned m, unsigned d);
    std::string to_iso() const;

    auto operator<=>(const Date&) const = default;
};

enum class NullKind : std::uint8_t { unknown, not_applicable };

struct Null {
    NullKind kind = NullKind::unknown;
    auto operator<=>(const Null&) const = default;
};

/// A typed scalar or a classified null.
class Value {
public:
    using Storage = std::variant<Null, double, std::string, Date, bool>;

    Value() = default;
    Value(Null n) : v_(n) {}
    Value(double d) : v_(d) {}
    Value(int i) : v_(static_cast<double>(i)) {}
    Value(std::string s) : v_(std::move(s)) {}
    Value(const char* s) : v_(std::string(s)) {}
    Value(Date d) : v_(d) {}
    Value(bool b) : v_(b) {}

    static Value unknown() { return Value(Null{NullKind::unknown}); }
    static Value not_applicable() { return Value(Null{NullKind::not_applicable}); }

    bool is_null() const { return std::holds_alternative<Null>(v_); }
    NullKind null_kind() const { return std::get<Null>(v_).kind; }
    bool is_number() const { return std::holds_alternative<double>(v_); }
    bool is_string() const { return std::holds_alternative<std::string>(v_); }
    bool is_date() const { return std::holds_alternative<Date>(v_); }
    bool is_bool() const { return std::holds_alternative<bool>(v_); }

    double number() const { return std::get<double>(v_); }
    const std::string& string() const { return std::get<std::string>(v_); }
    Date date() const { return std::get<Date>(v_); }
    bool boolean() const { return std::get<bool>(v_); }

    const Storage& storage() const { return v_; }

    /// Canonical text: shortest round-trip numbers, ISO dates, true/false;
    /// nulls render as the empty string.
    std::string to_text() const;

    bool operator==(const Value&) const = default;

private:
    Storage v_;
};

/// Parses canonical text for a column of the given kind. Empty text yields
/// null(unknown); malformed text yields nullopt.
std::optional<Value> parse_value(std::string_view text, AttributeKind kind);

/// Shortest decimal representation that parses back to the same double.
std::string format_number(double d);

/// Ordering used for sorting keys: all-digit strings compare numerically,
/// anything else lexically.
bool natural_less(std::string_view a, std::string_view b);

}  // namespace cmml
