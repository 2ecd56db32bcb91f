#include "cmml/value.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace cmml {

namespace {
constexpr std::array<std::string_view, 6> kKindNames{"identifier", "numeric", "nominal",
                                                     "boolean",    "date",    "text"};
}

std::string_view kind_name(AttributeKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

std::optional<AttributeKind> parse_kind(std::string_view s) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == s) return static_cast<AttributeKind>(i);
    return std::nullopt;
}

Date Date::from_ymd(int y, unsigned m, unsigned d) {
    using namespace std::chrono;
    const sys_days sd{year_month_day{year{y}, month{m}, day{d}}};
    return Date{static_cast<std::int32_t>(sd.time_since_epoch().count())};
}

std::optional<Date> Date::parse_iso(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto digits = [&](std::size_t from, std::size_t len, int& out) {
        const char* b = s.data() + from;
        auto [p, ec] = std::from_chars(b, b + len, out);
        return ec == std::errc{} && p == b + len;
    };
    int y = 0, m = 0, d = 0;
    if (!digits(0, 4, y) || !digits(5, 2, m) || !digits(8, 2, d)) return std::nullopt;
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Date{static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count())};
}

std::string Date::to_iso() const {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::string format_number(double d) {
    if (d == 0.0) return "0";  // folds -0
    std::array<char, 64> buf{};
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), d);
    return std::string(buf.data(), p);
}

std::string Value::to_text() const {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Null>) return {};
            else if constexpr (std::is_same_v<T, double>) return format_number(x);
            else if constexpr (std::is_same_v<T, std::string>) return x;
            else if constexpr (std::is_same_v<T, Date>) return x.to_iso();
            else return x ? "true" : "false";
        },
        v_);
}

std::optional<Value> parse_value(std::string_view text, AttributeKind kind) {
    if (text.empty()) return Value::unknown();
    switch (kind) {
        case AttributeKind::identifier:
        case AttributeKind::nominal:
        case AttributeKind::text:
            return Value(std::string(text));
        case AttributeKind::numeric: {
            double d = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
            if (ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(d)) return std::nullopt;
            return Value(d);
        }
        case AttributeKind::boolean:
            if (text == "true") return Value(true);
            if (text == "false") return Value(false);
            return std::nullopt;
        case AttributeKind::date:
            if (auto d = Date::parse_iso(text)) return Value(*d);
            return std::nullopt;
    }
    return std::nullopt;
}

bool natural_less(std::string_view a, std::string_view b) {
    auto all_digits = [](std::string_view s) {
        if (s.empty()) return false;
        for (char c : s)
            if (c < '0' || c > '9') return false;
        return true;
    };
    if (all_digits(a) && all_digits(b)) {
        auto strip = [](std::string_view s) {
            while (s.size() > 1 && s.front() == '0') s.remove_prefix(1);
            return s;
        };
        const auto sa = strip(a), sb = strip(b);
        if (sa.size() != sb.size()) return sa.size() < sb.size();
        if (sa != sb) return sa < sb;
        return a < b;
    }
    return a < b;
}

}  // namespace cmml
