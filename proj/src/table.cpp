#include "cmml/table.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace cmml {

std::optional<std::size_t> Table::column_index(std::string_view column) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == column) return i;
    return std::nullopt;
}

std::size_t Table::require_column(std::string_view column) const {
    if (auto i = column_index(column)) return *i;
    throw Error("table " + name + " has no column " + std::string(column));
}

const Value& Table::cell(std::size_t row, std::string_view column) const { return rows.at(row).at(require_column(column)); }

KeyTuple Table::key_of(std::size_t row) const {
    KeyTuple k;
    k.reserve(key_columns.size());
    for (const auto& c : key_columns) k.push_back(cell(row, c).to_text());
    return k;
}

void Table::add_column(Column column, std::vector<Value> values) {
    if (values.size() != rows.size())
        throw Error("column " + column.name + " has " + std::to_string(values.size()) + " values for " +
                    std::to_string(rows.size()) + " rows");
    if (column_index(column.name)) throw Error("table " + name + " already has a column " + column.name);
    columns.push_back(std::move(column));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].push_back(std::move(values[i]));
}

bool key_less(const KeyTuple& a, const KeyTuple& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        [](const std::string& x, const std::string& y) { return natural_less(x, y); });
}

void Table::sort_by_key() {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<KeyTuple> keys;
    keys.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) keys.push_back(key_of(i));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key_less(keys[a], keys[b]); });
    std::vector<Row> sorted;
    sorted.reserve(rows.size());
    for (auto i : order) sorted.push_back(std::move(rows[i]));
    rows = std::move(sorted);
}

const Table* DataBundle::find(std::string_view name) const {
    auto it = tables.find(std::string(name));
    return it == tables.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

struct Field {
    std::string text;
    bool quoted = false;
};

/// Splits RFC 4180 records. Returns false on an unterminated quote.
bool split_records(std::string_view text, std::vector<std::vector<Field>>& records) {
    std::vector<Field> record;
    Field field;
    bool in_quotes = false, field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field = Field{};
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.text += '"';
                    i += 2;
                    continue;
                }
                in_quotes = false;
                ++i;
                continue;
            }
            field.text += c;
            ++i;
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field.quoted = true;
            field_started = true;
            ++i;
        } else if (c == ',') {
            end_field();
            ++i;
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            end_record();
            i += 2;
        } else if (c == '\n') {
            end_record();
            ++i;
        } else {
            field.text += c;
            field_started = true;
            ++i;
        }
    }
    if (in_quotes) return false;
    if (field_started || !record.empty()) end_record();
    return true;
}

bool needs_quotes(std::string_view s) {
    return s.empty() || s.find_first_of(",\"\r\n") != std::string_view::npos;
}

void append_field(std::string& out, const Value& v) {
    if (v.is_null()) return;
    const std::string s = v.to_text();
    if (!needs_quotes(s)) {
        out += s;
        return;
    }
    out += '"';
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
}

}  // namespace

CsvReadResult read_csv_text(std::string_view text, std::string origin, const std::vector<Column>& declared) {
    CsvReadResult res;
    res.table.name = origin;
    res.table.columns = declared;
    auto diag = [&](std::string code, std::string msg, std::size_t line = 0, std::size_t col = 0) {
        res.diagnostics.push_back({Severity::error, std::move(code), std::move(msg), {origin, line, col, 0}});
    };

    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
    std::vector<std::vector<Field>> records;
    if (!split_records(text, records)) {
        diag("csv-syntax", "unterminated quoted field");
        return res;
    }
    if (records.empty()) {
        diag("csv-header", "missing header row");
        return res;
    }

    const auto& header = records.front();
    std::vector<std::optional<std::size_t>> source_of(declared.size());
    std::set<std::string> seen;
    for (std::size_t f = 0; f < header.size(); ++f) {
        const std::string& h = header[f].text;
        if (!seen.insert(h).second) {
            diag("csv-header", "duplicate header column '" + h + "'", 1, f + 1);
            continue;
        }
        bool known = false;
        for (std::size_t c = 0; c < declared.size(); ++c)
            if (declared[c].name == h) {
                source_of[c] = f;
                known = true;
            }
        if (!known) diag("csv-header", "unexpected header column '" + h + "'", 1, f + 1);
    }
    for (std::size_t c = 0; c < declared.size(); ++c)
        if (!source_of[c]) diag("csv-header", "missing header column '" + declared[c].name + "'", 1, 0);

    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        const std::size_t line = r + 1;
        if (rec.size() == 1 && rec[0].text.empty() && !rec[0].quoted && header.size() > 1) continue;  // blank line
        if (rec.size() != header.size()) {
            diag("csv-width", "row has " + std::to_string(rec.size()) + " fields, header has " +
                                  std::to_string(header.size()), line, 0);
            continue;
        }
        Row row;
        row.reserve(declared.size());
        for (std::size_t c = 0; c < declared.size(); ++c) {
            if (!source_of[c]) {
                row.push_back(Value::unknown());
                continue;
            }
            const Field& field = rec[*source_of[c]];
            const AttributeKind kind = declared[c].kind;
            if (field.text.empty()) {
                row.push_back(field.quoted && is_string_kind(kind) ? Value(std::string()) : Value::unknown());
                continue;
            }
            auto v = parse_value(field.text, kind);
            if (!v) {
                diag("csv-value", "cannot parse '" + field.text + "' as " + std::string(kind_name(kind)) + " in column " +
                                      declared[c].name + (kind == AttributeKind::date ? " (dates must be YYYY-MM-DD)" : ""),
                     line, *source_of[c] + 1);
                row.push_back(Value::unknown());
                continue;
            }
            row.push_back(std::move(*v));
        }
        res.table.rows.push_back(std::move(row));
    }
    return res;
}

CsvReadResult read_csv(const std::filesystem::path& path, const std::vector<Column>& declared) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    auto res = read_csv_text(bytes, path.filename().string(), declared);
    res.table.name = path.stem().string();
    res.table.content_sha256 = sha256_hex(bytes);
    return res;
}

std::string to_csv(const Table& table) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) out += ',';
        append_field(out, Value(table.columns[c].name));
    }
    out += '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            append_field(out, row[c]);
        }
        out += '\n';
    }
    return out;
}

void write_csv(const Table& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << to_csv(table);
    if (!out) throw Error("failed writing " + path.string());
}

std::size_t distinct_key_count(const Table& table) {
    std::set<KeyTuple> keys;
    for (std::size_t i = 0; i < table.rows.size(); ++i) keys.insert(table.key_of(i));
    return keys.size();
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[md[i] >> 4];
        out += kHex[md[i] & 0xF];
    }
    return out;
}

}  // namespace cmml
