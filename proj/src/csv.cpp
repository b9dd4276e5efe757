#include "mlta/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mlta/errors.hpp"

namespace mlta::csv {

namespace {

std::vector<std::vector<std::string>> parse(std::istream& in, const std::string& origin) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    bool any_char = false;
    char c;
    auto end_field = [&] {
        fields.push_back(std::move(field));
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(fields));
        fields.clear();
        any_char = false;
    };
    while (in.get(c)) {
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            any_char = true;
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                any_char = true;
                break;
            case ',':
                end_field();
                any_char = true;
                break;
            case '\r':
                break;
            case '\n':
                if (any_char || !fields.empty()) end_record();
                break;
            default:
                field.push_back(c);
                any_char = true;
        }
    }
    if (in_quotes) throw DataError(origin + ": unterminated quoted field");
    if (any_char || !fields.empty()) end_record();
    return records;
}

}  // namespace

Table read_stream(std::istream& in, const std::string& origin) {
    auto records = parse(in, origin);
    if (records.empty()) throw DataError(origin + ": empty CSV");
    Table t;
    t.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.header.size()) {
            throw DataError(origin + ": row " + std::to_string(i + 1) + " has " +
                            std::to_string(records[i].size()) + " fields, header has " +
                            std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open CSV file: " + path);
    return read_stream(in, path);
}

std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& context) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw DataError(context + ": not a number: '" + s + "'");
    }
    return v;
}

}  // namespace mlta::csv
