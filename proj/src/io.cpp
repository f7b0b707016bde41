#include "lumen/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lumen {

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string fnv1a_hex(const std::string& data) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(data)));
    return std::string(buf);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

Index Table::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<Index>(i);
    throw IoError("no such column: " + name);
}

Vector Table::column(const std::string& name) const { return values.col(column_index(name)); }

std::string to_csv(const Table& table) {
    std::ostringstream out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out << ',';
        out << table.columns[i];
    }
    out << '\n';
    for (Index r = 0; r < table.values.rows(); ++r) {
        for (Index c = 0; c < table.values.cols(); ++c) {
            if (c) out << ',';
            out << format_double(table.values(r, c));
        }
        out << '\n';
    }
    return out.str();
}

Table from_csv(const std::string& text) {
    Table table;
    std::istringstream in(text);
    std::string line;
    // Metadata comment lines (config hash, seed) precede the header.
    do {
        if (!std::getline(in, line)) throw IoError("empty csv");
    } while (!line.empty() && line.front() == '#');
    if (!line.empty() && line.back() == '\r') line.pop_back();
    table.columns = split_char(line, ',');
    for (auto& c : table.columns) c = trim(c);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        const auto cells = split_char(line, ',');
        if (cells.size() != table.columns.size())
            throw IoError("csv row has " + std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(table.columns.size()));
        std::vector<double> row(cells.size());
        for (std::size_t i = 0; i < cells.size(); ++i) row[i] = parse_double(cells[i]);
        rows.push_back(std::move(row));
    }
    table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(table.columns.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            table.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return table;
}

void write_csv(const std::string& path, const Table& table) { write_text_file(path, to_csv(table)); }

Table read_csv(const std::string& path) { return from_csv(read_text_file(path)); }

void ModelFile::add(const std::string& key, const std::vector<std::string>& values) {
    records.emplace_back(key, values);
}

void ModelFile::add_scalar(const std::string& key, double v) { add(key, {format_double(v)}); }

void ModelFile::add_int(const std::string& key, long long v) { add(key, {std::to_string(v)}); }

void ModelFile::add_string(const std::string& key, const std::string& v) { add(key, {v}); }

void ModelFile::add_vector(const std::string& key, const Vector& v) {
    std::vector<std::string> cells(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) cells[static_cast<std::size_t>(i)] = format_double(v[i]);
    add(key, cells);
}

void ModelFile::add_matrix_row(const std::string& key, const Vector& v) { add_vector(key, v); }

bool ModelFile::has(const std::string& key) const {
    for (const auto& [k, v] : records)
        if (k == key) return true;
    return false;
}

const std::vector<std::string>& ModelFile::get(const std::string& key) const {
    for (const auto& [k, v] : records)
        if (k == key) return v;
    throw IoError("model file missing key: " + key);
}

std::vector<const std::vector<std::string>*> ModelFile::get_all(const std::string& key) const {
    std::vector<const std::vector<std::string>*> out;
    for (const auto& [k, v] : records)
        if (k == key) out.push_back(&v);
    return out;
}

double ModelFile::get_scalar(const std::string& key) const {
    const auto& v = get(key);
    if (v.size() != 1) throw IoError("key is not scalar: " + key);
    return parse_double(v[0]);
}

long long ModelFile::get_int(const std::string& key) const {
    const auto& v = get(key);
    if (v.size() != 1) throw IoError("key is not scalar: " + key);
    return parse_int(v[0]);
}

std::string ModelFile::get_string(const std::string& key) const {
    const auto& v = get(key);
    if (v.size() != 1) throw IoError("key is not a single token: " + key);
    return v[0];
}

Vector ModelFile::get_vector(const std::string& key) const {
    const auto& v = get(key);
    Vector out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = parse_double(v[i]);
    return out;
}

Matrix ModelFile::get_matrix(const std::string& key) const {
    const auto rows = get_all(key);
    if (rows.empty()) throw IoError("model file missing key: " + key);
    const std::size_t cols = rows[0]->size();
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->size() != cols) throw IoError("ragged matrix for key: " + key);
        for (std::size_t c = 0; c < cols; ++c)
            out(static_cast<Index>(r), static_cast<Index>(c)) = parse_double((*rows[r])[c]);
    }
    return out;
}

std::string ModelFile::serialize() const {
    std::ostringstream out;
    out << "lumen-model " << kind << '\n';
    for (const auto& [key, values] : records) {
        out << key;
        for (const auto& v : values) out << ' ' << v;
        out << '\n';
    }
    return out.str();
}

ModelFile ModelFile::parse(const std::string& text) {
    ModelFile mf;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty model file");
    auto header = split_whitespace(line);
    if (header.size() != 2 || header[0] != "lumen-model")
        throw IoError("bad model file header");
    mf.kind = header[1];
    while (std::getline(in, line)) {
        auto tokens = split_whitespace(line);
        if (tokens.empty()) continue;
        std::string key = tokens.front();
        tokens.erase(tokens.begin());
        mf.records.emplace_back(std::move(key), std::move(tokens));
    }
    return mf;
}

void ModelFile::save(const std::string& path) const { write_text_file(path, serialize()); }

ModelFile ModelFile::load(const std::string& path) { return parse(read_text_file(path)); }

double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw IoError("trailing characters in number: " + s);
        return v;
    } catch (const IoError&) {
        throw;
    } catch (const std::exception&) {
        throw IoError("bad number: " + s);
    }
}

long long parse_int(const std::string& s) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw IoError("trailing characters in integer: " + s);
        return v;
    } catch (const IoError&) {
        throw;
    } catch (const std::exception&) {
        throw IoError("bad integer: " + s);
    }
}

std::vector<std::string> split_whitespace(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::vector<std::string> split_char(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace lumen
