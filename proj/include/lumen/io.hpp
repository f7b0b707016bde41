#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lumen/types.hpp"

namespace lumen {

/// FNV-1a 64-bit hash, returned as a 16-digit lowercase hex string.
std::uint64_t fnv1a(const std::string& data);
std::string fnv1a_hex(const std::string& data);

/// Doubles are serialized with "%.17g" everywhere so that artifacts
/// round-trip exactly and reruns are byte-identical.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// Rectangular numeric table with named columns. The on-disk form is plain
/// CSV: one header row, then %.17g values. Used for datasets, traces, and
/// report tables.
struct Table {
    std::vector<std::string> columns;
    Matrix values;  // rows x columns.size()

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
    Index column_index(const std::string& name) const;  // throws IoError if absent
    Vector column(const std::string& name) const;
};

std::string to_csv(const Table& table);
Table from_csv(const std::string& text);
void write_csv(const std::string& path, const Table& table);
Table read_csv(const std::string& path);

/// Line-oriented key/value model files. Format, one record per line:
///   key value value value ...
/// Keys may repeat (vectors of rows); values use %.17g. A leading header
/// line "lumen-model <kind>" identifies the model family, and meta entries
/// (config hash, seed) are ordinary records. This covers every serialized
/// emulator in the project.
struct ModelFile {
    std::string kind;
    std::vector<std::pair<std::string, std::vector<std::string>>> records;

    void add(const std::string& key, const std::vector<std::string>& values);
    void add_scalar(const std::string& key, double v);
    void add_int(const std::string& key, long long v);
    void add_string(const std::string& key, const std::string& v);
    void add_vector(const std::string& key, const Vector& v);
    void add_matrix_row(const std::string& key, const Vector& v);

    bool has(const std::string& key) const;
    const std::vector<std::string>& get(const std::string& key) const;  // first record
    std::vector<const std::vector<std::string>*> get_all(const std::string& key) const;
    double get_scalar(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    Vector get_vector(const std::string& key) const;
    /// Stacks every record with this key into a matrix, one record per row.
    Matrix get_matrix(const std::string& key) const;

    std::string serialize() const;
    static ModelFile parse(const std::string& text);

    void save(const std::string& path) const;
    static ModelFile load(const std::string& path);
};

double parse_double(const std::string& s);  // throws IoError on garbage
long long parse_int(const std::string& s);

std::vector<std::string> split_whitespace(const std::string& line);
std::vector<std::string> split_char(const std::string& line, char sep);
std::string trim(const std::string& s);

}  // namespace lumen
