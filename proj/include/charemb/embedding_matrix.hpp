#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "charemb/binary_io.hpp"
#include "charemb/error.hpp"
#include "charemb/text_pipeline.hpp"

namespace charemb {

/// Vocabulary entries mapped to k-dimensional float rows, stored row-major.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(std::size_t dim) : dim_(dim) {}

  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return entries_.empty(); }

  const std::string& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<std::string>& entries() const { return entries_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  const std::vector<float>& data() const { return data_; }

  std::optional<std::size_t> index_of(const std::string& entry) const {
    auto it = index_.find(entry);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Exact, case-sensitive match. The span aliases the stored row.
  std::optional<std::span<const float>> lookup(const std::string& entry) const {
    auto idx = index_of(entry);
    if (!idx) return std::nullopt;
    return row(*idx);
  }

  void add(std::string entry, std::span<const float> values) {
    if (entry.empty()) throw FormatError("empty matrix entry");
    if (values.size() != dim_) {
      throw FormatError("dimension mismatch for entry '" + entry + "': expected " +
                        std::to_string(dim_) + " values, got " +
                        std::to_string(values.size()));
    }
    for (float v : values) {
      if (!std::isfinite(v)) throw FormatError("non-finite value in entry '" + entry + "'");
    }
    if (!index_.emplace(entry, entries_.size()).second) {
      throw FormatError("duplicate matrix entry '" + entry + "'");
    }
    entries_.push_back(std::move(entry));
    data_.insert(data_.end(), values.begin(), values.end());
  }

  void reserve(std::size_t rows) {
    entries_.reserve(rows);
    data_.reserve(rows * dim_);
    index_.reserve(rows);
  }

  bool operator==(const EmbeddingMatrix& o) const {
    return dim_ == o.dim_ && entries_ == o.entries_ && data_ == o.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> entries_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Average of the vectors of the phrase's in-vocabulary unigrams. Whitespace,
/// punctuation and underscores all split. Missing unigrams are ignored.
inline std::optional<std::vector<float>> compose_average(const EmbeddingMatrix& matrix,
                                                         std::string_view phrase) {
  std::vector<double> acc(matrix.dim(), 0.0);
  std::size_t found = 0;
  for (const auto& tok : tokenize(phrase)) {
    std::size_t b = 0;
    while (b <= tok.size()) {
      auto e = tok.find('_', b);
      if (e == std::string::npos) e = tok.size();
      if (e > b) {
        if (auto row = matrix.lookup(tok.substr(b, e - b))) {
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += (*row)[j];
          ++found;
        }
      }
      b = e + 1;
    }
  }
  if (found == 0) return std::nullopt;
  std::vector<float> out(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) {
    out[j] = static_cast<float>(acc[j] / static_cast<double>(found));
  }
  return out;
}

// ---------------------------------------------------------------------------
// I/O. Binary "CEMB0001" and word2vec/GloVe text formats.

enum class MatrixFormat { binary, text };

inline constexpr std::string_view kMatrixMagic = "CEMB0001";

/// Bytes of the CEMB serialization, without writing it.
inline std::uint64_t serialized_matrix_bytes(const EmbeddingMatrix& m) {
  std::uint64_t bytes = kMatrixMagic.size() + 8;
  for (const auto& e : m.entries()) bytes += 4 + e.size() + 4 * m.dim();
  return bytes;
}

inline void write_matrix_binary(std::ostream& os, const EmbeddingMatrix& m) {
  binio::write_bytes(os, kMatrixMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(m.size()));
  binio::write_u32(os, static_cast<std::uint32_t>(m.dim()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    binio::write_u32(os, static_cast<std::uint32_t>(m.entry(i).size()));
    binio::write_bytes(os, m.entry(i));
    binio::write_f32(os, m.row(i));
  }
}

inline EmbeddingMatrix read_matrix_binary(std::istream& is) {
  const auto magic = binio::read_string(is, kMatrixMagic.size(), "magic");
  if (magic != kMatrixMagic) throw FormatError("not a CEMB0001 matrix file");
  const auto n = binio::read_u32(is, "vocabulary size");
  const auto k = binio::read_u32(is, "dimension");
  if (n == 0 || k == 0) throw FormatError("matrix header has zero rows or dimension");
  EmbeddingMatrix m(k);
  m.reserve(n);
  std::vector<float> row(k);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = binio::read_u32(is, "entry length");
    auto entry = binio::read_string(is, len, "entry");
    binio::read_f32(is, row, "row values");
    m.add(std::move(entry), row);
  }
  return m;
}

/// One row per line, values printed with 9 significant digits. Spaces in
/// entries are written as underscores.
inline void write_matrix_text(std::ostream& os, const EmbeddingMatrix& m, bool header = true) {
  if (header) os << m.size() << ' ' << m.dim() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::string e = m.entry(i);
    for (auto& c : e) {
      if (c == ' ') c = '_';
    }
    os << e;
    for (float v : m.row(i)) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(v));
      os << buf;
    }
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const auto b = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

inline bool parse_uint(std::string_view s, std::uint64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline float parse_float(std::string_view s, std::size_t lineno) {
  std::string tmp(s);
  char* end = nullptr;
  const float v = std::strtof(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) {
    throw FormatError("line " + std::to_string(lineno) + ": bad number '" + tmp + "'");
  }
  return v;
}

}  // namespace detail

/// Reads word2vec ".vec" text (with "|V| k" header) or GloVe text (no header,
/// k inferred from the first row).
inline EmbeddingMatrix read_matrix_text(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::uint64_t> declared_rows;
  std::size_t k = 0;
  EmbeddingMatrix m;
  bool first = true;
  std::vector<float> row;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (first) {
      first = false;
      std::uint64_t a = 0, b = 0;
      if (fields.size() == 2 && detail::parse_uint(fields[0], a) &&
          detail::parse_uint(fields[1], b)) {
        if (b == 0) throw FormatError("malformed header: dimension 0");
        declared_rows = a;
        k = b;
        m = EmbeddingMatrix(k);
        m.reserve(a);
        continue;
      }
      if (fields.size() < 2) throw FormatError("malformed header or first row at line 1");
      k = fields.size() - 1;
      m = EmbeddingMatrix(k);
    }
    if (fields.size() != k + 1) {
      throw FormatError("dimension mismatch at line " + std::to_string(lineno) + ": expected " +
                        std::to_string(k) + " values, got " + std::to_string(fields.size() - 1));
    }
    row.resize(k);
    for (std::size_t j = 0; j < k; ++j) row[j] = detail::parse_float(fields[j + 1], lineno);
    m.add(std::string(fields[0]), row);
  }
  if (m.empty()) throw FormatError("matrix file has no rows");
  if (declared_rows && *declared_rows != m.size()) {
    throw FormatError("header declares " + std::to_string(*declared_rows) + " rows, file has " +
                      std::to_string(m.size()));
  }
  return m;
}

inline void save_matrix(const EmbeddingMatrix& m, const std::string& path,
                        MatrixFormat format = MatrixFormat::binary) {
  if (m.empty()) throw FormatError("refusing to save an empty matrix");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write matrix: " + path);
  if (format == MatrixFormat::binary) {
    write_matrix_binary(os, m);
  } else {
    write_matrix_text(os, m);
  }
  if (!os) throw IoError("error writing matrix: " + path);
}

/// Detects CEMB by its magic bytes; anything else is parsed as text.
inline EmbeddingMatrix load_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open matrix: " + path);
  char head[8] = {};
  is.read(head, sizeof head);
  const bool binary = is.gcount() == 8 && std::string_view(head, 8) == kMatrixMagic;
  is.clear();
  is.seekg(0);
  return binary ? read_matrix_binary(is) : read_matrix_text(is);
}

}  // namespace charemb
