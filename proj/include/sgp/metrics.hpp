#pragma once

// Answer accuracy and continual-learning metrics over a lower-triangular
// accuracy matrix.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgp/errors.hpp"

namespace sgp {

using json = nlohmann::json;

/// Lowercase, trim, drop one leading article.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  const auto b = out.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  out = out.substr(b, out.find_last_not_of(" \t\r\n") - b + 1);
  for (std::string_view art : {"a ", "an ", "the "}) {
    if (out.size() > art.size() && out.compare(0, art.size(), art) == 0) {
      out = out.substr(out.find_first_not_of(' ', art.size()));
      break;
    }
  }
  return out;
}

/// min(#matching annotations / 3, 1).
inline double answer_accuracy(std::string_view pred, const std::vector<std::string>& annotations) {
  if (annotations.size() != 10) throw DataError("answer accuracy needs exactly 10 annotations");
  const std::string p = normalize_answer(pred);
  int n = 0;
  for (const auto& a : annotations) n += normalize_answer(a) == p ? 1 : 0;
  return std::min(n / 3.0, 1.0);
}

class MetricError : public DataError {
 public:
  explicit MetricError(const std::string& what) : DataError(what) {}
};

/// a[k][j] for j <= k, 0-based internally; the public metric functions take
/// 1-based k as in the usual notation.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::vector<std::string> labels) : labels_(std::move(labels)), rows_(labels_.size()) {
    for (std::size_t k = 0; k < rows_.size(); ++k) rows_[k].assign(k + 1, std::nullopt);
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

  void set(std::size_t k, std::size_t j, double v) {
    if (k >= size() || j > k) throw MetricError("accuracy matrix index outside the lower triangle");
    if (!(v >= 0.0 && v <= 1.0)) throw MetricError("accuracy outside [0, 1]");
    rows_[k][j] = v;
  }
  bool has(std::size_t k, std::size_t j) const { return k < size() && j <= k && rows_[k][j].has_value(); }
  double at(std::size_t k, std::size_t j) const {
    if (!has(k, j)) throw MetricError("accuracy entry (" + std::to_string(k + 1) + "," + std::to_string(j + 1) + ") not filled");
    return *rows_[k][j];
  }
  bool row_filled(std::size_t k) const {
    if (k >= size()) return false;
    for (const auto& v : rows_[k])
      if (!v) return false;
    return true;
  }
  std::size_t filled_count() const {
    std::size_t n = 0;
    for (const auto& r : rows_)
      for (const auto& v : r) n += v ? 1 : 0;
    return n;
  }

  /// Row-major lower triangle: header "after,<labels>", then one line per row.
  std::string to_csv() const {
    std::ostringstream os;
    os << "after";
    for (const auto& l : labels_) os << ',' << l;
    os << '\n';
    char buf[40];
    for (std::size_t k = 0; k < size(); ++k) {
      os << labels_[k];
      for (std::size_t j = 0; j < size(); ++j) {
        os << ',';
        if (has(k, j)) {
          std::snprintf(buf, sizeof buf, "%.17g", at(k, j));
          os << buf;
        }
      }
      os << '\n';
    }
    return os.str();
  }

  static AccuracyMatrix from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    auto split = [](const std::string& l) {
      std::vector<std::string> out;
      std::string cur;
      for (char c : l) {
        if (c == ',') {
          out.push_back(cur);
          cur.clear();
        } else if (c != '\r') {
          cur.push_back(c);
        }
      }
      out.push_back(cur);
      return out;
    };
    if (!std::getline(is, line)) throw DataError("accuracy matrix csv is empty");
    auto head = split(line);
    if (head.empty() || head[0] != "after") throw DataError("accuracy matrix csv header malformed");
    AccuracyMatrix m(std::vector<std::string>(head.begin() + 1, head.end()));
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!std::getline(is, line)) break;
      auto cells = split(line);
      if (cells.size() != m.size() + 1 || cells[0] != m.labels_[k]) throw DataError("accuracy matrix csv row malformed");
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (cells[j + 1].empty()) continue;
        try {
          m.set(k, j, std::stod(cells[j + 1]));
        } catch (const std::invalid_argument&) {
          throw DataError("accuracy matrix csv has a non-numeric cell");
        }
      }
    }
    return m;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<std::optional<double>>> rows_;
};

/// A_k = mean_{j<=k} a_{k,j}.
inline double average_accuracy(const AccuracyMatrix& m, std::size_t k) {
  if (k < 1 || !m.row_filled(k - 1)) throw MetricError("row " + std::to_string(k) + " of the accuracy matrix is not filled");
  double s = 0;
  for (std::size_t j = 0; j < k; ++j) s += m.at(k - 1, j);
  return s / static_cast<double>(k);
}

/// F_k = mean_{j<k} (max_{l<k} a_{l,j} - a_{k,j}).
inline double forgetting(const AccuracyMatrix& m, std::size_t k) {
  if (k < 2) throw MetricError("forgetting is undefined for k < 2");
  double s = 0;
  for (std::size_t j = 0; j + 1 < k; ++j) {
    double best = m.at(j, j);
    for (std::size_t l = j; l + 1 < k; ++l) best = std::max(best, m.at(l, j));
    s += best - m.at(k - 1, j);
  }
  return s / static_cast<double>(k - 1);
}

/// B_k = mean_{j<k} (a_{k,j} - a_{j,j}).
inline double backward_transfer(const AccuracyMatrix& m, std::size_t k) {
  if (k < 2) throw MetricError("backward transfer is undefined for k < 2");
  double s = 0;
  for (std::size_t j = 0; j + 1 < k; ++j) s += m.at(k - 1, j) - m.at(j, j);
  return s / static_cast<double>(k - 1);
}

struct MetricReport {
  std::vector<std::string> labels;
  std::vector<double> A;                // A_1..A_N
  std::vector<std::optional<double>> F, B;  // empty at k = 1
  double final_A = 0;
  std::optional<double> final_F, final_B;
};

inline MetricReport metric_report(const AccuracyMatrix& m) {
  MetricReport r;
  r.labels = m.labels();
  for (std::size_t k = 1; k <= m.size(); ++k) {
    if (!m.row_filled(k - 1)) break;
    r.A.push_back(average_accuracy(m, k));
    r.F.push_back(k >= 2 ? std::optional<double>(forgetting(m, k)) : std::nullopt);
    r.B.push_back(k >= 2 ? std::optional<double>(backward_transfer(m, k)) : std::nullopt);
  }
  if (r.A.empty()) throw MetricError("accuracy matrix has no filled rows");
  r.final_A = r.A.back();
  r.final_F = r.F.back();
  r.final_B = r.B.back();
  return r;
}

inline json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j{{"labels", r.labels}, {"A", r.A}, {"final_A", r.final_A}, {"final_F", opt(r.final_F)}, {"final_B", opt(r.final_B)}};
  j["F"] = json::array();
  j["B"] = json::array();
  for (std::size_t i = 0; i < r.F.size(); ++i) {
    j["F"].push_back(opt(r.F[i]));
    j["B"].push_back(opt(r.B[i]));
  }
  return j;
}

}  // namespace sgp
