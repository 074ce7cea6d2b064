#pragma once

// Synthetic stand-ins for detector and OCR features.

#include <string>
#include <string_view>
#include <vector>

#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"
#include "sgp/world.hpp"

namespace sgp {

inline constexpr int kAppearanceDim = 16;
inline constexpr int kBoxDim = 5;  // x, y, w, h, area
inline constexpr int kTrigramDim = 32;

/// Fixed pseudo-random unit-variance vector keyed by `name`.
inline std::vector<double> hashed_vector(std::string_view name, int dim, std::string_view salt) {
  Rng rng(substream(fnv1a(name), salt));
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.normal();
  return v;
}

/// Object appearance: name vector plus half the color vector.
inline std::vector<double> appearance_vector(std::string_view name, std::string_view color) {
  auto v = hashed_vector(name, kAppearanceDim, "appearance");
  if (!color.empty()) {
    const auto c = hashed_vector(color, kAppearanceDim, "color");
    for (int i = 0; i < kAppearanceDim; ++i) v[static_cast<std::size_t>(i)] += 0.5 * c[static_cast<std::size_t>(i)];
  }
  return v;
}

inline std::vector<double> box_vector(const Box& b) { return {b[0], b[1], b[2], b[3], b[2] * b[3]}; }

/// Bag of hashed character trigrams of "#word#", L1-normalized.
inline std::vector<double> trigram_vector(std::string_view word) {
  std::vector<double> v(kTrigramDim, 0.0);
  const std::string padded = "#" + std::string(word) + "#";
  int n = 0;
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i, ++n)
    v[fnv1a(std::string_view(padded).substr(i, 3)) % kTrigramDim] += 1.0;
  if (n > 0)
    for (auto& x : v) x /= n;
  return v;
}

/// Color of `object` according to the scene graph, or "".
inline std::string color_in_graph(const SceneGraph& g, std::string_view object) {
  for (const auto& r : g.relationships)
    if (r.kind() == RelationshipKind::attribute && r.subject == object) return r.predicate;
  return {};
}

template <class T>
Matrix<T> row_matrix(const std::vector<std::vector<double>>& rows, int dim) {
  Matrix<T> m(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < dim; ++j) m(static_cast<Index>(i), j) = static_cast<T>(rows[i][static_cast<std::size_t>(j)]);
  return m;
}

/// Bytes needed to store a real sample in episodic memory: its JSON record
/// plus float32 visual features for every object and OCR token.
inline std::size_t sample_storage_bytes(const Sample& s) {
  const std::size_t floats = s.objects.size() * (kAppearanceDim + kBoxDim) +
                             s.ocr_tokens.size() * (kAppearanceDim + kBoxDim + kTrigramDim);
  return to_json(s).dump().size() + 4 * floats;
}

}  // namespace sgp
