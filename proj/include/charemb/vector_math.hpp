#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace charemb {

/// Cosine of two float vectors accumulated in double; each norm is clamped to
/// eps so zero vectors give 0.
inline double cosine(std::span<const float> u, std::span<const float> v, double eps = 1e-8) {
  double dot = 0, nu = 0, nv = 0;
  const auto n = std::min(u.size(), v.size());
  for (std::size_t i = 0; i < n; ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  return dot / (std::max(std::sqrt(nu), eps) * std::max(std::sqrt(nv), eps));
}

inline double l2_norm(std::span<const float> u) {
  double s = 0;
  for (float x : u) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace charemb
