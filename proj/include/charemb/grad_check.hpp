#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "charemb/tensor.hpp"

namespace charemb::ad {

/// Scalar function of the current parameter values, recorded on a fresh tape.
using ScalarFn = std::function<Tensor<double>(Tape<double>&)>;

/// Largest relative error over every coordinate of every parameter, where a
/// is the tape gradient and n the central difference (f(x+h) - f(x-h)) / 2h.
/// The error is (|a - n| - r) / max(1e-8, |a| + |n|), floored at 0, with
/// r = eps * (|f(x+h)| + |f(x-h)|) / 4h the bound on how far rounding the two
/// loss values can move n. Without r, coordinates whose true gradient is near
/// 1e-8 fail on loss rounding alone.
inline double grad_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                         double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.grad().empty() ? std::vector<double>(p.size(), 0.0)
                         : std::vector<double>(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p[i];
      p[i] = x0 + h;
      double fp, fm;
      {
        Tape<double> t;
        fp = f(t).item();
      }
      p[i] = x0 - h;
      {
        Tape<double> t;
        fm = f(t).item();
      }
      p[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double rounding =
          std::numeric_limits<double>::epsilon() * (std::abs(fp) + std::abs(fm)) / (4.0 * h);
      const double a = analytic[i];
      const double err = std::max(0.0, std::abs(a - numeric) - rounding) /
                         std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Single-point form: f takes the point as its argument.
inline double grad_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                         Tensor<double> point, double h = 1e-5) {
  return grad_check([&](Tape<double>& t) { return f(t, point); }, {point}, h);
}

}  // namespace charemb::ad
