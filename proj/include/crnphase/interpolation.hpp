#pragma once

#include <array>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "crnphase/error.hpp"

namespace crnphase {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Maps any phase onto [0, 2pi).
inline double wrap_phase(double theta) {
  double r = std::fmod(theta, two_pi);
  if (r < 0.0) r += two_pi;
  if (r >= two_pi) r = 0.0;
  return r;
}

/// Piecewise Hermite interpolation of vector-valued 2pi-periodic data on a
/// uniform grid. With first derivatives only the interpolant is cubic and C1;
/// supplying second derivatives as well gives a quintic, C2 interpolant.
/// Derivatives returned by eval() are exact derivatives of the interpolant,
/// and node values are reproduced exactly.
class PeriodicHermite {
 public:
  PeriodicHermite() = default;

  /// Arrays are node-major: value(g, d) = values[g * dim + d].
  PeriodicHermite(int dim, std::vector<double> values, std::vector<double> d1, std::vector<double> d2 = {})
      : dim_(dim), values_(std::move(values)), d1_(std::move(d1)), d2_(std::move(d2)) {
    if (dim_ <= 0 || values_.empty() || values_.size() % static_cast<std::size_t>(dim_) != 0)
      throw Error(ErrorCode::invalid_argument, "periodic interpolant: inconsistent node data");
    nodes_ = static_cast<int>(values_.size() / static_cast<std::size_t>(dim_));
    if (d1_.size() != values_.size() || (!d2_.empty() && d2_.size() != values_.size()))
      throw Error(ErrorCode::invalid_argument, "periodic interpolant: derivative arrays have the wrong size");
    h_ = two_pi / nodes_;
  }

  int dim() const { return dim_; }
  int nodes() const { return nodes_; }
  bool quintic() const { return !d2_.empty(); }
  double spacing() const { return h_; }
  double node_phase(int g) const { return g * h_; }

  std::span<const double> node_value(int g) const { return {values_.data() + static_cast<std::size_t>(g) * dim_, static_cast<std::size_t>(dim_)}; }
  std::span<const double> node_d1(int g) const { return {d1_.data() + static_cast<std::size_t>(g) * dim_, static_cast<std::size_t>(dim_)}; }

  /// Writes f, f' and f'' at theta into the given buffers; pass nullptr for
  /// any output not needed.
  void eval(double theta, double* f, double* df, double* ddf) const {
    const double t = wrap_phase(theta) / h_;
    const double nearest = std::round(t);
    if (std::abs(t - nearest) <= 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, t)) {
      node_eval(static_cast<int>(nearest) % nodes_, f, df, ddf);
      return;
    }
    int g = static_cast<int>(t);
    if (g >= nodes_) g = nodes_ - 1;
    const double s = t - g;
    const int g1 = (g + 1 == nodes_) ? 0 : g + 1;
    const std::size_t o0 = static_cast<std::size_t>(g) * dim_;
    const std::size_t o1 = static_cast<std::size_t>(g1) * dim_;

    // Basis weights for (p0, m0, a0, p1, m1, a1) and their first and second
    // derivatives in s.
    std::array<double, 6> w{}, dw{}, ddw{};
    const double s2 = s * s, s3 = s2 * s;
    if (quintic()) {
      const double s4 = s3 * s, s5 = s4 * s;
      if (f)
        w = {1 - 10 * s3 + 15 * s4 - 6 * s5, s - 6 * s3 + 8 * s4 - 3 * s5, 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
             10 * s3 - 15 * s4 + 6 * s5,     -4 * s3 + 7 * s4 - 3 * s5,     0.5 * s3 - s4 + 0.5 * s5};
      if (df)
        dw = {-30 * s2 + 60 * s3 - 30 * s4, 1 - 18 * s2 + 32 * s3 - 15 * s4, s - 4.5 * s2 + 6 * s3 - 2.5 * s4,
              30 * s2 - 60 * s3 + 30 * s4,  -12 * s2 + 28 * s3 - 15 * s4,    1.5 * s2 - 4 * s3 + 2.5 * s4};
      if (ddf)
        ddw = {-60 * s + 180 * s2 - 120 * s3, -36 * s + 96 * s2 - 60 * s3, 1 - 9 * s + 18 * s2 - 10 * s3,
               60 * s - 180 * s2 + 120 * s3,  -24 * s + 84 * s2 - 60 * s3, 3 * s - 12 * s2 + 10 * s3};
    } else {
      w = {2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, 0.0, -2 * s3 + 3 * s2, s3 - s2, 0.0};
      dw = {6 * s2 - 6 * s, 3 * s2 - 4 * s + 1, 0.0, -6 * s2 + 6 * s, 3 * s2 - 2 * s, 0.0};
      ddw = {12 * s - 6, 6 * s - 4, 0.0, -12 * s + 6, 6 * s - 2, 0.0};
    }
    const double h = h_, hh = h_ * h_;
    for (int d = 0; d < dim_; ++d) {
      const double p0 = values_[o0 + d], p1 = values_[o1 + d];
      const double m0 = d1_[o0 + d] * h, m1 = d1_[o1 + d] * h;
      const double a0 = quintic() ? d2_[o0 + d] * hh : 0.0;
      const double a1 = quintic() ? d2_[o1 + d] * hh : 0.0;
      if (f) f[d] = w[0] * p0 + w[1] * m0 + w[2] * a0 + w[3] * p1 + w[4] * m1 + w[5] * a1;
      if (df) df[d] = (dw[0] * p0 + dw[1] * m0 + dw[2] * a0 + dw[3] * p1 + dw[4] * m1 + dw[5] * a1) / h;
      if (ddf) ddf[d] = (ddw[0] * p0 + ddw[1] * m0 + ddw[2] * a0 + ddw[3] * p1 + ddw[4] * m1 + ddw[5] * a1) / hh;
    }
  }

 private:
  // Exact node data; the cubic's second derivative is taken from the right.
  void node_eval(int g, double* f, double* df, double* ddf) const {
    const std::size_t o0 = static_cast<std::size_t>(g) * dim_;
    const std::size_t o1 = static_cast<std::size_t>(g + 1 == nodes_ ? 0 : g + 1) * dim_;
    for (int d = 0; d < dim_; ++d) {
      if (f) f[d] = values_[o0 + d];
      if (df) df[d] = d1_[o0 + d];
      if (ddf)
        ddf[d] = quintic() ? d2_[o0 + d]
                           : (6.0 * (values_[o1 + d] - values_[o0 + d]) / h_ - 4.0 * d1_[o0 + d] - 2.0 * d1_[o1 + d]) / h_;
    }
  }

  int dim_ = 0;
  int nodes_ = 0;
  double h_ = 0.0;
  std::vector<double> values_, d1_, d2_;
};

}  // namespace crnphase
