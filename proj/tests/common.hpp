#pragma once

#include "crnphase/crnphase.hpp"

namespace testing_support {

struct Brusselator {
  crnphase::ReactionNetwork net;
  crnphase::LimitCycle lc;
  crnphase::FloquetData fd;
  crnphase::PhaseResponseCurve prc;
};

/// The benchmark oscillator at omega = 3000 with its cycle, Floquet data and
/// PRC, computed once per test binary.
inline const Brusselator& brusselator() {
  static const Brusselator b = [] {
    Brusselator out;
    out.net = crnphase::models::brusselator(3000.0);
    out.lc = crnphase::find_limit_cycle(out.net, crnphase::Vector::Constant(2, 2.0));
    out.fd = crnphase::floquet_decompose(out.lc, out.net);
    out.prc = crnphase::compute_prc(out.lc, out.fd, out.net);
    return out;
  }();
  return b;
}

inline crnphase::Vector vec(std::initializer_list<double> v) {
  crnphase::Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

}  // namespace testing_support
