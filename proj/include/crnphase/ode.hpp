#pragma once

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "crnphase/error.hpp"
#include "crnphase/network.hpp"

namespace crnphase {

using OdeState = std::vector<double>;
using OdeRhs = std::function<void(const OdeState&, OdeState&, double)>;

namespace detail {

namespace odeint = boost::numeric::odeint;
using Dopri5 = odeint::runge_kutta_dopri5<OdeState>;

inline bool all_finite(const OdeState& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

[[noreturn]] inline void integration_failure(double t, const OdeState& last, const std::string& why) {
  std::ostringstream msg;
  msg << why << " at t = " << t << "; last valid state (";
  for (std::size_t i = 0; i < last.size() && i < 8; ++i) msg << (i ? ", " : "") << last[i];
  msg << (last.size() > 8 ? ", ...)" : ")");
  throw Error(ErrorCode::integration_failed, msg.str());
}

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) stepping with continuous (dense) output
/// between the last two accepted steps. Used for event location.
class DenseOde {
 public:
  DenseOde(OdeRhs rhs, const OdeState& x0, double t0, double tol, double dt0 = 1e-3)
      : rhs_(std::move(rhs)),
        stepper_(detail::odeint::make_dense_output(tol, tol, detail::Dopri5())),
        last_valid_(x0) {
    stepper_.initialize(x0, t0, dt0);
  }

  void step() {
    try {
      stepper_.do_step(std::ref(rhs_));
    } catch (const detail::odeint::odeint_error& e) {
      detail::integration_failure(stepper_.current_time(), last_valid_, std::string("step-size underflow (") + e.what() + ")");
    }
    if (!detail::all_finite(stepper_.current_state()))
      detail::integration_failure(stepper_.current_time(), last_valid_, "non-finite state");
    last_valid_ = stepper_.current_state();
  }

  double time() const { return stepper_.current_time(); }
  double previous_time() const { return stepper_.previous_time(); }
  const OdeState& state() const { return stepper_.current_state(); }

  /// Continuous extension; t must lie in [previous_time(), time()].
  void state_at(double t, OdeState& out) { stepper_.calc_state(t, out); }

 private:
  OdeRhs rhs_;
  decltype(detail::odeint::make_dense_output(1.0, 1.0, detail::Dopri5())) stepper_;
  OdeState last_valid_;
};

/// Integrates from t0 and lands exactly on every requested time (ascending);
/// the observer sees (state, time) at each of them.
template <class Observer>
void integrate_at_times(const OdeRhs& rhs, OdeState& x, double t0, const std::vector<double>& times, double tol,
                        Observer&& observe) {
  auto stepper = detail::odeint::make_controlled(tol, tol, detail::Dopri5());
  double t = t0;
  OdeState last = x;
  try {
    for (double target : times) {
      if (target > t) {
        detail::odeint::integrate_adaptive(stepper, std::ref(rhs), x, t, target, std::min(1e-2, target - t));
        t = target;
      }
      if (!detail::all_finite(x)) detail::integration_failure(t, last, "non-finite state");
      last = x;
      observe(static_cast<const OdeState&>(x), t);
    }
  } catch (const detail::odeint::odeint_error& e) {
    detail::integration_failure(t, last, std::string("step-size underflow (") + e.what() + ")");
  }
}

inline void integrate_to(const OdeRhs& rhs, OdeState& x, double t0, double t1, double tol) {
  integrate_at_times(rhs, x, t0, {t1}, tol, [](const OdeState&, double) {});
}

inline OdeRhs mass_action_rhs(const ReactionNetwork& net) {
  return [&net](const OdeState& x, OdeState& dx, double) {
    const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Vector f = drift(net, xv);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = f[static_cast<Eigen::Index>(i)];
  };
}

/// State plus the K x K matrix Z solving dZ/dt = J(x(t)) Z, packed column-major
/// after the K state entries.
inline OdeRhs variational_rhs(const ReactionNetwork& net) {
  const int k = net.num_species();
  return [&net, k](const OdeState& y, OdeState& dy, double) {
    const Eigen::Map<const Vector> x(y.data(), k);
    const Eigen::Map<const Matrix> z(y.data() + k, k, k);
    Eigen::Map<Vector> dx(dy.data(), k);
    Eigen::Map<Matrix> dz(dy.data() + k, k, k);
    dx = drift(net, x);
    dz = jacobian(net, x) * z;
  };
}

inline OdeState pack_variational(const Vector& x, const Matrix& z) {
  const auto k = x.size();
  OdeState y(static_cast<std::size_t>(k + k * k));
  Eigen::Map<Vector>(y.data(), k) = x;
  Eigen::Map<Matrix>(y.data() + k, k, k) = z;
  return y;
}

struct OdePath {
  std::vector<double> times;
  std::vector<Vector> states;
};

/// Time-ordered path of the mass-action ODE, one record per accepted step.
inline OdePath integrate_ode(const ReactionNetwork& net, const Vector& x0, double t0, double t1, double tol) {
  if (!(tol > 0.0)) throw Error(ErrorCode::invalid_argument, "integrator tolerance must be positive");
  if ((x0.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "initial concentrations must be nonnegative");
  if (!(t1 >= t0)) throw Error(ErrorCode::invalid_argument, "time span must be ordered");
  OdePath path;
  OdeState x(x0.data(), x0.data() + x0.size());
  path.times.push_back(t0);
  path.states.push_back(x0);
  if (t1 == t0) return path;
  auto stepper = detail::odeint::make_controlled(tol, tol, detail::Dopri5());
  OdeState last = x;
  double tlast = t0;
  try {
    detail::odeint::integrate_adaptive(stepper, mass_action_rhs(net), x, t0, t1, std::min(1e-2, t1 - t0),
                                       [&](const OdeState& s, double t) {
                                         if (!detail::all_finite(s)) detail::integration_failure(t, last, "non-finite state");
                                         last = s;
                                         tlast = t;
                                         if (t > path.times.back()) {
                                           path.times.push_back(t);
                                           path.states.push_back(Eigen::Map<const Vector>(s.data(), x0.size()));
                                         }
                                       });
  } catch (const detail::odeint::odeint_error& e) {
    detail::integration_failure(tlast, last, std::string("step-size underflow (") + e.what() + ")");
  }
  return path;
}

}  // namespace crnphase
