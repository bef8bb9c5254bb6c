#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "crnphase/floquet.hpp"
#include "crnphase/rng.hpp"
#include "crnphase/stochastic.hpp"

namespace crnphase {

struct VariationalConfig {
  double search_halfwidth = std::numbers::pi / 4.0;
  double newton_tol = 1e-10;
  double eta = 0.3;  // escape radius in the weighted norm
  int max_newton_iters = 50;
  int scan_points = 2048;  // fallback sub-grid inside the search window

  void validate() const {
    if (!(search_halfwidth > 0.0) || !(search_halfwidth < std::numbers::pi))
      throw Error(ErrorCode::invalid_argument, "search half-width must lie in (0, pi)");
    if (!(newton_tol > 0.0) || !(eta > 0.0) || max_newton_iters <= 0 || scan_points < 8)
      throw Error(ErrorCode::invalid_argument, "variational configuration values must be positive");
  }
};

/// Everything the variational principle needs at one candidate phase b for a
/// fixed state x. With v = x - Phi(b), a = P^{-1}(b) v is the weighted
/// amplitude w and e = P^{-1}(b) Phi'(b). N fixes the state dimension at
/// compile time when known.
template <int N = Eigen::Dynamic>
class BasicPhaseKernel {
 public:
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;

  explicit BasicPhaseKernel(const FloquetData& fd)
      : fd_(&fd),
        k_(fd.dim()),
        phi_(k_), dphi_(k_), ddphi_(k_), v_(k_), a_(k_), e_(k_), f_(k_), r_(k_), q_(k_),
        p_(k_, k_), dp_(k_, k_), pinv_(k_, k_) {}

  const FloquetData& floquet() const { return *fd_; }

  /// Loads Phi, P and their derivatives at b and the residual for state x.
  void evaluate(const Eigen::Ref<const Vector>& x, double b) {
    b_ = b;
    fd_->cycle().eval(b, phi_.data(), dphi_.data(), ddphi_.data());
    p_.col(0) = dphi_;
    dp_.col(0) = ddphi_;
    fd_->eval_transverse(b, p_.data() + k_, dp_.data() + k_);
    if (k_ == 2) {
      const double det = p_(0, 0) * p_(1, 1) - p_(0, 1) * p_(1, 0);
      pinv_ << p_(1, 1) / det, -p_(0, 1) / det, -p_(1, 0) / det, p_(0, 0) / det;
    } else {
      pinv_.noalias() = p_.inverse();
    }
    v_.noalias() = x - phi_;
    a_.noalias() = pinv_ * v_;
    e_.noalias() = pinv_ * dphi_;
  }

  /// <x - Phi(b), Phi'(b)>_b, i.e. -G(x, b) / 2. Decreasing through zero at a
  /// local minimum.
  double residual() const { return a_.dot(e_); }

  /// Curvature M(x, b) = (1/2) dG/db, including the derivative of the weight.
  double curvature() {
    f_.noalias() = pinv_ * ddphi_;
    r_.noalias() = pinv_.transpose() * e_;
    q_.noalias() = pinv_.transpose() * a_;
    return e_.squaredNorm() - f_.dot(a_) + (dp_.transpose() * r_).dot(a_) + e_.dot(dp_.transpose() * q_);
  }

  /// Half the second b-derivative of ||x - Phi(b)||^2 with the weight frozen at
  /// the current b. A diagnostic; root selection uses M.
  double frozen_curvature() {
    f_.noalias() = pinv_ * ddphi_;
    return e_.squaredNorm() - f_.dot(a_);
  }

  double weighted_amplitude() const { return a_.norm(); }
  const Vec& w() const { return a_; }
  const Vec& amplitude() const { return v_; }
  const Vec& tangent_coords() const { return e_; }
  const Mat& pinv() const { return pinv_; }
  const Vec& dphi() const { return dphi_; }
  const Vec& phi() const { return phi_; }
  double phase() const { return b_; }

 private:
  const FloquetData* fd_;
  int k_;
  double b_ = 0.0;
  Vec phi_, dphi_, ddphi_, v_, a_, e_, f_, r_, q_;
  Mat p_, dp_, pinv_;
};

using PhaseKernel = BasicPhaseKernel<>;

/// max over sampled phase pairs of ||Phi(t1) - Phi(t2)||_t1.
inline double weighted_orbit_diameter(const FloquetData& fd, int samples = 256) {
  const auto& lc = fd.cycle();
  std::vector<Vector> pts;
  for (int i = 0; i < samples; ++i) pts.push_back(lc.phi(two_pi * i / samples));
  double best = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Matrix pinv = fd.Pinv(two_pi * i / samples);
    for (int j = 0; j < samples; ++j) best = std::max(best, (pinv * (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(j)])).norm());
  }
  return best;
}

/// Default escape radius: 0.1 times the weighted orbit diameter.
inline double default_eta(const FloquetData& fd) { return 0.1 * weighted_orbit_diameter(fd); }

/// G0(x, b, theta) = -2 <x - Phi(b), Phi'(b)>_theta.
inline double g0(const FloquetData& fd, const Vector& x, double b, double theta) {
  const auto& lc = fd.cycle();
  return -2.0 * weighted_inner(fd, theta, x - lc.phi(b), lc.dphi(b));
}

struct VariationalResult {
  double beta = 0.0;
  double normw = 0.0;
  double curvature = 0.0;
  int minima_count = 0;  // minima seen by the search (1 on the Newton fast path)
};

namespace detail {

template <class Kernel>
VariationalResult finish_root(Kernel& kernel, const Eigen::Ref<const Vector>& x, double b, int count) {
  kernel.evaluate(x, b);
  return {b, kernel.weighted_amplitude(), kernel.curvature(), count};
}

// Root of the residual in [lo, hi] where residual(lo) > 0 >= residual(hi).
template <class Kernel>
double bisect_root(Kernel& kernel, const Eigen::Ref<const Vector>& x, double lo, double hi, double tol) {
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    kernel.evaluate(x, mid);
    (kernel.residual() > 0.0 ? lo : hi) = mid;
  }
  // Newton polish from the bracket midpoint, kept inside the bracket.
  double b = 0.5 * (lo + hi);
  for (int it = 0; it < 5; ++it) {
    kernel.evaluate(x, b);
    const double m = kernel.curvature();
    if (!(m > 0.0)) break;
    const double nb = b + kernel.residual() / m;
    if (nb < lo || nb > hi) break;
    const bool done = std::abs(nb - b) < 0.1 * tol;
    b = nb;
    if (done) break;
  }
  return b;
}

}  // namespace detail

namespace detail {

// Downward zero crossings of the residual on [lo, lo + n * step], refined to tol.
template <class Kernel>
void scan_roots(Kernel& kernel, const Eigen::Ref<const Vector>& x, double lo, double step, int n,
                       double tol, std::vector<double>& roots) {
  kernel.evaluate(x, lo);
  double prev = kernel.residual();
  for (int i = 1; i <= n; ++i) {
    const double bi = lo + i * step;
    kernel.evaluate(x, bi);
    const double cur = kernel.residual();
    if (prev > 0.0 && cur <= 0.0) roots.push_back(bisect_root(kernel, x, bi - step, bi, tol));
    prev = cur;
  }
}

}  // namespace detail

/// Continuity-preferring local minimiser of ||x - Phi(b)||_b around
/// beta_prev: solves G(x, beta) = 0 with M > 0 inside the search window and,
/// among several such roots, returns the one closest to beta_prev (ties go to
/// the negative change). `start` seeds the Newton iteration (beta_prev when
/// absent). The returned beta lives on the same lift as beta_prev.
template <int N>
VariationalResult variational_phase(BasicPhaseKernel<N>& kernel, const Eigen::Ref<const Vector>& x, double beta_prev,
                                           const VariationalConfig& cfg, std::optional<double> start = std::nullopt) {
  const double hw = cfg.search_halfwidth;
  const double fine = hw / 64.0;
  std::vector<double> roots;

  // Fast path: safeguarded Newton.
  double b = start && std::abs(*start - beta_prev) <= hw ? *start : beta_prev;
  for (int it = 0; it < cfg.max_newton_iters; ++it) {
    kernel.evaluate(x, b);
    const double m = kernel.curvature();
    if (!(m > 0.0)) break;
    const double step = kernel.residual() / m;
    if (std::abs(step) < cfg.newton_tol) {
      b += step;
      const double d = std::abs(b - beta_prev);
      if (d <= fine) return detail::finish_root(kernel, x, b, 1);
      // Farther away: make sure no other minimum sits closer to beta_prev.
      const int n = static_cast<int>(std::ceil(2.0 * d / fine));
      detail::scan_roots(kernel, x, beta_prev - d, 2.0 * d / n, n, cfg.newton_tol, roots);
      bool closer = false;
      for (double r : roots) {
        if (std::abs(r - b) <= 10.0 * cfg.newton_tol) continue;
        kernel.evaluate(x, r);
        if (kernel.curvature() > 0.0 && std::abs(r - beta_prev) <= d) closer = true;
      }
      if (!closer) return detail::finish_root(kernel, x, b, 1);
      roots.clear();
      break;
    }
    const double nb = b + step;
    if (std::abs(nb - beta_prev) > hw) break;
    b = nb;
  }

  // Fallback: enumerate every downward zero crossing of the residual in the window.
  const int n = cfg.scan_points;
  detail::scan_roots(kernel, x, beta_prev - hw, 2.0 * hw / n, n, cfg.newton_tol, roots);
  std::optional<double> best;
  int count = 0;
  for (double r : roots) {
    kernel.evaluate(x, r);
    if (!(kernel.curvature() > 0.0)) continue;
    ++count;
    const double d = r - beta_prev;
    if (!best) {
      best = r;
      continue;
    }
    const double bd = *best - beta_prev;
    if (std::abs(d) < std::abs(bd) || (std::abs(d) == std::abs(bd) && d < bd)) best = r;
  }
  if (!best)
    throw Error(ErrorCode::no_local_minimum, "no local minimum of the weighted distance within the search window");
  return detail::finish_root(kernel, x, *best, count);
}

inline VariationalResult variational_phase(const FloquetData& fd, const Vector& x, double beta_prev,
                                           const VariationalConfig& cfg = {}) {
  PhaseKernel kernel(fd);
  return variational_phase(kernel, x, beta_prev, cfg);
}

/// delta beta = M^{-1} <Phi'(beta), dx>_beta for a small jump dx.
inline double linear_phase_update(const FloquetData& fd, double beta, double curvature, const Vector& dx) {
  if (curvature < 0.5)
    throw Error(ErrorCode::curvature_too_small, "curvature " + std::to_string(curvature) + " below 1/2");
  const auto& lc = fd.cycle();
  return weighted_inner(fd, beta, lc.dphi(beta), dx) / curvature;
}

/// Phase guess for an arbitrary state: the grid node nearest in Euclidean distance.
inline double nearest_phase(const LimitCycle& lc, const Vector& x) {
  double best = 0.0, dist = std::numeric_limits<double>::infinity();
  for (int g = 0; g < lc.grid_size(); ++g) {
    const double d = (lc.phi_node(g) - x).squaredNorm();
    if (d < dist) {
      dist = d;
      best = lc.node_phase(g);
    }
  }
  return best;
}

enum class Compensator {
  trajectory,  // lambda_a(X(s)): the actual jump intensity
  on_cycle,    // lambda_a(Phi(beta(s)))
};

struct PhaseRecord {
  double t = 0.0;
  double beta_var = 0.0;
  double beta_lin = 0.0;
  double normw = 0.0;
  double curvature = 0.0;
  int minima_count = 0;
};

struct PhaseTrace {
  std::vector<PhaseRecord> records;
  std::optional<double> escaped_at;
  double omega0 = 0.0;
  double anchor_phase = 0.0;  // theta = 0 sits at the limit cycle's section point
};

/// Per-trajectory phase state. Feed it the initial state and then every jump;
/// X, beta_var and the compensator integrand are constant between jumps.
template <int N = Eigen::Dynamic>
class BasicPhaseTracker {
 public:
  /// With `linear` false only the variational phase is tracked.
  BasicPhaseTracker(const ReactionNetwork& net, const FloquetData& fd, const VariationalConfig& cfg,
                    Compensator comp = Compensator::trajectory, bool linear = true)
      : net_(&net),
        fd_(&fd),
        cfg_(cfg),
        comp_(comp),
        linear_(linear),
        kernel_(fd),
        x_(net.num_species()),
        lambda_(net.num_reactions()),
        coeff_(net.num_reactions()),
        onc_(net.num_reactions()),
        ps_(net.num_species(), net.num_reactions()) {
    cfg_.validate();
  }

  /// Starts tracking at (t0, x0); lambda0 are the engine's current propensities.
  void start(double t0, const Vector& x0, const Vector& lambda0, double beta_guess) {
    t_ = t0;
    x_ = x0;
    lambda_ = lambda0;
    escaped_ = false;
    const auto r = variational_phase(kernel_, x_, beta_guess, cfg_);
    beta_var_ = r.beta;
    beta_lin_ = r.beta;
    accept(r);
  }

  /// Processes a jump of `channel` at time t that moved the state to x_new.
  /// Returns false once the weighted amplitude has exceeded eta.
  bool on_event(double t, int channel, const Vector& x_new, const Vector& lambda_new) {
    advance_linear(t);
    beta_lin_ += coeff_[channel] / net_->omega();
    x_ = x_new;
    if (linear_) lambda_ = lambda_new;
    const auto r = variational_phase(kernel_, x_, beta_var_, cfg_, beta_var_ + coeff_[channel] / net_->omega());
    beta_var_ = r.beta;
    accept(r);
    return !escaped_;
  }

  /// Brings the linear phase forward to t with no further jumps.
  void advance_to(double t) { advance_linear(t); }

  double time() const { return t_; }
  double beta_var() const { return beta_var_; }
  double beta_lin() const { return beta_lin_; }
  double normw() const { return normw_; }
  double curvature() const { return curvature_; }
  int minima_count() const { return minima_; }
  bool escaped() const { return escaped_; }
  const Vector& state() const { return x_; }

  PhaseRecord record() const { return {t_, beta_var_, beta_lin_, normw_, curvature_, minima_}; }

  /// Compensated drift sum_a M^{-1} <Phi', S_a>_beta lambda_a at the current
  /// state; equals omega0 on the cycle.
  double compensated_drift() const {
    return comp_ == Compensator::trajectory ? coeff_.dot(lambda_) : coeff_.dot(onc_);
  }

 private:
  void accept(const VariationalResult& r) {
    normw_ = r.normw;
    curvature_ = r.curvature;
    minima_ = r.minima_count;
    if (!(curvature_ > 0.0))
      throw Error(ErrorCode::curvature_too_small, "non-positive curvature at the accepted phase");
    if (normw_ > cfg_.eta) escaped_ = true;
    // kernel_ holds the evaluation at r.beta: <Phi', S_a>_beta = e . (P^{-1} S_a).
    // The coefficients also seed the next Newton solve.
    ps_.noalias() = kernel_.pinv() * net_->stoichiometry_real();
    coeff_.noalias() = ps_.transpose() * kernel_.tangent_coords();
    coeff_ /= curvature_;
    if (!linear_) return;
    if (comp_ == Compensator::on_cycle) propensity_into(*net_, kernel_.phi(), onc_);
  }

  void advance_linear(double t) {
    const double dt = t - t_;
    if (!linear_) {
      t_ = t;
      return;
    }
    beta_lin_ += (fd_->cycle().omega0() - compensated_drift()) * dt;
    t_ = t;
  }

  const ReactionNetwork* net_;
  const FloquetData* fd_;
  VariationalConfig cfg_;
  Compensator comp_;
  bool linear_;
  BasicPhaseKernel<N> kernel_;
  Vector x_, lambda_, coeff_, onc_;
  Eigen::Matrix<double, N, Eigen::Dynamic> ps_;
  double t_ = 0.0, beta_var_ = 0.0, beta_lin_ = 0.0, normw_ = 0.0, curvature_ = 0.0;
  int minima_ = 0;
  bool escaped_ = false;
};

using PhaseTracker = BasicPhaseTracker<>;

/// Calls f(std::integral_constant<int, N>) with N = 2 for planar networks and
/// Eigen::Dynamic otherwise.
template <class F>
decltype(auto) dispatch_dimension(int k, F&& f) {
  if (k == 2) return f(std::integral_constant<int, 2>{});
  return f(std::integral_constant<int, Eigen::Dynamic>{});
}

/// Variational and linear phase along a recorded jump trajectory. The first
/// record is the initial state; records stop at the first escape.
inline PhaseTrace track_phase(const JumpTrajectory& traj, const ReactionNetwork& net, const FloquetData& fd,
                              const VariationalConfig& cfg, std::optional<double> beta_guess = std::nullopt,
                              PropensityForm form = PropensityForm::concentration,
                              Compensator comp = Compensator::trajectory) {
  return dispatch_dimension(net.num_species(), [&](auto nd) {
  constexpr int N = decltype(nd)::value;
  PhaseTrace trace;
  trace.omega0 = fd.cycle().omega0();
  BasicPhaseTracker<N> tracker(net, fd, cfg, comp);
  Counts n = traj.initial_counts;
  Vector x = concentrations(net, n);
  Vector lambda(net.num_reactions());
  propensity_counts_into(net, n, form, lambda);
  tracker.start(0.0, x, lambda, beta_guess ? *beta_guess : nearest_phase(fd.cycle(), x));
  trace.records.push_back(tracker.record());
  if (tracker.escaped()) {
    trace.escaped_at = 0.0;
    return trace;
  }
  const auto& s = net.stoichiometry();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const int a = traj.channels[k];
    for (int i = 0; i < net.num_species(); ++i) n[static_cast<std::size_t>(i)] += s(i, a);
    x = concentrations(net, n);
    propensity_counts_into(net, n, form, lambda);
    const bool inside = tracker.on_event(traj.times[k], a, x, lambda);
    trace.records.push_back(tracker.record());
    if (!inside) {
      trace.escaped_at = traj.times[k];
      return trace;
    }
  }
  return trace;
  });
}

struct PhasePath {
  std::vector<double> times;
  std::vector<double> theta;  // lifted phase
};

/// Euler-Maruyama for the diffusion-approximation phase
/// d theta = omega0 dt + omega^{-1/2} sum_a <R(theta), S_a> sqrt(lambda_a(Phi(theta))) dW_a.
inline PhasePath isochronal_phase_sde(const LimitCycle& lc, const PhaseResponseCurve& prc, const ReactionNetwork& net,
                                      double theta0, double t_end, double h, std::uint64_t seed,
                                      double noise_scale = 1.0) {
  if (!(h > 0.0)) throw Error(ErrorCode::invalid_argument, "phase SDE step must be positive");
  const int k = net.num_species();
  const int m = net.num_reactions();
  const Matrix& s = net.stoichiometry_real();
  Rng rng(seed);
  PhasePath path;
  const auto steps = static_cast<std::int64_t>(std::ceil(t_end / h - 1e-9));
  path.times.reserve(static_cast<std::size_t>(steps + 1));
  path.theta.reserve(static_cast<std::size_t>(steps + 1));
  path.times.push_back(0.0);
  path.theta.push_back(theta0);
  Vector phi(k), r(k), lambda(m);
  double theta = theta0;
  const double amp = noise_scale / std::sqrt(net.omega());
  for (std::int64_t n = 1; n <= steps; ++n) {
    const double t = std::min(n * h, t_end);
    const double dt = t - path.times.back();
    lc.eval(theta, phi.data(), nullptr, nullptr);
    prc.eval(theta, r.data());
    propensity_into(net, phi, lambda);
    double noise = 0.0;
    const double sq = std::sqrt(dt);
    for (int a = 0; a < m; ++a) noise += r.dot(s.col(a)) * std::sqrt(std::max(lambda[a], 0.0)) * sq * rng.normal();
    theta += lc.omega0() * dt + amp * noise;
    path.times.push_back(t);
    path.theta.push_back(theta);
  }
  return path;
}

}  // namespace crnphase
