#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "crnphase/limit_cycle.hpp"

namespace crnphase {

struct FloquetOptions {
  double ode_tol = 1e-12;
  double complex_tol = 1e-8;   // max |Im mu| / |mu| accepted as real
  double trivial_tol = 1e-6;   // |nu_1| must be below trivial_tol * omega0
  double max_condition = 1e12; // P(0) conditioning limit
};

/// Pi(t) for the variational equation dz/dt = J(Phi(omega0 t)) z with
/// z_1(0) = Phi'(0) and the remaining initial columns an orthonormal
/// completion of Phi'(0).
inline Matrix initial_fundamental_columns(const LimitCycle& lc) {
  const int k = lc.dim();
  const Vector t0 = lc.dphi(0.0);
  Eigen::HouseholderQR<Matrix> qr{Matrix(t0)};
  const Matrix q = qr.householderQ() * Matrix::Identity(k, k);
  Matrix z0(k, k);
  z0.col(0) = t0;
  z0.rightCols(k - 1) = q.rightCols(k - 1);
  return z0;
}

inline Matrix fundamental_matrix(const LimitCycle& lc, const ReactionNetwork& net, double t, double ode_tol = 1e-12) {
  if (t < 0.0 || t > lc.period() * (1.0 + 1e-12))
    throw Error(ErrorCode::invalid_argument, "fundamental matrix requested outside [0, period]");
  const int k = lc.dim();
  OdeState y = pack_variational(lc.phi(0.0), initial_fundamental_columns(lc));
  integrate_to(variational_rhs(net), y, 0.0, t, ode_tol);
  return Eigen::Map<const Matrix>(y.data() + k, k, k);
}

/// State-transition matrix Psi(t) = Pi(t) Pi(0)^{-1}; Psi(period) is the
/// monodromy matrix.
inline Matrix transition_matrix(const LimitCycle& lc, const ReactionNetwork& net, double t, double ode_tol = 1e-12) {
  const int k = lc.dim();
  OdeState y = pack_variational(lc.phi(0.0), Matrix::Identity(k, k));
  integrate_to(variational_rhs(net), y, 0.0, t, ode_tol);
  return Eigen::Map<const Matrix>(y.data() + k, k, k);
}

/// Floquet structure of a limit cycle: exponents nu (nu_1 = 0 first, the rest
/// descending), the 2pi-periodic basis P(theta) whose first column is
/// Phi'(theta), and the attraction rate b = -nu_2.
class FloquetData {
 public:
  FloquetData() = default;

  FloquetData(LimitCycle lc, Vector exponents, Matrix monodromy, std::vector<Matrix> p_nodes,
              std::vector<Matrix> dp_nodes, std::vector<Matrix> ddp_nodes, double periodicity_error)
      : lc_(std::move(lc)),
        exponents_(std::move(exponents)),
        monodromy_(std::move(monodromy)),
        p_nodes_(std::move(p_nodes)),
        periodicity_error_(periodicity_error) {
    const int k = lc_.dim();
    decay_rate_ = k > 1 ? -exponents_.tail(k - 1).maxCoeff() : 0.0;
    if (k > 1) {
      // Columns 2..K carry their own interpolant; column 1 is always taken
      // from the orbit so that P^{-1} Phi' = e_1 holds identically.
      const int dim = k * (k - 1);
      std::vector<double> v, d, dd;
      for (std::size_t g = 0; g < p_nodes_.size(); ++g) {
        for (int j = 1; j < k; ++j)
          for (int i = 0; i < k; ++i) {
            v.push_back(p_nodes_[g](i, j));
            d.push_back(dp_nodes[g](i, j));
            dd.push_back(ddp_nodes[g](i, j));
          }
      }
      columns_ = PeriodicHermite(dim, std::move(v), std::move(d), std::move(dd));
    }
  }

  const LimitCycle& cycle() const { return lc_; }
  int dim() const { return lc_.dim(); }
  const Vector& exponents() const { return exponents_; }
  double decay_rate() const { return decay_rate_; }
  const Matrix& monodromy() const { return monodromy_; }
  double periodicity_error() const { return periodicity_error_; }
  const std::vector<Matrix>& p_nodes() const { return p_nodes_; }

  /// P(theta) and optionally P'(theta) into preallocated K x K matrices.
  void eval_p(double theta, Matrix& p, Matrix* dp = nullptr) const {
    const int k = dim();
    lc_.eval(theta, nullptr, p.col(0).data(), nullptr);
    if (dp) lc_.eval(theta, nullptr, nullptr, dp->col(0).data());
    if (k > 1) columns_.eval(theta, p.col(1).data(), dp ? dp->col(1).data() : nullptr, nullptr);
  }

  /// Columns 2..K of P and dP (column-major, contiguous) at theta.
  void eval_transverse(double theta, double* p_tail, double* dp_tail) const {
    if (dim() > 1) columns_.eval(theta, p_tail, dp_tail, nullptr);
  }

  Matrix P(double theta) const {
    Matrix p(dim(), dim());
    eval_p(theta, p);
    return p;
  }
  Matrix dP(double theta) const {
    Matrix p(dim(), dim()), dp(dim(), dim());
    eval_p(theta, p, &dp);
    return dp;
  }
  Matrix Pinv(double theta) const { return P(theta).inverse(); }

  /// Weight matrix (P P^T)^{-1} of the inner product at theta.
  Matrix weight(double theta) const {
    const Matrix pinv = Pinv(theta);
    return pinv.transpose() * pinv;
  }

 private:
  LimitCycle lc_;
  Vector exponents_;
  Matrix monodromy_;
  std::vector<Matrix> p_nodes_;
  double periodicity_error_ = 0.0;
  double decay_rate_ = 0.0;
  PeriodicHermite columns_;
};

inline FloquetData floquet_decompose(const LimitCycle& lc, const ReactionNetwork& net, const FloquetOptions& opt = {}) {
  const int k = lc.dim();
  const double period = lc.period();
  const double omega0 = lc.omega0();
  const Matrix mono = transition_matrix(lc, net, period, opt.ode_tol);

  Eigen::EigenSolver<Matrix> es(mono);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::degenerate_basis, "monodromy eigen-decomposition failed");
  const Eigen::VectorXcd mu = es.eigenvalues();
  const Eigen::MatrixXcd vecs = es.eigenvectors();

  int trivial = 0;
  for (int i = 1; i < k; ++i)
    if (std::abs(mu[i] - 1.0) < std::abs(mu[trivial] - 1.0)) trivial = i;

  std::vector<int> rest;
  for (int i = 0; i < k; ++i) {
    if (std::abs(mu[i].imag()) > opt.complex_tol * std::abs(mu[i]))
      throw Error(ErrorCode::complex_multiplier, "Floquet multiplier " + std::to_string(mu[i].real()) + " + " +
                                                     std::to_string(mu[i].imag()) + "i is not real");
    if (!(mu[i].real() > 0.0))
      throw Error(ErrorCode::complex_multiplier, "Floquet multiplier " + std::to_string(mu[i].real()) +
                                                     " is not positive; its exponent is not real");
    if (i != trivial) rest.push_back(i);
  }
  const double nu1 = std::log(mu[trivial].real()) / period;
  if (std::abs(nu1) >= opt.trivial_tol * omega0)
    throw Error(ErrorCode::not_converged, "trivial Floquet exponent " + std::to_string(nu1) + " is not zero");

  std::sort(rest.begin(), rest.end(), [&](int a, int b) { return mu[a].real() > mu[b].real(); });
  Vector nu(k);
  nu[0] = 0.0;  // snapped after the check above
  Matrix p0(k, k);
  p0.col(0) = lc.dphi(0.0);
  for (int j = 1; j < k; ++j) {
    const int idx = rest[static_cast<std::size_t>(j - 1)];
    nu[j] = std::log(mu[idx].real()) / period;
    if (!(nu[j] < 0.0)) throw Error(ErrorCode::no_cycle, "limit cycle is not attracting (nu >= 0)");
    Vector v = vecs.col(idx).real();
    v.normalize();
    for (int i = 0; i < k; ++i)
      if (std::abs(v[i]) > 1e-12) {
        if (v[i] < 0.0) v = -v;
        break;
      }
    p0.col(j) = v;
  }
  Eigen::JacobiSVD<Matrix> svd(p0);
  const auto sv = svd.singularValues();
  if (!(sv[k - 1] > 0.0) || sv[0] / sv[k - 1] > opt.max_condition)
    throw Error(ErrorCode::degenerate_basis, "Floquet basis P(0) is singular or ill-conditioned");

  // P(omega0 t) = Psi(t) P(0) exp(-t S) on the phase grid.
  const int grid = lc.grid_size();
  std::vector<double> times;
  for (int g = 0; g < grid; ++g) times.push_back(period * g / grid);
  times.push_back(period);
  std::vector<Matrix> p_nodes, dp_nodes, ddp_nodes;
  double periodicity_error = 0.0;
  OdeState y = pack_variational(lc.phi(0.0), p0);
  int g = 0;
  integrate_at_times(variational_rhs(net), y, 0.0, times, opt.ode_tol, [&](const OdeState& s, double t) {
    Matrix p = Eigen::Map<const Matrix>(s.data() + k, k, k);
    for (int j = 1; j < k; ++j) p.col(j) *= std::exp(-t * nu[j]);
    if (g == grid) {
      p.col(0) = lc.dphi(0.0);
      periodicity_error = (p - p0).norm() / p0.norm();
      return;
    }
    p.col(0) = lc.dphi_node(g);
    const Vector x = lc.phi_node(g);
    const Matrix jac = jacobian(net, x);
    const Matrix jprime = jacobian_derivative(net, x, p.col(0));
    const Matrix dp = (jac * p - p * nu.asDiagonal()) / omega0;
    const Matrix ddp = (jprime * p + jac * dp - dp * nu.asDiagonal()) / omega0;
    p_nodes.push_back(p);
    dp_nodes.push_back(dp);
    ddp_nodes.push_back(ddp);
    ++g;
  });
  for (int j = 1; j < k; ++j) {
    double ms = 0.0;
    for (const auto& p : p_nodes) ms += p.col(j).squaredNorm();
    const double scale = 1.0 / std::sqrt(ms / grid);
    for (int q = 0; q < grid; ++q) {
      const auto i = static_cast<std::size_t>(q);
      p_nodes[i].col(j) *= scale;
      dp_nodes[i].col(j) *= scale;
      ddp_nodes[i].col(j) *= scale;
    }
  }
  return FloquetData(lc, nu, mono, std::move(p_nodes), std::move(dp_nodes), std::move(ddp_nodes), periodicity_error);
}

/// <u, v>_theta = <P^{-1}(theta) u, P^{-1}(theta) v>.
inline double weighted_inner(const FloquetData& fd, double theta, const Vector& u, const Vector& v) {
  const auto lu = fd.P(theta).partialPivLu();
  return lu.solve(u).dot(lu.solve(v));
}

inline double weighted_norm(const FloquetData& fd, double theta, const Vector& u) {
  return std::sqrt(weighted_inner(fd, theta, u, u));
}

/// ||P^{-1}(theta) Phi'(theta)||^2; identically one with the first-column
/// convention. Exposed as a diagnostic.
inline double tangent_weight(const FloquetData& fd, double theta) {
  return fd.P(theta).partialPivLu().solve(fd.cycle().dphi(theta)).squaredNorm();
}

/// Phase response curve R(theta) on the phase grid.
class PhaseResponseCurve {
 public:
  PhaseResponseCurve() = default;
  PhaseResponseCurve(int dim, std::vector<double> r, std::vector<double> dr, std::vector<Vector> adjoint_nodes,
                     double adjoint_gap)
      : curve_(dim, std::move(r), std::move(dr)), adjoint_nodes_(std::move(adjoint_nodes)), adjoint_gap_(adjoint_gap) {}

  int dim() const { return curve_.dim(); }
  int grid_size() const { return curve_.nodes(); }

  Vector R(double theta) const {
    Vector out(dim());
    curve_.eval(theta, out.data(), nullptr, nullptr);
    return out;
  }
  Vector dR(double theta) const {
    Vector out(dim());
    curve_.eval(theta, nullptr, out.data(), nullptr);
    return out;
  }
  void eval(double theta, double* r) const { curve_.eval(theta, r, nullptr, nullptr); }
  Vector node(int g) const {
    auto v = curve_.node_value(g);
    return Eigen::Map<const Vector>(v.data(), dim());
  }

  /// R at the nodes from the independent backward adjoint integration.
  const std::vector<Vector>& adjoint_nodes() const { return adjoint_nodes_; }
  /// Sup-norm gap between the Floquet and adjoint constructions.
  double adjoint_gap() const { return adjoint_gap_; }

 private:
  PeriodicHermite curve_;
  std::vector<Vector> adjoint_nodes_;
  double adjoint_gap_ = 0.0;
};

struct PrcOptions {
  double ode_tol = 1e-12;
  double mismatch_tol = 1e-4;
  int max_periods = 400;
};

/// Backward integration of omega0 dR/dtheta = -J^T(theta) R, run until the
/// transients have decayed, normalised once with <R, Phi'> = 1 at theta = 0.
inline std::vector<Vector> adjoint_prc(const LimitCycle& lc, const ReactionNetwork& net, double decay_rate,
                                       const PrcOptions& opt = {}) {
  const int k = lc.dim();
  const double omega0 = lc.omega0();
  int periods = static_cast<int>(std::ceil(32.0 / std::max(decay_rate * lc.period(), 1e-3))) + 1;
  periods = std::clamp(periods, 2, opt.max_periods);
  const double span = two_pi * periods;
  // tau = span - theta runs forward while theta runs backward.
  OdeRhs rhs = [&lc, &net, k, omega0, span](const OdeState& r, OdeState& dr, double tau) {
    const Vector x = lc.phi(span - tau);
    const Eigen::Map<const Vector> rv(r.data(), k);
    Eigen::Map<Vector>(dr.data(), k) = jacobian(net, x).transpose() * rv / omega0;
  };
  const Vector t0 = lc.dphi(0.0);
  const Vector start = t0 / t0.squaredNorm();
  OdeState r(start.data(), start.data() + k);
  const int grid = lc.grid_size();
  std::vector<double> taus;
  for (int g = grid - 1; g >= 0; --g) taus.push_back(span - lc.node_phase(g));
  std::vector<Vector> nodes(static_cast<std::size_t>(grid));
  int g = grid - 1;
  integrate_at_times(rhs, r, 0.0, taus, opt.ode_tol, [&](const OdeState& s, double) {
    nodes[static_cast<std::size_t>(g--)] = Eigen::Map<const Vector>(s.data(), k);
  });
  const double c = nodes[0].dot(lc.dphi_node(0));
  for (auto& v : nodes) v /= c;
  return nodes;
}

/// R(theta) = (P P^T)^{-1} Phi'(theta), cross-checked against the adjoint
/// construction.
inline PhaseResponseCurve compute_prc(const LimitCycle& lc, const FloquetData& fd, const ReactionNetwork& net,
                                      const PrcOptions& opt = {}) {
  const int k = lc.dim();
  const int grid = lc.grid_size();
  std::vector<double> r, dr;
  Matrix p(k, k), dp(k, k);
  for (int g = 0; g < grid; ++g) {
    const double th = lc.node_phase(g);
    fd.eval_p(th, p, &dp);
    const Matrix pinv = p.inverse();
    const Matrix w = pinv.transpose() * pinv;
    const Matrix dw = -w * (dp * p.transpose() + p * dp.transpose()) * w;
    const Vector rv = w * lc.dphi(th);
    const Vector drv = dw * lc.dphi(th) + w * lc.ddphi(th);
    r.insert(r.end(), rv.data(), rv.data() + k);
    dr.insert(dr.end(), drv.data(), drv.data() + k);
  }
  std::vector<Vector> adj = adjoint_prc(lc, net, fd.decay_rate(), opt);
  double gap = 0.0;
  for (int g = 0; g < grid; ++g)
    gap = std::max(gap, (adj[static_cast<std::size_t>(g)] -
                         Eigen::Map<const Vector>(r.data() + static_cast<std::size_t>(g) * k, k))
                            .cwiseAbs()
                            .maxCoeff());
  if (gap > opt.mismatch_tol)
    throw Error(ErrorCode::adjoint_mismatch,
                "Floquet and adjoint phase response curves differ by " + std::to_string(gap));
  return PhaseResponseCurve(k, std::move(r), std::move(dr), std::move(adj), gap);
}

/// sup over the grid and midpoints of |omega0 R' + J^T R|.
inline double adjoint_residual(const LimitCycle& lc, const PhaseResponseCurve& prc, const ReactionNetwork& net) {
  double worst = 0.0;
  for (int g = 0; g < 2 * lc.grid_size(); ++g) {
    const double th = 0.5 * lc.node_phase(1) * g;
    const Vector res = lc.omega0() * prc.dR(th) + jacobian(net, lc.phi(th)).transpose() * prc.R(th);
    worst = std::max(worst, res.cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace crnphase
