#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crnphase/error.hpp"

namespace crnphase {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Counts = std::vector<std::int64_t>;

/// One single-step mass-action reaction. Coefficient vectors are indexed by
/// species and have the network's species count.
struct Reaction {
  double rate = 0.0;
  std::vector<int> reactants;
  std::vector<int> products;
};

/// How propensities are evaluated from molecule counts.
enum class PropensityForm {
  concentration,  // kappa * prod (n_j / omega)^s_j
  exact_counts,   // kappa * prod omega^-s_j n_j! / (n_j - s_j)!
};

namespace detail {

inline double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

struct Term {
  int species;
  int coeff;
};

}  // namespace detail

class ReactionNetwork {
 public:
  ReactionNetwork() = default;

  ReactionNetwork(std::vector<std::string> species, std::vector<Reaction> reactions, double omega)
      : species_(std::move(species)), reactions_(std::move(reactions)), omega_(omega) {
    validate();
    build();
  }

  int num_species() const { return static_cast<int>(species_.size()); }
  int num_reactions() const { return static_cast<int>(reactions_.size()); }
  double omega() const { return omega_; }

  const std::vector<std::string>& species() const { return species_; }
  const std::vector<Reaction>& reactions() const { return reactions_; }
  const Reaction& reaction(int a) const { return reactions_[static_cast<std::size_t>(a)]; }

  /// K x M integer matrix with S(i, a) = r_ia - s_ia.
  const Eigen::MatrixXi& stoichiometry() const { return stoich_; }

  /// Stoichiometric column of channel a as doubles.
  const Matrix& stoichiometry_real() const { return stoich_real_; }

  const std::vector<detail::Term>& reactant_terms(int a) const { return reactant_terms_[static_cast<std::size_t>(a)]; }

  int species_index(const std::string& name) const {
    for (std::size_t i = 0; i < species_.size(); ++i)
      if (species_[i] == name) return static_cast<int>(i);
    return -1;
  }

  ReactionNetwork with_omega(double omega) const {
    ReactionNetwork copy = *this;
    if (!(omega > 0.0) || !std::isfinite(omega))
      throw Error(ErrorCode::invalid_network, "system size must be positive and finite");
    copy.omega_ = omega;
    return copy;
  }

  ReactionNetwork with_rate(int a, double rate) const {
    if (a < 0 || a >= num_reactions())
      throw Error(ErrorCode::invalid_argument, "reaction index " + std::to_string(a) + " out of range");
    std::vector<Reaction> rx = reactions_;
    rx[static_cast<std::size_t>(a)].rate = rate;
    return ReactionNetwork(species_, std::move(rx), omega_);
  }

  friend bool operator==(const ReactionNetwork& l, const ReactionNetwork& r) {
    if (l.species_ != r.species_ || l.omega_ != r.omega_ || l.reactions_.size() != r.reactions_.size())
      return false;
    for (std::size_t a = 0; a < l.reactions_.size(); ++a) {
      const auto& x = l.reactions_[a];
      const auto& y = r.reactions_[a];
      if (x.rate != y.rate || x.reactants != y.reactants || x.products != y.products) return false;
    }
    return true;
  }

 private:
  void validate() const {
    if (species_.empty()) throw Error(ErrorCode::invalid_network, "network declares no species");
    if (reactions_.empty()) throw Error(ErrorCode::invalid_network, "network has no reactions");
    if (!(omega_ > 0.0) || !std::isfinite(omega_))
      throw Error(ErrorCode::invalid_network, "system size must be positive and finite");
    const std::size_t k = species_.size();
    for (std::size_t a = 0; a < reactions_.size(); ++a) {
      const auto& r = reactions_[a];
      const std::string tag = "reaction " + std::to_string(a + 1);
      if (!(r.rate > 0.0) || !std::isfinite(r.rate))
        throw Error(ErrorCode::invalid_network, tag + ": rate constant must be positive");
      if (r.reactants.size() != k || r.products.size() != k)
        throw Error(ErrorCode::invalid_network, tag + ": coefficient vectors do not match species count");
      bool any = false;
      for (std::size_t i = 0; i < k; ++i) {
        if (r.reactants[i] < 0 || r.products[i] < 0)
          throw Error(ErrorCode::invalid_network, tag + ": negative stoichiometric coefficient");
        any = any || r.reactants[i] > 0 || r.products[i] > 0;
      }
      if (!any) throw Error(ErrorCode::invalid_network, tag + ": empty reaction (nothing -> nothing)");
    }
  }

  void build() {
    const int k = num_species();
    const int m = num_reactions();
    stoich_.resize(k, m);
    reactant_terms_.assign(static_cast<std::size_t>(m), {});
    for (int a = 0; a < m; ++a) {
      const auto& r = reactions_[static_cast<std::size_t>(a)];
      for (int i = 0; i < k; ++i) {
        const auto si = static_cast<std::size_t>(i);
        stoich_(i, a) = r.products[si] - r.reactants[si];
        if (r.reactants[si] > 0) reactant_terms_[static_cast<std::size_t>(a)].push_back({i, r.reactants[si]});
      }
    }
    stoich_real_ = stoich_.cast<double>();
  }

  std::vector<std::string> species_;
  std::vector<Reaction> reactions_;
  double omega_ = 1.0;
  Eigen::MatrixXi stoich_;
  Matrix stoich_real_;
  std::vector<std::vector<detail::Term>> reactant_terms_;
};

/// Mass-action propensities lambda_a(x) = kappa_a prod_j x_j^{s_ja}.
inline void propensity_into(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> out) {
  for (int a = 0; a < net.num_reactions(); ++a) {
    double v = net.reaction(a).rate;
    for (const auto& t : net.reactant_terms(a)) v *= detail::ipow(x[t.species], t.coeff);
    out[a] = v;
  }
}

inline Vector propensity(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x) {
  Vector out(net.num_reactions());
  propensity_into(net, x, out);
  return out;
}

/// Propensities evaluated from molecule counts. Under the concentration form
/// a channel whose firing would drive any count negative is switched off; the
/// exact-counts falling factorial vanishes on its own whenever n_j < s_j.
inline void propensity_counts_into(const ReactionNetwork& net, std::span<const std::int64_t> n, PropensityForm form,
                                   Eigen::Ref<Vector> out) {
  const double omega = net.omega();
  const auto& s = net.stoichiometry();
  for (int a = 0; a < net.num_reactions(); ++a) {
    double v = net.reaction(a).rate;
    if (form == PropensityForm::exact_counts) {
      for (const auto& t : net.reactant_terms(a)) {
        const std::int64_t nj = n[static_cast<std::size_t>(t.species)];
        for (int c = 0; c < t.coeff; ++c) v *= static_cast<double>(nj - c) / omega;
        if (nj < t.coeff) v = 0.0;
      }
    } else {
      for (const auto& t : net.reactant_terms(a))
        v *= detail::ipow(static_cast<double>(n[static_cast<std::size_t>(t.species)]) / omega, t.coeff);
      for (int i = 0; i < net.num_species(); ++i)
        if (n[static_cast<std::size_t>(i)] + s(i, a) < 0) v = 0.0;
    }
    out[a] = v;
  }
}

inline Vector propensity_counts(const ReactionNetwork& net, std::span<const std::int64_t> n,
                                PropensityForm form = PropensityForm::concentration) {
  Vector out(net.num_reactions());
  propensity_counts_into(net, n, form, out);
  return out;
}

inline Vector concentrations(const ReactionNetwork& net, std::span<const std::int64_t> n) {
  Vector x(static_cast<Eigen::Index>(n.size()));
  for (std::size_t i = 0; i < n.size(); ++i) x[static_cast<Eigen::Index>(i)] = static_cast<double>(n[i]) / net.omega();
  return x;
}

/// Nearest nonnegative molecule counts for a concentration vector.
inline Counts counts_from(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x) {
  Counts n(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    n[static_cast<std::size_t>(i)] = std::max<std::int64_t>(0, std::llround(x[i] * net.omega()));
  return n;
}

/// F(x) = S lambda(x).
inline Vector drift(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x) {
  return net.stoichiometry_real() * propensity(net, x);
}

struct DiffusionMatrices {
  Matrix D;  // K x K, S diag(lambda) S^T
  Matrix B;  // K x M, S_ia sqrt(lambda_a)
};

inline DiffusionMatrices diffusion_matrices(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x) {
  const Vector lambda = propensity(net, x);
  DiffusionMatrices out;
  out.B = net.stoichiometry_real();
  for (int a = 0; a < net.num_reactions(); ++a) out.B.col(a) *= std::sqrt(std::max(lambda[a], 0.0));
  out.D = net.stoichiometry_real() * lambda.asDiagonal() * net.stoichiometry_real().transpose();
  return out;
}

namespace detail {

// d lambda_a / d x_k for a mass-action monomial.
inline double monomial_d1(double rate, const std::vector<Term>& terms, const Eigen::Ref<const Vector>& x, int k) {
  double v = rate;
  bool present = false;
  for (const auto& t : terms) {
    if (t.species == k) {
      present = true;
      v *= t.coeff * ipow(x[t.species], t.coeff - 1);
    } else {
      v *= ipow(x[t.species], t.coeff);
    }
  }
  return present ? v : 0.0;
}

// d^2 lambda_a / d x_k d x_l.
inline double monomial_d2(double rate, const std::vector<Term>& terms, const Eigen::Ref<const Vector>& x, int k,
                          int l) {
  double v = rate;
  int hits = 0;
  for (const auto& t : terms) {
    int order = (t.species == k) + (t.species == l);
    if (order == 0) {
      v *= ipow(x[t.species], t.coeff);
    } else if (order == 1) {
      ++hits;
      v *= t.coeff * ipow(x[t.species], t.coeff - 1);
    } else {
      hits += 2;
      if (t.coeff < 2) return 0.0;
      v *= t.coeff * (t.coeff - 1) * ipow(x[t.species], t.coeff - 2);
    }
  }
  return hits == 2 ? v : 0.0;
}

}  // namespace detail

/// J_jk = dF_j/dx_k from the analytic monomial derivatives.
inline void jacobian_into(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> out) {
  const int k = net.num_species();
  out.setZero();
  const auto& s = net.stoichiometry();
  for (int a = 0; a < net.num_reactions(); ++a) {
    const auto& terms = net.reactant_terms(a);
    for (const auto& t : terms) {
      const double d = detail::monomial_d1(net.reaction(a).rate, terms, x, t.species);
      for (int j = 0; j < k; ++j)
        if (s(j, a) != 0) out(j, t.species) += s(j, a) * d;
    }
  }
}

inline Matrix jacobian(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x) {
  Matrix j(net.num_species(), net.num_species());
  jacobian_into(net, x, j);
  return j;
}

/// Directional derivative of the Jacobian: sum_l dJ/dx_l v_l.
inline Matrix jacobian_derivative(const ReactionNetwork& net, const Eigen::Ref<const Vector>& x,
                                  const Eigen::Ref<const Vector>& v) {
  const int k = net.num_species();
  Matrix out = Matrix::Zero(k, k);
  const auto& s = net.stoichiometry();
  for (int a = 0; a < net.num_reactions(); ++a) {
    const auto& terms = net.reactant_terms(a);
    for (const auto& tk : terms) {
      double d = 0.0;
      for (const auto& tl : terms)
        d += detail::monomial_d2(net.reaction(a).rate, terms, x, tk.species, tl.species) * v[tl.species];
      for (int j = 0; j < k; ++j)
        if (s(j, a) != 0) out(j, tk.species) += s(j, a) * d;
    }
  }
  return out;
}

}  // namespace crnphase
