#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "crnphase/network.hpp"
#include "crnphase/rng.hpp"

namespace crnphase {

enum class Engine { direct, time_change };

/// Exact jump process path: the event list plus enough to rebuild counts.
struct JumpTrajectory {
  Counts initial_counts;
  std::vector<double> times;  // strictly increasing
  std::vector<int> channels;
  double t_end = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return times.size(); }

  /// Counts after every event with t_k <= t.
  Counts counts_at(const ReactionNetwork& net, double t) const {
    Counts n = initial_counts;
    const auto& s = net.stoichiometry();
    for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k)
      for (int i = 0; i < net.num_species(); ++i) n[static_cast<std::size_t>(i)] += s(i, channels[k]);
    return n;
  }

  /// N_a(t): number of firings of each channel up to and including t.
  std::vector<std::int64_t> reaction_counters(int num_reactions, double t) const {
    std::vector<std::int64_t> c(static_cast<std::size_t>(num_reactions), 0);
    for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k) ++c[static_cast<std::size_t>(channels[k])];
    return c;
  }
};

struct ReactionCounts {
  std::vector<std::int64_t> per_channel;
  std::int64_t total = 0;
};

/// Events with u < t_k <= t.
inline ReactionCounts count_reactions(const JumpTrajectory& traj, int num_reactions, double u, double t) {
  if (u > t) throw Error(ErrorCode::invalid_argument, "count window must satisfy u <= t");
  ReactionCounts out{std::vector<std::int64_t>(static_cast<std::size_t>(num_reactions), 0), 0};
  auto first = std::upper_bound(traj.times.begin(), traj.times.end(), u);
  auto last = std::upper_bound(traj.times.begin(), traj.times.end(), t);
  for (auto it = first; it != last; ++it) {
    ++out.per_channel[static_cast<std::size_t>(traj.channels[static_cast<std::size_t>(it - traj.times.begin())])];
    ++out.total;
  }
  return out;
}

namespace detail {

class JumpEngineBase {
 public:
  JumpEngineBase(const ReactionNetwork& net, Counts n0, PropensityForm form)
      : net_(&net), counts_(std::move(n0)), form_(form), lambda_(net.num_reactions()) {
    if (static_cast<int>(counts_.size()) != net.num_species())
      throw Error(ErrorCode::invalid_argument, "initial counts do not match species count");
    for (auto v : counts_)
      if (v < 0) throw Error(ErrorCode::invalid_argument, "initial counts must be nonnegative");
    refresh();
  }

  double time() const { return t_; }
  const Counts& counts() const { return counts_; }
  /// Current lambda_a(n / omega) (per-channel, not multiplied by omega).
  const Vector& propensities() const { return lambda_; }
  const ReactionNetwork& network() const { return *net_; }
  PropensityForm form() const { return form_; }

 protected:
  void refresh() {
    propensity_counts_into(*net_, counts_, form_, lambda_);
    for (int a = 0; a < lambda_.size(); ++a)
      if (!std::isfinite(lambda_[a]))
        throw Error(ErrorCode::propensity_overflow, "channel " + std::to_string(a + 1) + " propensity is not finite");
  }
  void fire(int a) {
    const auto& s = net_->stoichiometry();
    for (int i = 0; i < net_->num_species(); ++i) counts_[static_cast<std::size_t>(i)] += s(i, a);
    refresh();
  }

  const ReactionNetwork* net_;
  Counts counts_;
  PropensityForm form_;
  Vector lambda_;
  double t_ = 0.0;
};

}  // namespace detail

/// Gillespie direct method: exponential waiting time at the total rate,
/// channel drawn proportionally to its propensity.
class DirectEngine : public detail::JumpEngineBase {
 public:
  DirectEngine(const ReactionNetwork& net, Counts n0, std::uint64_t seed,
               PropensityForm form = PropensityForm::concentration)
      : JumpEngineBase(net, std::move(n0), form), rng_(seed) {}

  /// Fires the next reaction if it happens no later than t_end and returns
  /// its channel; otherwise moves the clock to t_end and returns nullopt.
  std::optional<int> step(double t_end) {
    const double total = lambda_.sum() * net_->omega();
    if (!std::isfinite(total)) throw Error(ErrorCode::propensity_overflow, "total propensity is not finite");
    if (total <= 0.0) {
      t_ = std::max(t_, t_end);
      return std::nullopt;
    }
    const double dt = rng_.exponential() / total;
    if (t_ + dt > t_end) {
      t_ = t_end;
      return std::nullopt;
    }
    const double target = rng_.uniform() * lambda_.sum();
    int a = 0;
    double acc = lambda_[0];
    const int m = static_cast<int>(lambda_.size());
    while (acc <= target && a + 1 < m) acc += lambda_[++a];
    while (lambda_[a] <= 0.0 && a > 0) --a;  // guard against round-off landing on a dead channel
    t_ += dt;
    fire(a);
    return a;
  }

 private:
  Rng rng_;
};

/// Random-time-change (modified next reaction) method: each channel owns a
/// unit-rate Poisson clock and advances at internal time T_a = omega int lambda_a.
class TimeChangeEngine : public detail::JumpEngineBase {
 public:
  TimeChangeEngine(const ReactionNetwork& net, Counts n0, std::uint64_t seed,
                   PropensityForm form = PropensityForm::concentration)
      : JumpEngineBase(net, std::move(n0), form) {
    const int m = net.num_reactions();
    internal_.assign(static_cast<std::size_t>(m), 0.0);
    for (int a = 0; a < m; ++a) {
      clocks_.emplace_back(stream_seed(seed, static_cast<std::uint64_t>(a)));
      next_.push_back(clocks_.back().exponential());
    }
  }

  std::optional<int> step(double t_end) {
    const double omega = net_->omega();
    double dt = std::numeric_limits<double>::infinity();
    int pick = -1;
    for (int a = 0; a < lambda_.size(); ++a) {
      const double rate = omega * lambda_[a];
      if (rate <= 0.0) continue;
      const double d = (next_[static_cast<std::size_t>(a)] - internal_[static_cast<std::size_t>(a)]) / rate;
      if (d < dt) {
        dt = d;
        pick = a;
      }
    }
    const double horizon = std::min(dt, t_end - t_);
    for (int a = 0; a < lambda_.size(); ++a) internal_[static_cast<std::size_t>(a)] += omega * lambda_[a] * horizon;
    if (pick < 0 || t_ + dt > t_end) {
      t_ = std::max(t_, t_end);
      return std::nullopt;
    }
    t_ += dt;
    internal_[static_cast<std::size_t>(pick)] = next_[static_cast<std::size_t>(pick)];
    next_[static_cast<std::size_t>(pick)] += clocks_[static_cast<std::size_t>(pick)].exponential();
    fire(pick);
    return pick;
  }

  /// Internal times T_a = omega int_0^t lambda_a ds (the compensators).
  const std::vector<double>& internal_times() const { return internal_; }

 private:
  std::vector<Rng> clocks_;
  std::vector<double> internal_;
  std::vector<double> next_;
};

template <class Eng>
JumpTrajectory record_trajectory(Eng& engine, double t_end, std::uint64_t seed) {
  JumpTrajectory traj;
  traj.initial_counts = engine.counts();
  traj.t_end = t_end;
  traj.seed = seed;
  while (auto a = engine.step(t_end)) {
    traj.times.push_back(engine.time());
    traj.channels.push_back(*a);
  }
  return traj;
}

inline JumpTrajectory ssa_direct(const ReactionNetwork& net, const Counts& n0, double t_end, std::uint64_t seed,
                                 PropensityForm form = PropensityForm::concentration) {
  DirectEngine engine(net, n0, seed, form);
  return record_trajectory(engine, t_end, seed);
}

inline JumpTrajectory ssa_time_change(const ReactionNetwork& net, const Counts& n0, double t_end, std::uint64_t seed,
                                      PropensityForm form = PropensityForm::concentration) {
  TimeChangeEngine engine(net, n0, seed, form);
  return record_trajectory(engine, t_end, seed);
}

inline JumpTrajectory simulate_jumps(Engine engine, const ReactionNetwork& net, const Counts& n0, double t_end,
                                     std::uint64_t seed, PropensityForm form = PropensityForm::concentration) {
  return engine == Engine::direct ? ssa_direct(net, n0, t_end, seed, form)
                                  : ssa_time_change(net, n0, t_end, seed, form);
}

/// Chemical Langevin path on a uniform grid.
struct SdePath {
  std::vector<double> times;
  std::vector<Vector> states;
  double step = 0.0;
  std::uint64_t seed = 0;
  std::int64_t clip_count = 0;  // propensities clipped at zero under the square root
};

/// Euler-Maruyama for dX = F(X) dt + omega^{-1/2} sum_a S_a sqrt(lambda_a(X)) dW_a.
/// `noise_scale` multiplies the diffusion term (0 gives the deterministic limit).
inline SdePath cle_simulate(const ReactionNetwork& net, const Vector& x0, double t_end, double h, std::uint64_t seed,
                            double noise_scale = 1.0) {
  if (!(h > 0.0)) throw Error(ErrorCode::invalid_argument, "CLE step must be positive");
  if ((x0.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "initial concentrations must be nonnegative");
  const int k = net.num_species();
  const int m = net.num_reactions();
  const Matrix& s = net.stoichiometry_real();
  Rng rng(seed);
  SdePath path;
  path.step = h;
  path.seed = seed;
  const auto steps = static_cast<std::int64_t>(std::ceil(t_end / h - 1e-9));
  path.times.reserve(static_cast<std::size_t>(steps + 1));
  path.states.reserve(static_cast<std::size_t>(steps + 1));
  Vector x = x0, lambda(m), noise(k);
  path.times.push_back(0.0);
  path.states.push_back(x);
  const double amp = noise_scale / std::sqrt(net.omega());
  for (std::int64_t n = 1; n <= steps; ++n) {
    const double t = std::min(n * h, t_end);
    const double dt = t - path.times.back();
    propensity_into(net, x, lambda);
    noise.setZero();
    const double sq = std::sqrt(dt);
    for (int a = 0; a < m; ++a) {
      double la = lambda[a];
      if (la < 0.0) {
        la = 0.0;
        ++path.clip_count;
      }
      const double xi = rng.normal();
      noise += s.col(a) * (std::sqrt(la) * sq * xi);
    }
    x += s * lambda * dt + amp * noise;
    if (!x.allFinite())
      throw Error(ErrorCode::non_finite_state, "CLE state became non-finite at t = " + std::to_string(t));
    path.times.push_back(t);
    path.states.push_back(x);
  }
  return path;
}

}  // namespace crnphase
