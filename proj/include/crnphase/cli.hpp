#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crnphase/config.hpp"
#include "crnphase/dsl.hpp"
#include "crnphase/experiments.hpp"
#include "crnphase/format.hpp"

#ifndef CRNPHASE_VERSION
#define CRNPHASE_VERSION "1.0.0"
#endif

namespace crnphase {

inline constexpr std::string_view tool_version = CRNPHASE_VERSION;

/// Network described by the configuration: the model file (or the built-in
/// Brusselator) at the configured omega with rate overrides applied.
inline ReactionNetwork resolve_network(const RunConfig& cfg) {
  ReactionNetwork net = cfg.model.empty()
                            ? models::brusselator(cfg.omega, cfg.brusselator_a.value_or(1.0), cfg.brusselator_b.value_or(2.5))
                            : load_network(cfg.model, cfg.omega);
  for (const auto& [a, rate] : cfg.rates) {
    if (a >= net.num_reactions())
      throw Error(ErrorCode::invalid_argument, "rate." + std::to_string(a) + " refers to a missing reaction");
    net = net.with_rate(a, rate);
  }
  return net;
}

/// FNV-1a over the canonical configuration and the resolved network.
inline std::string config_hash(const RunConfig& cfg, const ReactionNetwork& net) {
  return hex64(fnv1a(to_dsl(net), fnv1a(cfg.canonical())));
}

using MetaList = std::vector<std::pair<std::string, std::string>>;

inline MetaList run_metadata(const RunConfig& cfg, const ReactionNetwork& net, std::string_view command) {
  MetaList m{{"tool", "crnphase " + std::string(tool_version)},
             {"command", std::string(command)},
             {"config_hash", config_hash(cfg, net)},
             {"seed", std::to_string(cfg.seed)}};
  for (const auto& kv : cfg.entries()) m.emplace_back("config." + kv.first, kv.second);
  return m;
}

/// CSV with '#'-prefixed metadata lines followed by an RFC-4180 table.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const MetaList& meta, const std::vector<std::string>& header)
      : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::io, "cannot write " + path.string());
    for (const auto& [k, v] : meta) out_ << "# " << k << ": " << v << "\n";
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << "\n";
  }

  void row(std::initializer_list<double> values) { row(std::vector<double>(values)); }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

inline nlohmann::ordered_json meta_json(const MetaList& meta) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : meta) j[k] = v;
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline std::vector<std::string> species_columns(const ReactionNetwork& net, std::string_view prefix) {
  std::vector<std::string> cols;
  for (const auto& s : net.species()) cols.push_back(std::string(prefix) + s);
  return cols;
}

inline nlohmann::ordered_json vector_json(const Vector& v) {
  auto j = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

/// Shared state of one CLI run: configuration, network and lazily computed
/// deterministic structure.
class RunContext {
 public:
  explicit RunContext(RunConfig cfg) : cfg_(std::move(cfg)), net_(resolve_network(cfg_)) {
    cfg_.validate();
    if (!cfg_.x0.empty() && static_cast<int>(cfg_.x0.size()) != net_.num_species())
      throw Error(ErrorCode::invalid_argument, "x0 must list one value per species");
  }

  const RunConfig& config() const { return cfg_; }
  const ReactionNetwork& network() const { return net_; }
  std::filesystem::path out_dir() const { return cfg_.out; }
  int workers() const { return cfg_.workers > 0 ? cfg_.workers : default_workers(); }
  PropensityForm form() const {
    return cfg_.propensity == "exact" ? PropensityForm::exact_counts : PropensityForm::concentration;
  }

  MetaList metadata(std::string_view command) const { return run_metadata(cfg_, net_, command); }

  const LimitCycle& cycle() {
    if (!lc_) {
      Vector seed(net_.num_species());
      for (int i = 0; i < seed.size(); ++i)
        seed[i] = cfg_.x0.empty() ? 1.0 + 0.1 * (i + 1) : cfg_.x0[static_cast<std::size_t>(i)];
      LimitCycleOptions opt;
      opt.grid_size = cfg_.grid_size;
      opt.tol = cfg_.shooting_tol;
      opt.ode_tol = cfg_.ode_tol;
      lc_ = find_limit_cycle(net_, seed, opt);
    }
    return *lc_;
  }

  const FloquetData& floquet() {
    if (!fd_) {
      FloquetOptions opt;
      opt.ode_tol = cfg_.ode_tol;
      fd_ = floquet_decompose(cycle(), net_, opt);
    }
    return *fd_;
  }

  const PhaseResponseCurve& prc() {
    if (!prc_) {
      PrcOptions opt;
      opt.ode_tol = cfg_.ode_tol;
      prc_ = compute_prc(cycle(), floquet(), net_, opt);
    }
    return *prc_;
  }

  VariationalConfig variational(double eta) const {
    VariationalConfig v;
    v.search_halfwidth = cfg_.search_halfwidth;
    v.newton_tol = cfg_.newton_tol;
    v.eta = eta;
    return v;
  }

  double eta() { return cfg_.eta > 0.0 ? cfg_.eta : default_eta(floquet()); }
  double t_end() { return cfg_.t_end > 0.0 ? cfg_.t_end : 5.0 * cycle().period(); }

 private:
  RunConfig cfg_;
  ReactionNetwork net_;
  std::optional<LimitCycle> lc_;
  std::optional<FloquetData> fd_;
  std::optional<PhaseResponseCurve> prc_;
};

inline void run_simulate(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto& net = ctx.network();
  Vector x0(net.num_species());
  if (!cfg.x0.empty())
    for (int i = 0; i < x0.size(); ++i) x0[i] = cfg.x0[static_cast<std::size_t>(i)];
  else
    x0 = ctx.cycle().phi(cfg.theta0);
  const double t_end = ctx.t_end();
  auto meta = ctx.metadata("simulate");
  nlohmann::ordered_json info;
  info["seed"] = cfg.seed;
  info["engine"] = cfg.engine;
  info["t_end"] = t_end;
  if (cfg.engine == "cle") {
    const double h = cfg.cle_step > 0.0 ? cfg.cle_step : ctx.cycle().period() / 2000.0;
    const auto path = cle_simulate(net, x0, t_end, h, cfg.seed);
    meta.emplace_back("cle_step", format_double(h));
    auto cols = species_columns(net, "x_");
    cols.insert(cols.begin(), "t");
    CsvWriter csv(ctx.out_dir() / "simulate.csv", meta, cols);
    for (std::size_t k = 0; k < path.times.size(); ++k) {
      std::vector<double> row{path.times[k]};
      for (int i = 0; i < net.num_species(); ++i) row.push_back(path.states[k][i]);
      csv.row(row);
    }
    info["cle_step"] = h;
    info["steps"] = path.times.size() - 1;
    info["clip_count"] = path.clip_count;
  } else {
    const Engine engine = cfg.engine == "direct" ? Engine::direct : Engine::time_change;
    const Counts n0 = counts_from(net, x0);
    const auto traj = simulate_jumps(engine, net, n0, t_end, cfg.seed, ctx.form());
    auto cols = species_columns(net, "n_");
    cols.insert(cols.begin(), "t");
    CsvWriter csv(ctx.out_dir() / "simulate.csv", meta, cols);
    Counts n = n0;
    auto emit = [&](double t) {
      std::vector<std::string> row{format_double(t)};
      for (auto v : n) row.push_back(std::to_string(v));
      csv.row(row);
    };
    emit(0.0);
    const auto& s = net.stoichiometry();
    for (std::size_t k = 0; k < traj.size(); ++k) {
      for (int i = 0; i < net.num_species(); ++i) n[static_cast<std::size_t>(i)] += s(i, traj.channels[k]);
      emit(traj.times[k]);
    }
    info["events"] = traj.size();
    info["clip_count"] = 0;
  }
  info["meta"] = meta_json(meta);
  write_json(ctx.out_dir() / "simulate.json", info);
}

inline void run_limit_cycle(RunContext& ctx) {
  const auto& lc = ctx.cycle();
  const auto& net = ctx.network();
  auto meta = ctx.metadata("limit-cycle");
  meta.emplace_back("period", format_double(lc.period()));
  meta.emplace_back("omega0", format_double(lc.omega0()));
  std::string anchor;
  for (int i = 0; i < lc.dim(); ++i) anchor += (i ? " " : "") + format_double(lc.anchor()[i]);
  meta.emplace_back("anchor", anchor);
  meta.emplace_back("return_residual", format_double(lc.return_residual()));
  auto cols = species_columns(net, "phi_");
  const auto dcols = species_columns(net, "dphi_");
  cols.insert(cols.begin(), "theta");
  cols.insert(cols.end(), dcols.begin(), dcols.end());
  CsvWriter csv(ctx.out_dir() / "limit_cycle.csv", meta, cols);
  for (int g = 0; g < lc.grid_size(); ++g) {
    std::vector<double> row{lc.node_phase(g)};
    const Vector p = lc.phi_node(g), d = lc.dphi_node(g);
    row.insert(row.end(), p.data(), p.data() + p.size());
    row.insert(row.end(), d.data(), d.data() + d.size());
    csv.row(row);
  }
}

inline void run_floquet(RunContext& ctx) {
  const auto& fd = ctx.floquet();
  const auto& lc = fd.cycle();
  const int k = lc.dim();
  const auto meta = ctx.metadata("floquet");
  nlohmann::ordered_json j;
  j["period"] = lc.period();
  j["omega0"] = lc.omega0();
  j["exponents"] = vector_json(fd.exponents());
  Vector mult = (fd.exponents() * lc.period()).array().exp();
  j["multipliers"] = vector_json(mult);
  j["decay_rate"] = fd.decay_rate();
  j["periodicity_error"] = fd.periodicity_error();
  j["meta"] = meta_json(meta);
  write_json(ctx.out_dir() / "floquet.json", j);
  std::vector<std::string> cols{"theta"};
  for (int c = 0; c < k; ++c)
    for (int r = 0; r < k; ++r) cols.push_back("P_" + std::to_string(r + 1) + "_" + std::to_string(c + 1));
  CsvWriter csv(ctx.out_dir() / "floquet_p.csv", meta, cols);
  Matrix p(k, k);
  for (int g = 0; g < lc.grid_size(); ++g) {
    fd.eval_p(lc.node_phase(g), p);
    std::vector<double> row{lc.node_phase(g)};
    row.insert(row.end(), p.data(), p.data() + p.size());
    csv.row(row);
  }
}

inline void run_prc(RunContext& ctx) {
  const auto& prc = ctx.prc();
  const auto& lc = ctx.cycle();
  auto meta = ctx.metadata("prc");
  meta.emplace_back("adjoint_gap", format_double(prc.adjoint_gap()));
  meta.emplace_back("adjoint_residual", format_double(adjoint_residual(lc, prc, ctx.network())));
  auto cols = species_columns(ctx.network(), "R_");
  cols.insert(cols.begin(), "theta");
  CsvWriter csv(ctx.out_dir() / "prc.csv", meta, cols);
  for (int g = 0; g < lc.grid_size(); ++g) {
    std::vector<double> row{lc.node_phase(g)};
    const Vector r = prc.node(g);
    row.insert(row.end(), r.data(), r.data() + r.size());
    csv.row(row);
  }
}

inline void run_phase(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto& net = ctx.network();
  const auto& fd = ctx.floquet();
  const auto& lc = fd.cycle();
  if (cfg.engine == "cle") throw Error(ErrorCode::invalid_argument, "phase tracking needs a jump engine");
  const double t_end = cfg.t_end;  // 0 gives the single initial record
  const Engine engine = cfg.engine == "direct" ? Engine::direct : Engine::time_change;
  const auto traj = simulate_jumps(engine, net, counts_from(net, lc.phi(cfg.theta0)), t_end, cfg.seed, ctx.form());
  const double eta = ctx.eta();
  const auto trace = track_phase(traj, net, fd, ctx.variational(eta), cfg.theta0, ctx.form());
  auto meta = ctx.metadata("phase");
  meta.emplace_back("omega0", format_double(lc.omega0()));
  meta.emplace_back("eta", format_double(eta));
  meta.emplace_back("escaped_at", trace.escaped_at ? format_double(*trace.escaped_at) : std::string("none"));
  CsvWriter csv(ctx.out_dir() / "phase.csv", meta,
                {"t", "beta_var", "beta_lin", "beta_var_minus_w0t", "beta_lin_minus_w0t", "norm_w", "curvature"});
  for (const auto& r : trace.records) {
    const double w0t = lc.omega0() * r.t;
    csv.row({r.t, r.beta_var, r.beta_lin, r.beta_var - w0t, r.beta_lin - w0t, r.normw, r.curvature});
  }
}

inline nlohmann::ordered_json escape_json(const EscapeStats& s) {
  nlohmann::ordered_json j;
  j["omega"] = s.omega;
  j["zeta"] = s.zeta;
  j["horizon"] = s.horizon;
  j["replicas"] = s.replicas;
  j["escapes"] = s.escapes;
  j["lost_phase"] = s.failures;
  j["p_hat"] = s.p_hat;
  j["ci"] = {s.ci.lo, s.ci.hi};
  j["b"] = s.b;
  return j;
}

inline void run_escape(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto& fd = ctx.floquet();
  const double horizon = cfg.horizon > 0.0 ? cfg.horizon : fd.cycle().period();
  EscapeOptions opt;
  opt.engine = cfg.engine == "time-change" ? Engine::time_change : Engine::direct;
  opt.form = ctx.form();
  opt.variational = ctx.variational(0.0);
  opt.workers = ctx.workers();
  const auto meta = ctx.metadata("escape");
  CsvWriter csv(ctx.out_dir() / "escape_summary.csv", meta,
                {"omega", "zeta", "horizon", "replicas", "escapes", "p_hat", "ci_lo", "ci_hi"});
  std::vector<EscapeStats> all;
  int index = 0;
  for (double omega : cfg.omega_list) {
    for (double zeta : cfg.zeta_list) {
      const std::uint64_t point_seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(index));
      const auto s = escape_probability(ctx.network(), fd, omega, zeta, horizon, cfg.replicas, point_seed, opt);
      all.push_back(s);
      auto j = escape_json(s);
      j["point_seed"] = point_seed;
      j["meta"] = meta_json(meta);
      write_json(ctx.out_dir() / ("escape_" + std::to_string(index) + ".json"), j);
      csv.row(std::vector<std::string>{format_double(s.omega), format_double(s.zeta), format_double(s.horizon),
                                       std::to_string(s.replicas), std::to_string(s.escapes), format_double(s.p_hat),
                                       format_double(s.ci.lo), format_double(s.ci.hi)});
      ++index;
    }
  }
  nlohmann::ordered_json fit_j;
  try {
    const auto fit = fit_scaling(all, fd.decay_rate());
    fit_j["C"] = fit.C;
    fit_j["intercept"] = fit.intercept;
    fit_j["r2"] = fit.r2;
    fit_j["residuals"] = fit.residuals;
    fit_j["C_prefactor_T"] = fit.C_t;
    fit_j["intercept_prefactor_T"] = fit.intercept_t;
    fit_j["r2_prefactor_T"] = fit.r2_t;
    fit_j["points_used"] = fit.points.size();
  } catch (const Error& e) {
    fit_j["error"] = to_string(e.code());
    fit_j["message"] = e.what();
  }
  fit_j["meta"] = meta_json(meta);
  write_json(ctx.out_dir() / "escape_fit.json", fit_j);
}

inline void run_benchmark(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto& net = ctx.network();
  const auto& fd = ctx.floquet();
  const auto& lc = fd.cycle();
  const double t_end = ctx.t_end();
  const double dt_out = cfg.dt_out > 0.0 ? cfg.dt_out : lc.period() / 200.0;
  const double eta = ctx.eta();
  const auto res = phase_benchmark(net, fd, net.omega(), cfg.theta0, t_end, dt_out, cfg.seed, ctx.variational(eta));
  auto meta = ctx.metadata("benchmark");
  meta.emplace_back("period", format_double(lc.period()));
  meta.emplace_back("omega0", format_double(lc.omega0()));
  meta.emplace_back("eta", format_double(eta));
  auto cols = species_columns(net, "x_");
  cols.insert(cols.begin(), "t");
  for (const char* c : {"beta_var", "beta_lin", "beta_var_minus_w0t", "beta_lin_minus_w0t", "norm_w"}) cols.push_back(c);
  {
    CsvWriter csv(ctx.out_dir() / "benchmark_timeseries.csv", meta, cols);
    for (const auto& s : res.samples) {
      std::vector<double> row{s.t};
      row.insert(row.end(), s.x.data(), s.x.data() + s.x.size());
      const double w0t = lc.omega0() * s.t;
      for (double v : {s.beta_var, s.beta_lin, s.beta_var - w0t, s.beta_lin - w0t, s.normw}) row.push_back(v);
      csv.row(row);
    }
  }
  {
    auto pcols = species_columns(net, "x_");
    pcols.insert(pcols.begin(), "source");
    CsvWriter csv(ctx.out_dir() / "benchmark_portrait.csv", meta, pcols);
    for (const auto& s : res.samples) {
      std::vector<std::string> row{"stochastic"};
      for (int i = 0; i < s.x.size(); ++i) row.push_back(format_double(s.x[i]));
      csv.row(row);
    }
    for (int g = 0; g < lc.grid_size(); ++g) {
      std::vector<std::string> row{"limit_cycle"};
      const Vector p = lc.phi_node(g);
      for (int i = 0; i < p.size(); ++i) row.push_back(format_double(p[i]));
      csv.row(row);
    }
  }
  nlohmann::ordered_json j;
  j["omega"] = res.omega;
  j["period"] = res.period;
  j["omega0"] = res.omega0;
  j["decay_rate"] = res.decay_rate;
  j["horizon"] = res.horizon;
  j["eta"] = res.eta;
  j["events"] = res.events;
  j["max_norm_w"] = res.max_normw;
  j["stayed_in_tube"] = res.stayed_in_tube;
  j["deterministic_phase_drift"] = deterministic_phase_drift(net, fd, cfg.theta0, t_end, 400, cfg.ode_tol);
  j["meta"] = meta_json(meta);
  write_json(ctx.out_dir() / "benchmark.json", j);
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"simulate", "limit-cycle", "floquet", "prc", "phase", "escape", "benchmark"};
  return names;
}

/// Runs one subcommand, writing its artifacts under cfg.out. Returns 0 on
/// success; errors print a JSON object to `err` and return 1.
inline int run(const std::string& subcommand, const RunConfig& cfg, std::ostream& err = std::cerr) {
  try {
    RunContext ctx(cfg);
    std::filesystem::create_directories(ctx.out_dir());
    {
      std::ofstream resolved(ctx.out_dir() / "config.txt", std::ios::binary);
      resolved << "# crnphase " << tool_version << " " << subcommand << " config_hash " << config_hash(cfg, ctx.network())
               << "\n"
               << cfg.canonical();
    }
    if (subcommand == "simulate") run_simulate(ctx);
    else if (subcommand == "limit-cycle") run_limit_cycle(ctx);
    else if (subcommand == "floquet") run_floquet(ctx);
    else if (subcommand == "prc") run_prc(ctx);
    else if (subcommand == "phase") run_phase(ctx);
    else if (subcommand == "escape") run_escape(ctx);
    else if (subcommand == "benchmark") run_benchmark(ctx);
    else throw Error(ErrorCode::invalid_argument, "unknown subcommand '" + subcommand + "'");
    return 0;
  } catch (const Error& e) {
    nlohmann::ordered_json j;
    j["error"] = to_string(e.code());
    j["message"] = e.what();
    err << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json j;
    j["error"] = "internal";
    j["message"] = e.what();
    err << j.dump() << "\n";
    return 1;
  }
}

}  // namespace crnphase
