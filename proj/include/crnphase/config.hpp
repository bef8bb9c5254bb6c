#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crnphase/error.hpp"
#include "crnphase/format.hpp"

namespace crnphase {

struct RunConfig {
  std::string model;  // empty: built-in Brusselator
  double omega = 3000.0;
  std::string engine = "direct";            // direct | time-change | cle
  std::string propensity = "concentration";  // concentration | exact
  double ode_tol = 1e-12;
  double shooting_tol = 1e-10;
  double newton_tol = 1e-10;
  int grid_size = 512;
  double search_halfwidth = std::numbers::pi / 4.0;
  double eta = 0.0;       // 0: 0.1 x weighted orbit diameter (or max zeta for escape runs)
  double t_end = 0.0;     // 0: five periods
  double cle_step = 0.0;  // 0: period / 2000
  double theta0 = 0.0;
  double dt_out = 0.0;    // 0: period / 200
  std::uint64_t seed = 1;
  std::string out = "out";
  int workers = 0;  // 0: CRNPHASE_WORKERS or hardware concurrency
  std::int64_t replicas = 1000;
  std::vector<double> omega_list{50.0, 100.0, 200.0, 400.0};
  std::vector<double> zeta_list{1.5};
  double horizon = 0.0;  // 0: one period
  std::vector<double> x0;  // start state for simulate and seed of the cycle search; empty: defaults
  std::optional<double> brusselator_a, brusselator_b;
  std::map<int, double> rates;  // rate.N overrides (0-based reaction index)

  /// Resolved key/value pairs in a fixed order. `out` and `workers` are
  /// excluded from the hash because they never change results.
  std::vector<std::pair<std::string, std::string>> entries() const {
    auto list = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
      return s;
    };
    std::vector<std::pair<std::string, std::string>> e{
        {"model", model},
        {"omega", format_double(omega)},
        {"engine", engine},
        {"propensity", propensity},
        {"ode_tol", format_double(ode_tol)},
        {"shooting_tol", format_double(shooting_tol)},
        {"newton_tol", format_double(newton_tol)},
        {"grid_size", std::to_string(grid_size)},
        {"search_halfwidth", format_double(search_halfwidth)},
        {"eta", format_double(eta)},
        {"t_end", format_double(t_end)},
        {"cle_step", format_double(cle_step)},
        {"theta0", format_double(theta0)},
        {"dt_out", format_double(dt_out)},
        {"seed", std::to_string(seed)},
        {"replicas", std::to_string(replicas)},
        {"omega_list", list(omega_list)},
        {"zeta_list", list(zeta_list)},
        {"horizon", format_double(horizon)},
        {"x0", x0.empty() ? std::string() : list(x0)},
    };
    if (brusselator_a) e.emplace_back("a", format_double(*brusselator_a));
    if (brusselator_b) e.emplace_back("b", format_double(*brusselator_b));
    for (const auto& [k, v] : rates) e.emplace_back("rate." + std::to_string(k), format_double(v));
    return e;
  }

  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : entries()) s += k + "=" + v + "\n";
    return s;
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::invalid_argument, std::string(name) + " must be positive");
    };
    auto non_negative = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw Error(ErrorCode::invalid_argument, std::string(name) + " must be non-negative");
    };
    positive(omega, "omega");
    positive(ode_tol, "ode_tol");
    positive(shooting_tol, "shooting_tol");
    positive(newton_tol, "newton_tol");
    positive(search_halfwidth, "search_halfwidth");
    if (search_halfwidth >= std::numbers::pi) throw Error(ErrorCode::invalid_argument, "search_halfwidth must be < pi");
    if (grid_size < 16) throw Error(ErrorCode::invalid_argument, "grid_size must be at least 16");
    non_negative(eta, "eta");
    non_negative(t_end, "t_end");
    non_negative(cle_step, "cle_step");
    non_negative(dt_out, "dt_out");
    non_negative(horizon, "horizon");
    if (replicas <= 0) throw Error(ErrorCode::invalid_argument, "replicas must be positive");
    if (workers < 0) throw Error(ErrorCode::invalid_argument, "workers must be non-negative");
    if (engine != "direct" && engine != "time-change" && engine != "cle")
      throw Error(ErrorCode::invalid_argument, "engine must be direct, time-change or cle");
    if (propensity != "concentration" && propensity != "exact")
      throw Error(ErrorCode::invalid_argument, "propensity must be concentration or exact");
    for (double v : omega_list) positive(v, "omega_list entries");
    for (double v : zeta_list) positive(v, "zeta_list entries");
    if (brusselator_a) positive(*brusselator_a, "a");
    if (brusselator_b) positive(*brusselator_b, "b");
    for (const auto& [k, v] : rates) positive(v, "rate overrides");
    if (!model.empty() && (brusselator_a || brusselator_b))
      throw Error(ErrorCode::invalid_argument, "a and b only apply to the built-in Brusselator");
    if (!model.empty() && !std::filesystem::exists(model))
      throw Error(ErrorCode::io, "model file not found: " + model);
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw Error(ErrorCode::invalid_argument, "value for " + key + " is not a number: '" + v + "'");
  return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw Error(ErrorCode::invalid_argument, "value for " + key + " is not an integer: '" + v + "'");
  return out;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw Error(ErrorCode::invalid_argument, key + " must list at least one value");
  return out;
}

}  // namespace detail

/// Applies one key/value setting; returns false for an unknown key.
inline bool apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (key == "model") c.model = v;
  else if (key == "omega") c.omega = parse_double(key, v);
  else if (key == "engine") c.engine = v;
  else if (key == "propensity") c.propensity = v;
  else if (key == "ode_tol") c.ode_tol = parse_double(key, v);
  else if (key == "shooting_tol") c.shooting_tol = parse_double(key, v);
  else if (key == "newton_tol") c.newton_tol = parse_double(key, v);
  else if (key == "grid_size") c.grid_size = static_cast<int>(parse_int(key, v));
  else if (key == "search_halfwidth") c.search_halfwidth = parse_double(key, v);
  else if (key == "eta") c.eta = parse_double(key, v);
  else if (key == "t_end") c.t_end = parse_double(key, v);
  else if (key == "cle_step") c.cle_step = parse_double(key, v);
  else if (key == "theta0") c.theta0 = parse_double(key, v);
  else if (key == "dt_out") c.dt_out = parse_double(key, v);
  else if (key == "seed") {
    std::uint64_t s = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), s);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
      throw Error(ErrorCode::invalid_argument, "seed must be an unsigned 64-bit integer");
    c.seed = s;
  } else if (key == "out") c.out = v;
  else if (key == "workers") c.workers = static_cast<int>(parse_int(key, v));
  else if (key == "replicas") c.replicas = parse_int(key, v);
  else if (key == "omega_list") c.omega_list = parse_list(key, v);
  else if (key == "zeta_list") c.zeta_list = parse_list(key, v);
  else if (key == "horizon") c.horizon = parse_double(key, v);
  else if (key == "x0") c.x0 = v.empty() ? std::vector<double>{} : parse_list(key, v);
  else if (key == "a") c.brusselator_a = parse_double(key, v);
  else if (key == "b") c.brusselator_b = parse_double(key, v);
  else if (key.rfind("rate.", 0) == 0) {
    const auto idx = parse_int(key, key.substr(5));
    if (idx < 0) throw Error(ErrorCode::invalid_argument, "rate index must be non-negative");
    c.rates[static_cast<int>(idx)] = parse_double(key, v);
  } else return false;
  return true;
}

/// Parses `key = value` lines ('#' starts a comment). Unknown keys are an
/// error in strict mode and ignored otherwise. Relative model paths resolve
/// against the config file's directory when the file exists there.
inline RunConfig parse_config(std::string_view text, bool strict = true, const std::filesystem::path& base = {}) {
  RunConfig c;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(ErrorCode::parse, static_cast<int>(line_no), static_cast<int>(line.find_first_not_of(" \t") + 1),
                       "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ParseError(ErrorCode::parse, static_cast<int>(line_no), 1, "missing key before '='");
    try {
      if (!apply_setting(c, key, std::string(line.substr(eq + 1))) && strict)
        throw ParseError(ErrorCode::parse, static_cast<int>(line_no), static_cast<int>(line.find(key[0]) + 1),
                         "unknown key '" + key + "'");
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(ErrorCode::parse, static_cast<int>(line_no), static_cast<int>(eq + 2), e.what());
    }
  }
  if (!c.model.empty() && !base.empty() && std::filesystem::path(c.model).is_relative() &&
      std::filesystem::exists(base / c.model))
    c.model = (base / c.model).string();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, bool strict = true) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), strict, path.parent_path());
}

}  // namespace crnphase
