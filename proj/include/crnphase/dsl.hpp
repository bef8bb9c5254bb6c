#pragma once

// Line-oriented reaction language:
//
//   # comment
//   species: X Y
//   1.0 : -> X
//   1.0 : 2 X + Y -> 3 X
//
// Coefficients default to 1 and may be written with or without a space
// ("2X" or "2 X"). Either side of the arrow may be empty.

#include <nlohmann/json.hpp>

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crnphase/format.hpp"
#include "crnphase/network.hpp"

namespace crnphase {

namespace detail {

class LineCursor {
 public:
  LineCursor(std::string_view text, int line) : text_(text), line_(line) {}

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool done() {
    skip_space();
    return pos_ >= text_.size();
  }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  bool consume(std::string_view token) {
    skip_space();
    if (text_.substr(pos_, token.size()) == token) {
      pos_ += token.size();
      return true;
    }
    return false;
  }
  int column() const { return static_cast<int>(pos_) + 1; }
  int line() const { return line_; }

  [[noreturn]] void fail(const std::string& msg, ErrorCode code = ErrorCode::parse) const {
    throw ParseError(code, line_, column(), msg);
  }

  std::string identifier() {
    skip_space();
    const std::size_t start = pos_;
    if (pos_ < text_.size() && (std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  // Reads a numeric token (anything up to whitespace or one of the
  // delimiters) and returns it verbatim.
  std::string_view number_token(std::string_view delimiters) {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           delimiters.find(text_[pos_]) == std::string_view::npos) {
      if (std::isalpha(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != 'e' && text_[pos_] != 'E') break;
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  void rewind_to(int column) { pos_ = static_cast<std::size_t>(column - 1); }

 private:
  std::string_view text_;
  int line_;
  std::size_t pos_ = 0;
};

struct ParsedTerm {
  std::string species;
  int coeff;
  int line;
  int column;
};

inline std::vector<ParsedTerm> parse_side(LineCursor& cur, bool stop_at_arrow) {
  std::vector<ParsedTerm> terms;
  cur.skip_space();
  if (cur.done() || (stop_at_arrow && cur.peek() == '-')) return terms;
  while (true) {
    cur.skip_space();
    const int col = cur.column();
    int coeff = 1;
    if (std::isdigit(static_cast<unsigned char>(cur.peek())) || cur.peek() == '.' || cur.peek() == '-') {
      std::string_view tok = cur.number_token("+>");
      long long value = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        cur.rewind_to(col);
        cur.fail("stoichiometric coefficient '" + std::string(tok) + "' is not a non-negative integer");
      }
      if (value <= 0 || value > 1000) {
        cur.rewind_to(col);
        cur.fail("stoichiometric coefficient must be a positive integer");
      }
      coeff = static_cast<int>(value);
    }
    cur.skip_space();
    const int name_col = cur.column();
    std::string name = cur.identifier();
    if (name.empty()) cur.fail("expected a species name");
    terms.push_back({name, coeff, cur.line(), name_col});
    if (cur.done()) break;
    if (stop_at_arrow && cur.peek() == '-') break;
    if (!cur.consume("+")) cur.fail("expected '+' or '->'");
  }
  return terms;
}

}  // namespace detail

/// Parses reaction-language source into a network with system size omega.
/// Species order is the `species:` declaration when present, otherwise
/// first appearance.
inline ReactionNetwork parse_network(std::string_view text, double omega) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos)
    throw ParseError(ErrorCode::parse, 1, 1, "empty model source");

  struct RawReaction {
    double rate;
    std::vector<detail::ParsedTerm> lhs, rhs;
  };
  std::vector<std::string> species;
  bool declared = false;
  std::vector<RawReaction> raw;

  auto index_of = [&](const detail::ParsedTerm& t) -> int {
    for (std::size_t i = 0; i < species.size(); ++i)
      if (species[i] == t.species) return static_cast<int>(i);
    if (declared)
      throw ParseError(ErrorCode::unknown_species, t.line, t.column, "unknown species '" + t.species + "'");
    species.push_back(t.species);
    return static_cast<int>(species.size()) - 1;
  };

  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    detail::LineCursor cur(line, line_no);
    if (cur.done()) {
      if (end == text.size()) break;
      continue;
    }

    if (cur.consume("species")) {
      if (!cur.consume(":")) cur.fail("expected ':' after 'species'");
      if (declared || !raw.empty()) cur.fail("species block must appear once, before any reaction");
      declared = true;
      while (!cur.done()) {
        const int col = cur.column();
        std::string name = cur.identifier();
        if (name.empty()) cur.fail("expected a species name");
        for (const auto& s : species)
          if (s == name) throw ParseError(ErrorCode::parse, line_no, col, "species '" + name + "' declared twice");
        species.push_back(name);
      }
      if (species.empty()) cur.fail("species block is empty");
    } else {
      const int rate_col = cur.column();
      std::string_view tok = cur.number_token(":");
      double rate = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), rate);
      if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
        cur.rewind_to(rate_col);
        cur.fail("expected a rate constant");
      }
      if (!(rate > 0.0) || !std::isfinite(rate)) {
        cur.rewind_to(rate_col);
        cur.fail("rate constant must be positive");
      }
      if (!cur.consume(":")) cur.fail("expected ':' after rate constant");
      RawReaction r{rate, {}, {}};
      r.lhs = detail::parse_side(cur, true);
      if (!cur.consume("->")) cur.fail("expected '->'");
      r.rhs = detail::parse_side(cur, false);
      if (!cur.done()) cur.fail("unexpected trailing text");
      if (r.lhs.empty() && r.rhs.empty()) cur.fail("reaction has no reactants and no products");
      raw.push_back(std::move(r));
    }
    if (end == text.size()) break;
  }

  if (raw.empty()) throw ParseError(ErrorCode::parse, line_no, 1, "model contains no reactions");

  // Resolve species in order of appearance so undeclared names get stable indices.
  std::vector<std::vector<std::pair<int, int>>> lhs(raw.size()), rhs(raw.size());
  for (std::size_t a = 0; a < raw.size(); ++a) {
    for (const auto& t : raw[a].lhs) lhs[a].push_back({index_of(t), t.coeff});
    for (const auto& t : raw[a].rhs) rhs[a].push_back({index_of(t), t.coeff});
  }
  const std::size_t k = species.size();
  std::vector<Reaction> reactions;
  for (std::size_t a = 0; a < raw.size(); ++a) {
    Reaction r{raw[a].rate, std::vector<int>(k, 0), std::vector<int>(k, 0)};
    for (auto [i, c] : lhs[a]) r.reactants[static_cast<std::size_t>(i)] += c;
    for (auto [i, c] : rhs[a]) r.products[static_cast<std::size_t>(i)] += c;
    reactions.push_back(std::move(r));
  }
  return ReactionNetwork(std::move(species), std::move(reactions), omega);
}

inline ReactionNetwork load_network(const std::string& path, double omega) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str(), omega);
}

/// Renders a network back to reaction-language source. Parsing the result
/// yields an identical network.
inline std::string to_dsl(const ReactionNetwork& net) {
  std::ostringstream out;
  out << "species:";
  for (const auto& s : net.species()) out << ' ' << s;
  out << '\n';
  auto side = [&](const std::vector<int>& coeffs) {
    std::string s;
    for (int i = 0; i < net.num_species(); ++i) {
      const int c = coeffs[static_cast<std::size_t>(i)];
      if (c == 0) continue;
      if (!s.empty()) s += " + ";
      if (c != 1) s += std::to_string(c) + " ";
      s += net.species()[static_cast<std::size_t>(i)];
    }
    return s;
  };
  for (const auto& r : net.reactions()) {
    std::string lhs = side(r.reactants);
    std::string rhs = side(r.products);
    out << format_double(r.rate) << " : " << lhs << (lhs.empty() ? "-> " : " -> ") << rhs << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const ReactionNetwork& net) {
  nlohmann::json j;
  j["species"] = net.species();
  j["omega"] = net.omega();
  nlohmann::json rx = nlohmann::json::array();
  for (const auto& r : net.reactions()) rx.push_back({{"rate", r.rate}, {"reactants", r.reactants}, {"products", r.products}});
  j["reactions"] = rx;
  nlohmann::json s = nlohmann::json::array();
  for (int i = 0; i < net.num_species(); ++i) {
    std::vector<int> row;
    for (int a = 0; a < net.num_reactions(); ++a) row.push_back(net.stoichiometry()(i, a));
    s.push_back(row);
  }
  j["stoichiometry"] = s;
  return j;
}

inline ReactionNetwork network_from_json(const nlohmann::json& j) {
  try {
    std::vector<Reaction> rx;
    for (const auto& r : j.at("reactions"))
      rx.push_back({r.at("rate").get<double>(), r.at("reactants").get<std::vector<int>>(),
                    r.at("products").get<std::vector<int>>()});
    return ReactionNetwork(j.at("species").get<std::vector<std::string>>(), std::move(rx), j.at("omega").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("malformed network JSON: ") + e.what());
  }
}

namespace models {

inline constexpr std::string_view brusselator_source =
    "# Brusselator: a = c = d = 1, b = 2.5\n"
    "species: X Y\n"
    "1.0 : -> X\n"
    "2.5 : X -> Y\n"
    "1.0 : 2 X + Y -> 3 X\n"
    "1.0 : X -> \n";

inline ReactionNetwork brusselator(double omega = 3000.0, double a = 1.0, double b = 2.5) {
  return parse_network(brusselator_source, omega).with_rate(0, a).with_rate(1, b);
}

inline ReactionNetwork birth_death(double birth, double death, double omega) {
  std::string src = "species: X\n" + format_double(birth) + " : -> X\n" + format_double(death) + " : X ->\n";
  return parse_network(src, omega);
}

}  // namespace models

}  // namespace crnphase
