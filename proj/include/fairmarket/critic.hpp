#pragma once

// Fairness critic: ledger -> prompt, response text -> verdict, and a
// deterministic scripted scorer used in place of a remote model.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fairmarket/env.hpp"
#include "json.hpp"

namespace fairmarket {

struct FairnessScores {
  std::vector<double> ftb;  // one per buyer
  double fbs = 0.0;

  double mean_ftb() const {
    if (ftb.empty()) return 0.0;
    double s = 0;
    for (double v : ftb) s += v;
    return s / static_cast<double>(ftb.size());
  }
  friend bool operator==(const FairnessScores&, const FairnessScores&) = default;
};

enum class InvalidReason { MalformedJson, WrongFtbCount, OutOfRange, MissingKey, Transport, Timeout };

inline std::string_view to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::MalformedJson: return "malformed-json";
    case InvalidReason::WrongFtbCount: return "wrong-ftb-count";
    case InvalidReason::OutOfRange: return "out-of-range";
    case InvalidReason::MissingKey: return "missing-key";
    case InvalidReason::Transport: return "transport";
    case InvalidReason::Timeout: return "timeout";
  }
  return "unknown";
}

struct Invalid {
  InvalidReason reason;
  std::string detail;
};

/// Either scores or a rejection. Rejected episodes are dropped from training;
/// nothing downstream may fabricate scores for them.
class CriticVerdict {
 public:
  CriticVerdict(FairnessScores s) : v_(std::move(s)) {}  // NOLINT(google-explicit-constructor)
  CriticVerdict(Invalid i) : v_(std::move(i)) {}         // NOLINT(google-explicit-constructor)

  bool scored() const { return std::holds_alternative<FairnessScores>(v_); }
  const FairnessScores& scores() const { return std::get<FairnessScores>(v_); }
  const Invalid& invalid() const { return std::get<Invalid>(v_); }
  const FairnessScores* scores_if() const { return std::get_if<FairnessScores>(&v_); }

 private:
  std::variant<FairnessScores, Invalid> v_;
};

enum class CriticBackend { Llm, Scripted };

struct CriticConfig {
  CriticBackend backend = CriticBackend::Scripted;
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env_var = "FAIRMARKET_API_KEY";
  double request_timeout = 30.0;  // seconds
  int max_retries = 2;
  double temperature = 0.0;
  int max_in_flight = 4;

  void validate() const {
    if (backend == CriticBackend::Llm && (endpoint_url.empty() || model_name.empty()))
      throw ConfigError("critic: llm backend requires endpoint_url and model_name");
    if (max_retries < 0) throw ConfigError("critic.max_retries must be >= 0");
    if (!(request_timeout > 0)) throw ConfigError("critic.request_timeout must be > 0");
    if (max_in_flight < 1) throw ConfigError("critic.max_in_flight must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Prompt

namespace detail {

inline std::string fixed2(double v) {
  if (v == 0.0) v = 0.0;  // no "-0.00"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  return s == "-0.00" ? "0.00" : s;
}

}  // namespace detail

inline std::string serialize_prompt(const EpisodeLedger& l, const EnvConfig& cfg) {
  using detail::fixed2;
  const int ns = l.n_sellers();
  const int nb = l.n_buyers();
  std::string p;
  p += "You are a fairness critic for one trading round of a peer-to-peer market.\n";
  p += "Score FTB (fairness-to-buyer) for every buyer: high when the buyer's demand is met at reasonable prices.\n";
  p += "Score FBS (fairness-between-sellers) once: high when seller profits are balanced and no seller dominates sales.\n";
  p += "All scores must lie in [0,1]. Respond with a single JSON object and nothing else:\n";
  p += "{\"ftb\": [f_1, ..., f_" + std::to_string(nb) + "], \"fbs\": f}\n";
  p += "The ftb array must contain exactly " + std::to_string(nb) + " number(s), in buyer order.\n";
  p += "Market: sellers=" + std::to_string(ns) + " buyers=" + std::to_string(nb) + " unit_cost=" + fixed2(cfg.unit_cost) +
       " price_min=" + fixed2(cfg.price_min) + " price_max=" + fixed2(cfg.price_max) +
       " budget_multiplier=" + fixed2(cfg.budget_multiplier) + "\n";
  for (int i = 0; i < ns; ++i) {
    const auto k = static_cast<std::size_t>(i);
    p += "Seller " + std::to_string(i + 1) + ": price=" + fixed2(l.offers[k].price) +
         " offered=" + fixed2(l.offers[k].quantity) + " sold=" + fixed2(l.sold_per_seller[k]) +
         " profit=" + fixed2(l.profit_per_seller[k]) + " margin=" + fixed2(l.margin_per_seller[k]) +
         " unsold=" + fixed2(l.unsold_per_seller[k]) + "\n";
  }
  for (int j = 0; j < nb; ++j) {
    const auto k = static_cast<std::size_t>(j);
    p += "Buyer " + std::to_string(j + 1) + ": demand=" + fixed2(l.initial_demand[k]) +
         " purchased=" + fixed2(l.purchased_per_buyer[k]) + " spend=" + fixed2(l.spend_per_buyer[k]) +
         " unmet=" + fixed2(l.unmet_demand_per_buyer[k]) + "\n";
  }
  p += "Total unmet demand: " + fixed2(l.total_unmet) + "\n";
  return p;
}

// ---------------------------------------------------------------------------
// Response parsing

namespace detail {

// Returns the end (one past '}') of the balanced object starting at `open`, or npos.
inline std::size_t match_object(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t k = open; k < s.size(); ++k) {
    const char c = s[k];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return k + 1;
  }
  return std::string_view::npos;
}

inline std::optional<nlohmann::json> first_json_object(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    const std::size_t end = match_object(text, open);
    if (end == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(text.substr(open, end - open), nullptr, /*allow_exceptions=*/false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  return std::nullopt;
}

inline bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace detail

inline CriticVerdict parse_scores(std::string_view response, int n_buyers) {
  auto obj = detail::first_json_object(response);
  if (!obj) return Invalid{InvalidReason::MalformedJson, "no JSON object in response"};
  if (!obj->contains("ftb") || !obj->contains("fbs"))
    return Invalid{InvalidReason::MissingKey, "response needs keys \"ftb\" and \"fbs\""};
  const auto& ftb = (*obj)["ftb"];
  const auto& fbs = (*obj)["fbs"];
  if (!ftb.is_array() || !fbs.is_number())
    return Invalid{InvalidReason::MalformedJson, "\"ftb\" must be an array and \"fbs\" a number"};
  if (static_cast<int>(ftb.size()) != n_buyers)
    return Invalid{InvalidReason::WrongFtbCount,
                   "expected " + std::to_string(n_buyers) + " ftb values, got " + std::to_string(ftb.size())};
  FairnessScores s;
  for (const auto& v : ftb) {
    if (!v.is_number()) return Invalid{InvalidReason::MalformedJson, "non-numeric ftb entry"};
    s.ftb.push_back(v.get<double>());
  }
  s.fbs = fbs.get<double>();
  for (double v : s.ftb)
    if (!detail::in_unit(v)) return Invalid{InvalidReason::OutOfRange, "ftb value outside [0,1]"};
  if (!detail::in_unit(s.fbs)) return Invalid{InvalidReason::OutOfRange, "fbs value outside [0,1]"};
  return s;
}

/// Inverse of parse_scores for valid scores.
inline std::string render_scores(const FairnessScores& s) {
  nlohmann::json j;
  j["ftb"] = s.ftb;
  j["fbs"] = s.fbs;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Scripted critic

/// Gini coefficient of non-negative values; 0 when all are zero.
inline double gini(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double sum = 0;
  for (double x : xs) sum += x;
  if (xs.empty() || sum <= 0) return 0.0;
  double diff = 0;
  for (double a : xs)
    for (double b : xs) diff += std::abs(a - b);
  return diff / (2.0 * n * sum);
}

inline double scripted_ftb(const EpisodeLedger& l, const EnvConfig& cfg, int j) {
  const auto k = static_cast<std::size_t>(j);
  const int demand = l.initial_demand[k];
  const int bought = l.purchased_per_buyer[k];
  const double fulfilled = demand > 0 ? static_cast<double>(bought) / demand : 1.0;
  double avg_price;
  if (bought > 0) avg_price = l.spend_per_buyer[k] / bought;
  else avg_price = demand > 0 ? cfg.price_max : cfg.price_min;
  const double span = cfg.price_max - cfg.price_min;
  const double price_term = span > 0 ? 1.0 - (avg_price - cfg.price_min) / span : 1.0;
  return std::clamp(0.5 * fulfilled + 0.5 * price_term, 0.0, 1.0);
}

inline double scripted_fbs(const EpisodeLedger& l) {
  if (l.no_trade) return 0.0;
  std::vector<double> clipped;
  clipped.reserve(l.profit_per_seller.size());
  for (double p : l.profit_per_seller) clipped.push_back(std::max(0.0, p));
  const double g = gini(clipped);
  const double ns = static_cast<double>(l.n_sellers());
  const double s_max = *std::max_element(l.sales_share_per_seller.begin(), l.sales_share_per_seller.end());
  const double monopoly = ns > 1 ? 1.0 - std::max(0.0, s_max - 1.0 / ns) / (1.0 - 1.0 / ns) : 1.0;
  return std::clamp((1.0 - g) * monopoly, 0.0, 1.0);
}

inline CriticVerdict score_scripted(const EpisodeLedger& l, const EnvConfig& cfg) {
  FairnessScores s;
  for (int j = 0; j < l.n_buyers(); ++j) s.ftb.push_back(scripted_ftb(l, cfg, j));
  s.fbs = scripted_fbs(l);
  return s;
}

/// Scores a finalized ledger. Implementations must be safe to call from
/// several rollout threads at once.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual CriticVerdict score(const EpisodeLedger& ledger, const EnvConfig& cfg) = 0;
};

class ScriptedCritic final : public Critic {
 public:
  CriticVerdict score(const EpisodeLedger& ledger, const EnvConfig& cfg) override {
    return score_scripted(ledger, cfg);
  }
};

}  // namespace fairmarket
