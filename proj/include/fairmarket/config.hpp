#pragma once

// JSON form of TrainingConfig and ledgers. Unknown keys are rejected so that
// typos in config files surface as config errors instead of silent defaults.

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fairmarket/critic.hpp"
#include "fairmarket/trainer.hpp"
#include "json.hpp"

namespace fairmarket {

using nlohmann::json;

namespace detail {

inline void require_object(const json& j, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
}

inline void reject_unknown(const json& j, std::string_view where, std::initializer_list<std::string_view> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

inline std::vector<UnitRange> read_ranges(const json& j, std::string_view where) {
  if (!j.is_array()) throw ConfigError(std::string(where) + ": expected a list of [lo, hi] pairs");
  std::vector<UnitRange> out;
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer())
      throw ConfigError(std::string(where) + ": each range must be [lo, hi] integers");
    out.push_back({r[0].get<int>(), r[1].get<int>()});
  }
  return out;
}

inline json ranges_json(const std::vector<UnitRange>& rs) {
  json a = json::array();
  for (const auto& r : rs) a.push_back({r.lo, r.hi});
  return a;
}

inline Ramp read_ramp(const json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(std::string(where) + ": expected [start_frac, end_frac]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline json to_json(const EnvConfig& c) {
  return {{"n_sellers", c.n_sellers},
          {"n_buyers", c.n_buyers},
          {"inventory_range_per_seller", detail::ranges_json(c.inventory_range_per_seller)},
          {"demand_range_per_buyer", detail::ranges_json(c.demand_range_per_buyer)},
          {"unit_cost", c.unit_cost},
          {"price_min", c.price_min},
          {"price_max", c.price_max},
          {"budget_multiplier", c.budget_multiplier},
          {"alpha_shortfall", c.alpha_shortfall},
          {"beta_unsold", c.beta_unsold}};
}

inline EnvConfig env_from_json(const json& j) {
  detail::require_object(j, "env");
  detail::reject_unknown(j, "env",
                         {"n_sellers", "n_buyers", "inventory_range_per_seller", "demand_range_per_buyer", "unit_cost",
                          "price_min", "price_max", "budget_multiplier", "alpha_shortfall", "beta_unsold"});
  EnvConfig c;
  detail::read(j, "n_sellers", c.n_sellers, "env");
  detail::read(j, "n_buyers", c.n_buyers, "env");
  if (j.contains("inventory_range_per_seller"))
    c.inventory_range_per_seller = detail::read_ranges(j["inventory_range_per_seller"], "env.inventory_range_per_seller");
  if (j.contains("demand_range_per_buyer"))
    c.demand_range_per_buyer = detail::read_ranges(j["demand_range_per_buyer"], "env.demand_range_per_buyer");
  detail::read(j, "unit_cost", c.unit_cost, "env");
  detail::read(j, "price_min", c.price_min, "env");
  detail::read(j, "price_max", c.price_max, "env");
  detail::read(j, "budget_multiplier", c.budget_multiplier, "env");
  detail::read(j, "alpha_shortfall", c.alpha_shortfall, "env");
  detail::read(j, "beta_unsold", c.beta_unsold, "env");
  return c;
}

inline json to_json(const CriticConfig& c) {
  return {{"backend", c.backend == CriticBackend::Llm ? "llm" : "scripted"},
          {"endpoint_url", c.endpoint_url},
          {"model_name", c.model_name},
          {"api_key_env_var", c.api_key_env_var},
          {"request_timeout", c.request_timeout},
          {"max_retries", c.max_retries},
          {"temperature", c.temperature},
          {"max_in_flight", c.max_in_flight}};
}

inline CriticBackend parse_backend(const std::string& s) {
  if (s == "llm") return CriticBackend::Llm;
  if (s == "scripted") return CriticBackend::Scripted;
  throw ConfigError("critic.backend must be \"llm\" or \"scripted\", got \"" + s + "\"");
}

inline CriticConfig critic_from_json(const json& j) {
  detail::require_object(j, "critic");
  detail::reject_unknown(j, "critic",
                         {"backend", "endpoint_url", "model_name", "api_key_env_var", "request_timeout", "max_retries",
                          "temperature", "max_in_flight"});
  CriticConfig c;
  std::string backend = "scripted";
  detail::read(j, "backend", backend, "critic");
  c.backend = parse_backend(backend);
  detail::read(j, "endpoint_url", c.endpoint_url, "critic");
  detail::read(j, "model_name", c.model_name, "critic");
  detail::read(j, "api_key_env_var", c.api_key_env_var, "critic");
  detail::read(j, "request_timeout", c.request_timeout, "critic");
  detail::read(j, "max_retries", c.max_retries, "critic");
  detail::read(j, "temperature", c.temperature, "critic");
  detail::read(j, "max_in_flight", c.max_in_flight, "critic");
  return c;
}

inline json to_json(const ShapingSchedule& s) {
  return {{"buy_ramp", {s.buy_ramp.start_frac, s.buy_ramp.end_frac}},
          {"peer_ramp", {s.peer_ramp.start_frac, s.peer_ramp.end_frac}},
          {"w_B", s.w_buyer},
          {"w_P", s.w_peer},
          {"enabled", s.enabled}};
}

inline ShapingSchedule shaping_from_json(const json& j) {
  detail::require_object(j, "shaping");
  detail::reject_unknown(j, "shaping", {"buy_ramp", "peer_ramp", "w_B", "w_P", "enabled"});
  ShapingSchedule s;
  if (j.contains("buy_ramp")) s.buy_ramp = detail::read_ramp(j["buy_ramp"], "shaping.buy_ramp");
  if (j.contains("peer_ramp")) s.peer_ramp = detail::read_ramp(j["peer_ramp"], "shaping.peer_ramp");
  detail::read(j, "w_B", s.w_buyer, "shaping");
  detail::read(j, "w_P", s.w_peer, "shaping");
  detail::read(j, "enabled", s.enabled, "shaping");
  return s;
}

inline json to_json(const PpoHyperparams& h) {
  return {{"clip_epsilon", h.clip_epsilon},
          {"learning_rate", h.learning_rate},
          {"epochs_per_update", h.epochs_per_update},
          {"minibatch_size", h.minibatch_size},
          {"batch_episodes", h.batch_episodes},
          {"value_loss_coef", h.value_loss_coef},
          {"entropy_coef", h.entropy_coef},
          {"gamma", h.gamma},
          {"normalize_advantages", h.normalize_advantages}};
}

inline PpoHyperparams ppo_from_json(const json& j) {
  detail::require_object(j, "ppo");
  detail::reject_unknown(j, "ppo",
                         {"clip_epsilon", "learning_rate", "epochs_per_update", "minibatch_size", "batch_episodes",
                          "value_loss_coef", "entropy_coef", "gamma", "normalize_advantages"});
  PpoHyperparams h;
  detail::read(j, "clip_epsilon", h.clip_epsilon, "ppo");
  detail::read(j, "learning_rate", h.learning_rate, "ppo");
  detail::read(j, "epochs_per_update", h.epochs_per_update, "ppo");
  detail::read(j, "minibatch_size", h.minibatch_size, "ppo");
  detail::read(j, "batch_episodes", h.batch_episodes, "ppo");
  detail::read(j, "value_loss_coef", h.value_loss_coef, "ppo");
  detail::read(j, "entropy_coef", h.entropy_coef, "ppo");
  detail::read(j, "gamma", h.gamma, "ppo");
  detail::read(j, "normalize_advantages", h.normalize_advantages, "ppo");
  return h;
}

inline json to_json(const TrainingConfig& c) {
  return {{"env", to_json(c.env)},
          {"critic", to_json(c.critic)},
          {"shaping", to_json(c.schedule)},
          {"ppo", to_json(c.ppo)},
          {"network", {{"hidden", c.network.hidden}}},
          {"total_episodes", c.total_episodes},
          {"kpi_window", c.kpi_window},
          {"reward_ma_window", c.reward_ma_window},
          {"seed", c.seed},
          {"single_thread", c.single_thread},
          {"threads", c.threads},
          {"save_every", c.save_every},
          {"discard_window", c.discard_window},
          {"max_discard_fraction", c.max_discard_fraction}};
}

/// Parses and validates. Missing keys keep their defaults.
inline TrainingConfig training_config_from_json(const json& j) {
  detail::require_object(j, "config");
  detail::reject_unknown(j, "config",
                         {"env", "critic", "shaping", "ppo", "network", "total_episodes", "kpi_window",
                          "reward_ma_window", "seed", "single_thread", "threads", "save_every", "discard_window",
                          "max_discard_fraction"});
  TrainingConfig c;
  if (j.contains("env")) c.env = env_from_json(j["env"]);
  if (j.contains("critic")) c.critic = critic_from_json(j["critic"]);
  if (j.contains("shaping")) c.schedule = shaping_from_json(j["shaping"]);
  if (j.contains("ppo")) c.ppo = ppo_from_json(j["ppo"]);
  if (j.contains("network")) {
    detail::require_object(j["network"], "network");
    detail::reject_unknown(j["network"], "network", {"hidden"});
    detail::read(j["network"], "hidden", c.network.hidden, "network");
  }
  detail::read(j, "total_episodes", c.total_episodes, "config");
  detail::read(j, "kpi_window", c.kpi_window, "config");
  detail::read(j, "reward_ma_window", c.reward_ma_window, "config");
  detail::read(j, "seed", c.seed, "config");
  detail::read(j, "single_thread", c.single_thread, "config");
  detail::read(j, "threads", c.threads, "config");
  detail::read(j, "save_every", c.save_every, "config");
  detail::read(j, "discard_window", c.discard_window, "config");
  detail::read(j, "max_discard_fraction", c.max_discard_fraction, "config");
  c.schedule.total_episodes = c.total_episodes;
  c.validate();
  return c;
}

inline json parse_json_text(const std::string& text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

inline json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_json_text(ss.str(), path);
}

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible,
/// otherwise taken as a string. Only existing keys may be overridden.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\" is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override: unknown key \"" + path + "\"");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  auto value = json::parse(text, nullptr, false);
  *node = value.is_discarded() ? json(text) : value;
}

// ---------------------------------------------------------------------------
// Ledger JSON (used by score-episode)

inline json to_json(const EpisodeLedger& l) {
  json offers = json::array();
  for (const auto& o : l.offers) offers.push_back({{"price", o.price}, {"quantity", o.quantity}});
  return {{"offers", offers},
          {"sales_matrix", l.sales_matrix},
          {"initial_inventory", l.initial_inventory},
          {"initial_demand", l.initial_demand}};
}

/// Rebuilds a full ledger from offers, sales and initial quantities by
/// replaying the round, so every derived field is recomputed consistently.
inline EpisodeLedger ledger_from_json(const json& j, const EnvConfig& cfg) {
  try {
    const auto offers = j.at("offers");
    const auto sales = j.at("sales_matrix").get<std::vector<std::vector<int>>>();
    const auto inv = j.at("initial_inventory").get<std::vector<int>>();
    const auto dem = j.at("initial_demand").get<std::vector<int>>();
    if (static_cast<int>(offers.size()) != cfg.n_sellers || static_cast<int>(inv.size()) != cfg.n_sellers ||
        static_cast<int>(dem.size()) != cfg.n_buyers || static_cast<int>(sales.size()) != cfg.n_sellers)
      throw ConfigError("ledger: sizes do not match the configured market");
    MarketState s;
    s.inventories = inv;
    s.demands = dem;
    s.initial_inventories = inv;
    s.initial_demands = dem;
    s.offers.assign(inv.size(), std::nullopt);
    s.posted.assign(inv.size(), Offer{});
    s.sales.assign(inv.size(), std::vector<int>(dem.size(), 0));
    for (int i = 0; i < cfg.n_sellers; ++i) {
      const auto& o = offers[static_cast<std::size_t>(i)];
      s = apply_seller_offer(s, cfg, i, Offer{o.at("price").get<int>(), o.at("quantity").get<int>()});
    }
    for (int b = 0; b < cfg.n_buyers; ++b) {
      Allocation a;
      for (int i = 0; i < cfg.n_sellers; ++i) {
        const auto& row = sales[static_cast<std::size_t>(i)];
        if (static_cast<int>(row.size()) != cfg.n_buyers) throw ConfigError("ledger: sales_matrix row size mismatch");
        a.per_seller_units.push_back(row[static_cast<std::size_t>(b)]);
      }
      s = apply_buyer_allocation(s, cfg, b, a);
    }
    return finalize_episode(s, cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ledger: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("ledger is not a legal episode: ") + e.what());
  }
}

}  // namespace fairmarket
