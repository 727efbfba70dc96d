#pragma once

// Turn-based single-round peer-to-peer market: sellers post (price, quantity)
// offers in index order, then buyers allocate their demand over the posted
// offers in index order. All types are values; every operation returns a new
// state and never mutates its input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fairmarket {

/// Thrown when a caller breaks an operation's precondition. These indicate
/// bugs in the policy or orchestration layer, not runtime conditions.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown for invalid user-supplied configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UnitRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const UnitRange&, const UnitRange&) = default;
};

struct EnvConfig {
  int n_sellers = 2;
  int n_buyers = 1;
  std::vector<UnitRange> inventory_range_per_seller{{8, 25}, {10, 30}};
  std::vector<UnitRange> demand_range_per_buyer{{20, 50}};
  double unit_cost = 2.0;
  int price_min = 1;
  int price_max = 10;
  double budget_multiplier = 7.6;
  double alpha_shortfall = 5.0;
  double beta_unsold = 1.0;

  int n_agents() const { return n_sellers + n_buyers; }
  int n_prices() const { return price_max - price_min + 1; }

  /// Largest possible inventory of seller i; used for observation scaling.
  double inventory_scale(int i) const {
    return std::max(1, inventory_range_per_seller[static_cast<std::size_t>(i)].hi);
  }
  double demand_scale(int j) const {
    return std::max(1, demand_range_per_buyer[static_cast<std::size_t>(j)].hi);
  }

  void validate() const {
    if (n_sellers < 1) throw ConfigError("env.n_sellers must be >= 1");
    if (n_buyers < 1) throw ConfigError("env.n_buyers must be >= 1");
    if (static_cast<int>(inventory_range_per_seller.size()) != n_sellers)
      throw ConfigError("env.inventory_range_per_seller must have n_sellers entries");
    if (static_cast<int>(demand_range_per_buyer.size()) != n_buyers)
      throw ConfigError("env.demand_range_per_buyer must have n_buyers entries");
    for (const auto& r : inventory_range_per_seller)
      if (r.lo < 0 || r.lo > r.hi) throw ConfigError("env.inventory_range_per_seller: need 0 <= lo <= hi");
    for (const auto& r : demand_range_per_buyer)
      if (r.lo < 0 || r.lo > r.hi) throw ConfigError("env.demand_range_per_buyer: need 0 <= lo <= hi");
    if (price_min < 1 || price_min > price_max) throw ConfigError("env: need 1 <= price_min <= price_max");
    if (!(budget_multiplier > 0)) throw ConfigError("env.budget_multiplier must be > 0");
    if (!(alpha_shortfall >= 0) || !(beta_unsold >= 0))
      throw ConfigError("env: alpha_shortfall and beta_unsold must be >= 0");
    if (!std::isfinite(unit_cost)) throw ConfigError("env.unit_cost must be finite");
  }
};

struct Offer {
  int price = 0;
  int quantity = 0;
  friend bool operator==(const Offer&, const Offer&) = default;
};

struct Allocation {
  std::vector<int> per_seller_units;
  friend bool operator==(const Allocation&, const Allocation&) = default;
};

/// Global state. `stage` is 1-based: 1..N_S are seller turns, N_S+1..N_S+N_B
/// buyer turns, N_S+N_B+1 means the round is over.
struct MarketState {
  std::vector<int> inventories;
  std::vector<int> demands;
  std::vector<std::optional<Offer>> offers;  // remaining offered quantity
  int stage = 1;
  std::int64_t episode_index = 0;

  // Episode bookkeeping needed to finalize the ledger.
  std::vector<Offer> posted;                   // offers as originally posted
  std::vector<int> initial_inventories;
  std::vector<int> initial_demands;
  std::vector<std::vector<int>> sales;         // [seller][buyer]

  friend bool operator==(const MarketState&, const MarketState&) = default;
};

struct EpisodeLedger {
  std::vector<Offer> offers;
  std::vector<std::vector<int>> sales_matrix;  // [seller][buyer]
  std::vector<int> initial_inventory;
  std::vector<int> initial_demand;
  std::vector<double> profit_per_seller;       // realized seller payoff (raw reward)
  std::vector<double> trade_profit_per_seller; // (p - c) * sold, penalties excluded
  std::vector<double> spend_per_buyer;
  std::vector<int> sold_per_seller;
  std::vector<int> purchased_per_buyer;
  std::vector<int> unsold_per_seller;
  std::vector<int> unmet_demand_per_buyer;
  int total_unmet = 0;
  std::vector<double> margin_per_seller;
  std::vector<double> sales_share_per_seller;
  bool no_trade = false;

  int n_sellers() const { return static_cast<int>(offers.size()); }
  int n_buyers() const { return static_cast<int>(initial_demand.size()); }
  int total_sold() const { return std::accumulate(sold_per_seller.begin(), sold_per_seller.end(), 0); }

  friend bool operator==(const EpisodeLedger&, const EpisodeLedger&) = default;
};

// ---------------------------------------------------------------------------

inline MarketState new_episode(const EnvConfig& cfg, std::mt19937_64& rng, std::int64_t episode_index = 0) {
  MarketState s;
  s.episode_index = episode_index;
  s.inventories.reserve(static_cast<std::size_t>(cfg.n_sellers));
  for (const auto& r : cfg.inventory_range_per_seller)
    s.inventories.push_back(std::uniform_int_distribution<int>(r.lo, r.hi)(rng));
  for (const auto& r : cfg.demand_range_per_buyer)
    s.demands.push_back(std::uniform_int_distribution<int>(r.lo, r.hi)(rng));
  s.offers.assign(static_cast<std::size_t>(cfg.n_sellers), std::nullopt);
  s.posted.assign(static_cast<std::size_t>(cfg.n_sellers), Offer{});
  s.initial_inventories = s.inventories;
  s.initial_demands = s.demands;
  s.sales.assign(static_cast<std::size_t>(cfg.n_sellers),
                 std::vector<int>(static_cast<std::size_t>(cfg.n_buyers), 0));
  s.stage = 1;
  return s;
}

inline int seller_observation_size(const EnvConfig& cfg) { return 1 + cfg.n_buyers; }
inline int buyer_observation_size(const EnvConfig& cfg) { return 3 * cfg.n_sellers + cfg.n_buyers; }

/// [I_i, D_1..D_NB], each divided by its configured maximum. Earlier sellers'
/// offers are deliberately absent.
inline std::vector<double> seller_observation(const MarketState& s, const EnvConfig& cfg, int i) {
  if (s.stage != i + 1) throw ContractViolation("seller_observation: not seller " + std::to_string(i + 1) + "'s turn");
  std::vector<double> obs;
  obs.reserve(static_cast<std::size_t>(seller_observation_size(cfg)));
  obs.push_back(s.inventories[static_cast<std::size_t>(i)] / cfg.inventory_scale(i));
  for (int j = 0; j < cfg.n_buyers; ++j) obs.push_back(s.demands[static_cast<std::size_t>(j)] / cfg.demand_scale(j));
  return obs;
}

/// Layout: [p_1/pmax, q_1/Imax_1, ..., p_NS/pmax, q_NS/Imax_NS,
///          I_1/Imax_1, ..., I_NS/Imax_NS, D_1/Dmax_1, ..., D_NB/Dmax_NB]
/// where q_i is the seller's remaining offered quantity at this buyer's turn.
inline std::vector<double> buyer_observation(const MarketState& s, const EnvConfig& cfg, int j) {
  if (s.stage != cfg.n_sellers + j + 1)
    throw ContractViolation("buyer_observation: not buyer " + std::to_string(j + 1) + "'s turn");
  std::vector<double> obs;
  obs.reserve(static_cast<std::size_t>(buyer_observation_size(cfg)));
  for (int i = 0; i < cfg.n_sellers; ++i) {
    const auto& o = s.offers[static_cast<std::size_t>(i)];
    obs.push_back(o ? static_cast<double>(o->price) / cfg.price_max : 0.0);
    obs.push_back(o ? o->quantity / cfg.inventory_scale(i) : 0.0);
  }
  for (int i = 0; i < cfg.n_sellers; ++i) obs.push_back(s.inventories[static_cast<std::size_t>(i)] / cfg.inventory_scale(i));
  for (int b = 0; b < cfg.n_buyers; ++b) obs.push_back(s.demands[static_cast<std::size_t>(b)] / cfg.demand_scale(b));
  return obs;
}

inline MarketState apply_seller_offer(const MarketState& s, const EnvConfig& cfg, int i, Offer offer) {
  if (s.stage != i + 1) throw ContractViolation("apply_seller_offer: not seller " + std::to_string(i + 1) + "'s turn");
  if (offer.price < cfg.price_min || offer.price > cfg.price_max)
    throw ContractViolation("apply_seller_offer: price out of range");
  if (offer.quantity < 0) throw ContractViolation("apply_seller_offer: negative quantity");
  if (offer.quantity > s.inventories[static_cast<std::size_t>(i)])
    throw ContractViolation("apply_seller_offer: quantity exceeds inventory");
  MarketState next = s;
  next.offers[static_cast<std::size_t>(i)] = offer;
  next.posted[static_cast<std::size_t>(i)] = offer;
  ++next.stage;
  return next;
}

namespace detail {

// Highest-priced seller holding units; ties go to the higher index.
inline int most_expensive_holder(std::span<const int> units, const std::vector<std::optional<Offer>>& offers) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(units.size()); ++i) {
    if (units[static_cast<std::size_t>(i)] <= 0) continue;
    if (best < 0 || offers[static_cast<std::size_t>(i)]->price >= offers[static_cast<std::size_t>(best)]->price) best = i;
  }
  return best;
}

inline double allocation_cost(std::span<const int> units, const std::vector<std::optional<Offer>>& offers) {
  double cost = 0;
  for (std::size_t i = 0; i < units.size(); ++i) cost += static_cast<double>(offers[i]->price) * units[i];
  return cost;
}

}  // namespace detail

/// Maps desired per-seller fractions of the buyer's residual demand onto a
/// feasible allocation: floor, clamp to offers, trim volume, then trim cost.
inline Allocation project_buyer_allocation(const MarketState& s, const EnvConfig& cfg, int j,
                                           std::span<const double> desired_fractions) {
  if (s.stage != cfg.n_sellers + j + 1) throw ContractViolation("project_buyer_allocation: not buyer's turn");
  if (static_cast<int>(desired_fractions.size()) != cfg.n_sellers)
    throw ContractViolation("project_buyer_allocation: need one fraction per seller");
  for (const auto& o : s.offers)
    if (!o) throw ContractViolation("project_buyer_allocation: offers not all posted");

  const int demand = s.demands[static_cast<std::size_t>(j)];
  std::vector<int> units(static_cast<std::size_t>(cfg.n_sellers), 0);
  for (int i = 0; i < cfg.n_sellers; ++i) {
    const double f = std::clamp(desired_fractions[static_cast<std::size_t>(i)], 0.0, 1.0);
    // Small slack so that e.g. 0.6 * 5 == 3 despite binary rounding.
    int u = static_cast<int>(std::floor(f * demand + 1e-9));
    units[static_cast<std::size_t>(i)] = std::min(u, s.offers[static_cast<std::size_t>(i)]->quantity);
  }

  int total = std::accumulate(units.begin(), units.end(), 0);
  while (total > demand) {
    const int k = detail::most_expensive_holder(units, s.offers);
    const int cut = std::min(total - demand, units[static_cast<std::size_t>(k)]);
    units[static_cast<std::size_t>(k)] -= cut;
    total -= cut;
  }

  const double budget = cfg.budget_multiplier * demand;
  while (detail::allocation_cost(units, s.offers) > budget) {
    const int k = detail::most_expensive_holder(units, s.offers);
    --units[static_cast<std::size_t>(k)];
  }
  return Allocation{std::move(units)};
}

/// Checks every buyer constraint against the offers in `s`.
inline bool allocation_feasible(const MarketState& s, const EnvConfig& cfg, int j, const Allocation& a) {
  if (static_cast<int>(a.per_seller_units.size()) != cfg.n_sellers) return false;
  long total = 0;
  double cost = 0;
  for (int i = 0; i < cfg.n_sellers; ++i) {
    const int u = a.per_seller_units[static_cast<std::size_t>(i)];
    const auto& o = s.offers[static_cast<std::size_t>(i)];
    if (u < 0 || !o || u > o->quantity) return false;
    total += u;
    cost += static_cast<double>(o->price) * u;
  }
  const int demand = s.demands[static_cast<std::size_t>(j)];
  return total <= demand && cost <= cfg.budget_multiplier * demand;
}

inline MarketState apply_buyer_allocation(const MarketState& s, const EnvConfig& cfg, int j, const Allocation& a) {
  if (s.stage != cfg.n_sellers + j + 1) throw ContractViolation("apply_buyer_allocation: not buyer's turn");
  if (!allocation_feasible(s, cfg, j, a)) throw ContractViolation("apply_buyer_allocation: infeasible allocation");
  MarketState next = s;
  int bought = 0;
  for (int i = 0; i < cfg.n_sellers; ++i) {
    const int u = a.per_seller_units[static_cast<std::size_t>(i)];
    next.inventories[static_cast<std::size_t>(i)] -= u;
    next.offers[static_cast<std::size_t>(i)]->quantity -= u;
    next.sales[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += u;
    bought += u;
  }
  next.demands[static_cast<std::size_t>(j)] -= bought;
  ++next.stage;
  return next;
}

inline bool episode_done(const MarketState& s, const EnvConfig& cfg) { return s.stage > cfg.n_agents(); }

/// Seller payoff: trading profit minus the shared shortfall and own unsold penalties.
inline double raw_seller_reward(const EpisodeLedger& l, int i, const EnvConfig& cfg) {
  const auto k = static_cast<std::size_t>(i);
  return (l.offers[k].price - cfg.unit_cost) * l.sold_per_seller[k] - cfg.alpha_shortfall * l.total_unmet -
         cfg.beta_unsold * l.unsold_per_seller[k];
}

inline double raw_buyer_reward(const EpisodeLedger& l, int j, const EnvConfig& cfg) {
  return -l.spend_per_buyer[static_cast<std::size_t>(j)] - cfg.alpha_shortfall * l.total_unmet;
}

inline EpisodeLedger finalize_episode(const MarketState& s, const EnvConfig& cfg) {
  if (!episode_done(s, cfg)) throw ContractViolation("finalize_episode: round not finished");
  const auto ns = static_cast<std::size_t>(cfg.n_sellers);
  const auto nb = static_cast<std::size_t>(cfg.n_buyers);
  EpisodeLedger l;
  l.offers = s.posted;
  l.sales_matrix = s.sales;
  l.initial_inventory = s.initial_inventories;
  l.initial_demand = s.initial_demands;
  l.sold_per_seller.assign(ns, 0);
  l.purchased_per_buyer.assign(nb, 0);
  l.spend_per_buyer.assign(nb, 0.0);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const int u = s.sales[i][j];
      l.sold_per_seller[i] += u;
      l.purchased_per_buyer[j] += u;
      l.spend_per_buyer[j] += static_cast<double>(l.offers[i].price) * u;
    }
  l.unsold_per_seller.resize(ns);
  for (std::size_t i = 0; i < ns; ++i) l.unsold_per_seller[i] = l.offers[i].quantity - l.sold_per_seller[i];
  l.unmet_demand_per_buyer = s.demands;
  l.total_unmet = std::accumulate(s.demands.begin(), s.demands.end(), 0);

  const int sold = l.total_sold();
  l.no_trade = sold == 0;
  l.margin_per_seller.assign(ns, 0.0);
  l.sales_share_per_seller.assign(ns, 0.0);
  for (std::size_t i = 0; i < ns; ++i) {
    // A single posted price per seller, so the quantity-weighted margin is (p-c)/p.
    if (l.sold_per_seller[i] > 0) l.margin_per_seller[i] = (l.offers[i].price - cfg.unit_cost) / l.offers[i].price;
    l.sales_share_per_seller[i] =
        l.no_trade ? 1.0 / static_cast<double>(ns) : static_cast<double>(l.sold_per_seller[i]) / sold;
  }
  l.profit_per_seller.resize(ns);
  l.trade_profit_per_seller.resize(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    l.profit_per_seller[i] = raw_seller_reward(l, static_cast<int>(i), cfg);
    l.trade_profit_per_seller[i] = static_cast<double>(l.offers[i].price - cfg.unit_cost) * l.sold_per_seller[i];
  }
  return l;
}

}  // namespace fairmarket
