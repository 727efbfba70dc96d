#pragma once

#include <random>
#include <vector>

#include "fairmarket/env.hpp"

namespace fmtest {

using namespace fairmarket;

/// Plays one round with uniformly random legal actions.
inline MarketState random_round(const EnvConfig& cfg, std::mt19937_64& rng, std::int64_t t = 0) {
  MarketState s = new_episode(cfg, rng, t);
  for (int i = 0; i < cfg.n_sellers; ++i) {
    const int p = std::uniform_int_distribution<int>(cfg.price_min, cfg.price_max)(rng);
    const int q = std::uniform_int_distribution<int>(0, s.inventories[static_cast<std::size_t>(i)])(rng);
    s = apply_seller_offer(s, cfg, i, Offer{p, q});
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int j = 0; j < cfg.n_buyers; ++j) {
    std::vector<double> f(static_cast<std::size_t>(cfg.n_sellers));
    for (auto& x : f) x = u(rng);
    s = apply_buyer_allocation(s, cfg, j, project_buyer_allocation(s, cfg, j, f));
  }
  return s;
}

/// A config with a random number of agents and random ranges.
inline EnvConfig random_config(std::mt19937_64& rng) {
  EnvConfig c;
  c.n_sellers = std::uniform_int_distribution<int>(1, 4)(rng);
  c.n_buyers = std::uniform_int_distribution<int>(1, 3)(rng);
  c.inventory_range_per_seller.clear();
  c.demand_range_per_buyer.clear();
  for (int i = 0; i < c.n_sellers; ++i) {
    const int lo = std::uniform_int_distribution<int>(0, 20)(rng);
    c.inventory_range_per_seller.push_back({lo, lo + std::uniform_int_distribution<int>(0, 20)(rng)});
  }
  for (int j = 0; j < c.n_buyers; ++j) {
    const int lo = std::uniform_int_distribution<int>(0, 30)(rng);
    c.demand_range_per_buyer.push_back({lo, lo + std::uniform_int_distribution<int>(0, 30)(rng)});
  }
  return c;
}

}  // namespace fmtest
