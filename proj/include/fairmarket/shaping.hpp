#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>

#include "fairmarket/env.hpp"

namespace fairmarket {

struct Ramp {
  double start_frac = 0.0;
  double end_frac = 0.0;
};

struct ShapingSchedule {
  std::int64_t total_episodes = 20000;
  Ramp buy_ramp{0.0, 0.2};
  Ramp peer_ramp{0.3, 0.8};
  double w_buyer = 300.0;
  double w_peer = 300.0;
  bool enabled = true;

  void validate() const {
    for (const Ramp& r : {buy_ramp, peer_ramp})
      if (!(0.0 <= r.start_frac && r.start_frac < r.end_frac && r.end_frac <= 1.0))
        throw ConfigError("shaping: ramps need 0 <= start < end <= 1");
    if (!(w_buyer >= 0) || !(w_peer >= 0)) throw ConfigError("shaping: w_B and w_P must be >= 0");
    if (total_episodes < 0) throw ConfigError("shaping: total_episodes must be >= 0");
  }
};

/// Linear 0 -> 1 ramp over [start*T, end*T].
inline double ramp_value(std::int64_t t, std::int64_t total, Ramp r) {
  const double lo = r.start_frac * static_cast<double>(total);
  const double hi = r.end_frac * static_cast<double>(total);
  const double x = static_cast<double>(t);
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  return (x - lo) / (hi - lo);
}

inline double lambda_buy(std::int64_t t, const ShapingSchedule& s) {
  return s.enabled ? ramp_value(t, s.total_episodes, s.buy_ramp) : 0.0;
}

inline double lambda_peer(std::int64_t t, const ShapingSchedule& s) {
  return s.enabled ? ramp_value(t, s.total_episodes, s.peer_ramp) : 0.0;
}

/// raw + lambda_buy*w_B*mean(FTB) + lambda_peer*w_P*FBS*share_i
inline double shaped_seller_reward(double raw, std::span<const double> ftb, double fbs, double share,
                                   std::int64_t t, const ShapingSchedule& s) {
  const double mean_ftb =
      ftb.empty() ? 0.0 : std::accumulate(ftb.begin(), ftb.end(), 0.0) / static_cast<double>(ftb.size());
  return raw + lambda_buy(t, s) * s.w_buyer * mean_ftb + lambda_peer(t, s) * s.w_peer * fbs * share;
}

inline double shaped_buyer_reward(double raw, double ftb_j, std::int64_t t, const ShapingSchedule& s) {
  return raw + lambda_buy(t, s) * s.w_buyer * ftb_j;
}

}  // namespace fairmarket
