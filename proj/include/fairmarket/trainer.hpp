#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fairmarket/checkpoint.hpp"
#include "fairmarket/critic.hpp"
#include "fairmarket/env.hpp"
#include "fairmarket/ippo.hpp"
#include "fairmarket/shaping.hpp"
#include "json.hpp"

namespace fairmarket {

/// Raised when too many episodes in a row are discarded by the critic.
class CriticOutageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  EnvConfig env;
  CriticConfig critic;
  ShapingSchedule schedule;
  PpoHyperparams ppo;
  NetworkConfig network;
  std::int64_t total_episodes = 20000;
  int kpi_window = 2000;
  int reward_ma_window = 500;
  std::uint64_t seed = 0;
  bool single_thread = false;
  int threads = 0;  // 0: hardware concurrency
  std::int64_t save_every = 0;
  int discard_window = 1000;
  double max_discard_fraction = 0.5;

  void validate() const {
    env.validate();
    critic.validate();
    schedule.validate();
    ppo.validate();
    if (total_episodes < 0) throw ConfigError("total_episodes must be >= 0");
    if (kpi_window < 1 || reward_ma_window < 1) throw ConfigError("kpi_window and reward_ma_window must be >= 1");
    if (total_episodes > 0 && kpi_window > total_episodes) throw ConfigError("kpi_window must be <= total_episodes");
    if (save_every < 0) throw ConfigError("save_every must be >= 0");
    if (discard_window < 1 || !(max_discard_fraction > 0 && max_discard_fraction <= 1))
      throw ConfigError("discard_window must be >= 1 and max_discard_fraction in (0,1]");
    for (int h : network.hidden)
      if (h < 1) throw ConfigError("network.hidden sizes must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Seeding

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, stream, index); e.g. one per episode.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t a = splitmix64(seed), b = splitmix64(stream ^ 0xa5a5a5a5ULL), c = splitmix64(index);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

enum RngStream : std::uint64_t { kEpisodeStream = 1, kPolicyInitStream = 2, kUpdateStream = 3 };

inline std::vector<PolicyParams> init_policies(const TrainingConfig& cfg) {
  std::vector<PolicyParams> out;
  for (int k = 0; k < cfg.env.n_agents(); ++k) {
    const auto role = k < cfg.env.n_sellers ? AgentRole::Seller : AgentRole::Buyer;
    out.push_back(policy_init(role, cfg.env, cfg.network, stream_rng(cfg.seed, kPolicyInitStream, k)()));
  }
  return out;
}

inline std::string agent_label(const EnvConfig& cfg, int k) {
  return k < cfg.n_sellers ? "S" + std::to_string(k + 1) : "B" + std::to_string(k - cfg.n_sellers + 1);
}

// ---------------------------------------------------------------------------
// One episode

struct EpisodeOutcome {
  std::int64_t t = 0;
  EpisodeLedger ledger;
  CriticVerdict verdict{Invalid{InvalidReason::Transport, "not scored"}};
  double lambda_buy = 0.0;
  double lambda_peer = 0.0;
  std::vector<double> raw_rewards;                  // sellers then buyers
  std::optional<std::vector<double>> shaped_rewards;  // only when scored
  std::vector<Transition> transitions;             // one per agent, return unset
};

inline EpisodeOutcome run_episode(std::span<const PolicyParams> policies, const EnvConfig& env, Critic& critic,
                                  const ShapingSchedule& schedule, std::int64_t t, std::mt19937_64& rng,
                                  bool greedy = false) {
  if (static_cast<int>(policies.size()) != env.n_agents()) throw ContractViolation("run_episode: one policy per agent");
  EpisodeOutcome out;
  out.t = t;
  MarketState s = new_episode(env, rng, t);
  auto record = [&](const PolicyParams& p, std::vector<double> obs) {
    ActionSample a = greedy ? evaluate_policy(p, obs) : act(p, obs, rng);
    out.transitions.push_back(Transition{std::move(obs), a.choices, a.log_prob, 0.0, a.value_estimate, 0.0});
    return a;
  };
  for (int i = 0; i < env.n_sellers; ++i) {
    const ActionSample a = record(policies[static_cast<std::size_t>(i)], seller_observation(s, env, i));
    s = apply_seller_offer(s, env, i, seller_offer_from_action(a, s.inventories[static_cast<std::size_t>(i)], env));
  }
  for (int j = 0; j < env.n_buyers; ++j) {
    const ActionSample a = record(policies[static_cast<std::size_t>(env.n_sellers + j)], buyer_observation(s, env, j));
    const auto fractions = buyer_fractions_from_action(a);
    s = apply_buyer_allocation(s, env, j, project_buyer_allocation(s, env, j, fractions));
  }
  out.ledger = finalize_episode(s, env);
  for (int i = 0; i < env.n_sellers; ++i) out.raw_rewards.push_back(raw_seller_reward(out.ledger, i, env));
  for (int j = 0; j < env.n_buyers; ++j) out.raw_rewards.push_back(raw_buyer_reward(out.ledger, j, env));

  out.lambda_buy = lambda_buy(t, schedule);
  out.lambda_peer = lambda_peer(t, schedule);
  out.verdict = critic.score(out.ledger, env);
  if (const FairnessScores* sc = out.verdict.scores_if()) {
    std::vector<double> shaped;
    for (int i = 0; i < env.n_sellers; ++i)
      shaped.push_back(shaped_seller_reward(out.raw_rewards[static_cast<std::size_t>(i)], sc->ftb, sc->fbs,
                                            out.ledger.sales_share_per_seller[static_cast<std::size_t>(i)], t, schedule));
    for (int j = 0; j < env.n_buyers; ++j)
      shaped.push_back(shaped_buyer_reward(out.raw_rewards[static_cast<std::size_t>(env.n_sellers + j)],
                                           sc->ftb[static_cast<std::size_t>(j)], t, schedule));
    for (std::size_t k = 0; k < shaped.size(); ++k) out.transitions[k].shaped_return = shaped[k];
    out.shaped_rewards = std::move(shaped);
  }
  return out;
}

// ---------------------------------------------------------------------------
// KPIs

struct KpiSample {
  const EpisodeLedger* ledger;
  const FairnessScores* scores;  // null for discarded episodes
};

struct KpiReport {
  std::int64_t episodes = 0;
  std::int64_t scored_episodes = 0;
  std::int64_t discarded_episode_count = 0;
  double full_demand_episode_frac = 0.0;
  double mean_ftb = 0.0;  // over scored episodes only
  double mean_fbs = 0.0;
  std::vector<double> margin_per_seller;
  double margin_lo = 0.0;
  double margin_hi = 0.0;
  std::vector<double> sales_share_per_seller;  // window aggregate
  double max_sales_share = 0.0;
  double mean_episode_max_share = 0.0;  // per-episode distribution
  double p90_episode_max_share = 0.0;
  std::int64_t budget_violations = 0;
  std::vector<double> mean_profit_per_seller;        // raw payoff
  std::vector<double> mean_trade_profit_per_seller;  // (p - c) * sold
  double seller_profit_gap = 0.0;  // (max - min) / max |mean trade profit|
};

/// Violated buyer/seller constraints in one ledger.
inline int audit_ledger(const EpisodeLedger& l, const EnvConfig& cfg) {
  int bad = 0;
  for (int j = 0; j < l.n_buyers(); ++j) {
    double cost = 0;
    long units = 0;
    for (int i = 0; i < l.n_sellers(); ++i) {
      const int u = l.sales_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      cost += static_cast<double>(l.offers[static_cast<std::size_t>(i)].price) * u;
      units += u;
      if (u < 0 || u > l.offers[static_cast<std::size_t>(i)].quantity) ++bad;
    }
    const int d = l.initial_demand[static_cast<std::size_t>(j)];
    if (units > d || cost > cfg.budget_multiplier * d) ++bad;
  }
  for (int i = 0; i < l.n_sellers(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (l.sold_per_seller[k] > l.offers[k].quantity || l.offers[k].quantity > l.initial_inventory[k]) ++bad;
  }
  return bad;
}

inline double profit_gap(std::span<const double> mean_profit) {
  if (mean_profit.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(mean_profit.begin(), mean_profit.end());
  double scale = 0;
  for (double p : mean_profit) scale = std::max(scale, std::abs(p));
  return scale > 0 ? (*hi - *lo) / scale : 0.0;
}

inline KpiReport compute_kpis(std::span<const KpiSample> window, const EnvConfig& cfg) {
  if (window.empty()) throw std::invalid_argument("compute_kpis: empty window");
  const auto ns = static_cast<std::size_t>(cfg.n_sellers);
  KpiReport r;
  r.episodes = static_cast<std::int64_t>(window.size());
  std::vector<double> margin_num(ns, 0.0), margin_den(ns, 0.0), sold(ns, 0.0), profit(ns, 0.0), trade(ns, 0.0);
  std::vector<double> episode_max;
  std::int64_t full = 0;
  double ftb = 0, fbs = 0;
  for (const auto& s : window) {
    const EpisodeLedger& l = *s.ledger;
    if (l.total_unmet == 0) ++full;
    if (s.scores) {
      ++r.scored_episodes;
      ftb += s.scores->mean_ftb();
      fbs += s.scores->fbs;
    }
    for (std::size_t i = 0; i < ns; ++i) {
      const double p = l.offers[i].price;
      margin_num[i] += (p - cfg.unit_cost) * l.sold_per_seller[i];
      margin_den[i] += p * l.sold_per_seller[i];
      sold[i] += l.sold_per_seller[i];
      profit[i] += l.profit_per_seller[i];
      trade[i] += l.trade_profit_per_seller[i];
    }
    if (!l.no_trade)
      episode_max.push_back(*std::max_element(l.sales_share_per_seller.begin(), l.sales_share_per_seller.end()));
    r.budget_violations += audit_ledger(l, cfg);
  }
  const double n = static_cast<double>(window.size());
  r.discarded_episode_count = r.episodes - r.scored_episodes;
  r.full_demand_episode_frac = static_cast<double>(full) / n;
  if (r.scored_episodes > 0) {
    r.mean_ftb = ftb / static_cast<double>(r.scored_episodes);
    r.mean_fbs = fbs / static_cast<double>(r.scored_episodes);
  }
  const double total_sold = std::accumulate(sold.begin(), sold.end(), 0.0);
  for (std::size_t i = 0; i < ns; ++i) {
    r.margin_per_seller.push_back(margin_den[i] > 0 ? margin_num[i] / margin_den[i] : 0.0);
    r.sales_share_per_seller.push_back(total_sold > 0 ? sold[i] / total_sold : 1.0 / static_cast<double>(ns));
    r.mean_profit_per_seller.push_back(profit[i] / n);
    r.mean_trade_profit_per_seller.push_back(trade[i] / n);
  }
  r.margin_lo = *std::min_element(r.margin_per_seller.begin(), r.margin_per_seller.end());
  r.margin_hi = *std::max_element(r.margin_per_seller.begin(), r.margin_per_seller.end());
  r.max_sales_share = *std::max_element(r.sales_share_per_seller.begin(), r.sales_share_per_seller.end());
  if (!episode_max.empty()) {
    r.mean_episode_max_share = std::accumulate(episode_max.begin(), episode_max.end(), 0.0) /
                               static_cast<double>(episode_max.size());
    std::sort(episode_max.begin(), episode_max.end());
    r.p90_episode_max_share = episode_max[static_cast<std::size_t>(0.9 * static_cast<double>(episode_max.size() - 1))];
  }
  r.seller_profit_gap = profit_gap(r.mean_trade_profit_per_seller);
  return r;
}

inline nlohmann::json to_json(const KpiReport& r) {
  return {{"episodes", r.episodes},
          {"scored_episodes", r.scored_episodes},
          {"discarded_episode_count", r.discarded_episode_count},
          {"full_demand_episode_frac", r.full_demand_episode_frac},
          {"mean_ftb", r.mean_ftb},
          {"mean_fbs", r.mean_fbs},
          {"margin_per_seller", r.margin_per_seller},
          {"margin_range_per_seller", {r.margin_lo, r.margin_hi}},
          {"sales_share_per_seller", r.sales_share_per_seller},
          {"max_sales_share", r.max_sales_share},
          {"mean_episode_max_share", r.mean_episode_max_share},
          {"p90_episode_max_share", r.p90_episode_max_share},
          {"budget_violations", r.budget_violations},
          {"mean_profit_per_seller", r.mean_profit_per_seller},
          {"mean_trade_profit_per_seller", r.mean_trade_profit_per_seller},
          {"seller_profit_gap", r.seller_profit_gap}};
}

// ---------------------------------------------------------------------------
// Training loop

struct EpisodeRecord {
  std::int64_t t = 0;
  double lambda_buy = 0.0;
  double lambda_peer = 0.0;
  std::vector<double> raw_rewards;
  std::optional<std::vector<double>> shaped_rewards;
  std::optional<FairnessScores> scores;
  std::optional<Invalid> invalid;
  EpisodeLedger ledger;
};

struct UpdateRecord {
  std::int64_t after_episode = 0;
  std::vector<UpdateStats> per_agent;
};

struct TrainingReport {
  std::vector<EpisodeRecord> episodes;
  std::vector<UpdateRecord> updates;
  std::optional<KpiReport> final_kpis;        // last kpi_window episodes
  std::vector<KpiReport> kpi_series;           // consecutive kpi_window blocks
  std::vector<std::string> checkpoint_paths;
  std::int64_t discarded = 0;
  std::int64_t batch_samples = 0;  // transitions handed to ppo_update, all agents
  std::vector<PolicyParams> policies;
};

inline std::vector<KpiSample> kpi_samples(std::span<const EpisodeRecord> recs) {
  std::vector<KpiSample> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back({&r.ledger, r.scores ? &*r.scores : nullptr});
  return out;
}

namespace detail {

inline int worker_count(const TrainingConfig& cfg, std::size_t jobs) {
  if (cfg.single_thread) return 1;
  int n = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), std::max<std::size_t>(jobs, 1)));
}

// Episodes [t0, t0+count) with fixed policies. Each episode draws from its
// own generator, so the result does not depend on the thread count.
inline std::vector<EpisodeOutcome> collect(std::span<const PolicyParams> policies, const TrainingConfig& cfg,
                                           Critic& critic, std::int64_t t0, std::int64_t count, bool greedy) {
  std::vector<std::optional<EpisodeOutcome>> slots(static_cast<std::size_t>(count));
  auto work = [&](std::int64_t k) {
    auto rng = stream_rng(cfg.seed, kEpisodeStream, static_cast<std::uint64_t>(t0 + k));
    slots[static_cast<std::size_t>(k)] = run_episode(policies, cfg.env, critic, cfg.schedule, t0 + k, rng, greedy);
  };
  const int workers = worker_count(cfg, static_cast<std::size_t>(count));
  if (workers <= 1) {
    for (std::int64_t k = 0; k < count; ++k) work(k);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::int64_t k = w; k < count; k += workers) work(k);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<EpisodeOutcome> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace detail

struct RunHooks {
  std::string checkpoint_dir;  // empty: no checkpoints
  std::function<void(std::int64_t t, const TrainingReport&)> on_progress;
};

inline TrainingReport run_training(const TrainingConfig& cfg_in, Critic& critic,
                                   std::optional<std::vector<PolicyParams>> initial = std::nullopt,
                                   const RunHooks& hooks = {}) {
  TrainingConfig cfg = cfg_in;
  cfg.schedule.total_episodes = cfg.total_episodes;
  cfg.validate();

  TrainingReport rep;
  rep.policies = initial ? std::move(*initial) : init_policies(cfg);
  if (static_cast<int>(rep.policies.size()) != cfg.env.n_agents())
    throw ConfigError("loaded checkpoint has " + std::to_string(rep.policies.size()) + " agents, config needs " +
                      std::to_string(cfg.env.n_agents()));
  for (int k = 0; k < cfg.env.n_agents(); ++k) {
    const auto shape = policy_shape(k < cfg.env.n_sellers ? AgentRole::Seller : AgentRole::Buyer, cfg.env);
    const auto& p = rep.policies[static_cast<std::size_t>(k)];
    if (p.obs_dim != shape.obs_dim || p.head_sizes != shape.head_sizes)
      throw ConfigError("policy for agent " + agent_label(cfg.env, k) + " does not match the environment layout");
  }
  const auto n_agents = static_cast<std::size_t>(cfg.env.n_agents());

  auto save = [&](const std::string& name) {
    if (hooks.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(hooks.checkpoint_dir);
    const auto path = (std::filesystem::path(hooks.checkpoint_dir) / name).string();
    save_checkpoint(path, rep.policies);
    rep.checkpoint_paths.push_back(path);
  };

  std::vector<std::vector<Transition>> batch(n_agents);
  std::int64_t pending = 0;
  std::deque<bool> recent_discards;
  std::int64_t recent_count = 0;
  std::int64_t update_index = 0;

  std::int64_t t = 0;
  while (t < cfg.total_episodes) {
    const std::int64_t block = std::min<std::int64_t>(cfg.ppo.batch_episodes - pending, cfg.total_episodes - t);
    auto outcomes = detail::collect(rep.policies, cfg, critic, t, block, /*greedy=*/false);
    for (auto& o : outcomes) {
      EpisodeRecord rec;
      rec.t = o.t;
      rec.lambda_buy = o.lambda_buy;
      rec.lambda_peer = o.lambda_peer;
      rec.raw_rewards = o.raw_rewards;
      rec.shaped_rewards = o.shaped_rewards;
      const bool scored = o.verdict.scored();
      if (scored) {
        rec.scores = o.verdict.scores();
        for (std::size_t k = 0; k < n_agents; ++k) batch[k].push_back(std::move(o.transitions[k]));
        ++pending;
      } else {
        rec.invalid = o.verdict.invalid();
        ++rep.discarded;
      }
      rec.ledger = std::move(o.ledger);
      rep.episodes.push_back(std::move(rec));

      recent_discards.push_back(!scored);
      recent_count += scored ? 0 : 1;
      if (static_cast<int>(recent_discards.size()) > cfg.discard_window) {
        recent_count -= recent_discards.front() ? 1 : 0;
        recent_discards.pop_front();
      }
      if (static_cast<double>(recent_count) > cfg.max_discard_fraction * cfg.discard_window)
        throw CriticOutageError("critic outage: " + std::to_string(recent_count) + " of the last " +
                                std::to_string(recent_discards.size()) + " episodes were discarded");
    }
    t += block;

    if (pending == cfg.ppo.batch_episodes) {
      UpdateRecord ur;
      ur.after_episode = t;
      for (std::size_t k = 0; k < n_agents; ++k) {
        auto rng = stream_rng(cfg.seed, kUpdateStream, static_cast<std::uint64_t>(update_index) * 1024 + k);
        rep.batch_samples += static_cast<std::int64_t>(batch[k].size());
        ur.per_agent.push_back(ppo_update(rep.policies[k], std::move(batch[k]), cfg.ppo, rng));
        batch[k].clear();
      }
      rep.updates.push_back(std::move(ur));
      pending = 0;
      ++update_index;
    }
    if (cfg.save_every > 0 && t / cfg.save_every > (t - block) / cfg.save_every) {
      char name[64];
      std::snprintf(name, sizeof name, "episode_%08lld.ckpt", static_cast<long long>(t - t % cfg.save_every));
      save(name);
    }
    if (hooks.on_progress) hooks.on_progress(t, rep);
  }

  if (!rep.episodes.empty()) {
    const auto all = kpi_samples(rep.episodes);
    const std::size_t w = static_cast<std::size_t>(cfg.kpi_window);
    rep.final_kpis = compute_kpis(std::span(all).last(std::min(w, all.size())), cfg.env);
    for (std::size_t start = 0; start + w <= all.size(); start += w)
      rep.kpi_series.push_back(compute_kpis(std::span(all).subspan(start, w), cfg.env));
  }
  save("final.ckpt");
  return rep;
}

/// Greedy rollouts with fixed policies; no learning.
inline TrainingReport run_evaluation(const TrainingConfig& cfg_in, Critic& critic, std::vector<PolicyParams> policies,
                                     std::int64_t episodes) {
  TrainingConfig cfg = cfg_in;
  cfg.schedule.total_episodes = std::max<std::int64_t>(cfg.total_episodes, 1);
  TrainingReport rep;
  rep.policies = std::move(policies);
  const std::int64_t t_eval = cfg.schedule.total_episodes;  // both lambdas saturated
  auto outcomes = detail::collect(rep.policies, cfg, critic, 0, episodes, /*greedy=*/true);
  for (auto& o : outcomes) {
    EpisodeRecord rec;
    rec.t = o.t;
    rec.raw_rewards = o.raw_rewards;
    rec.lambda_buy = lambda_buy(t_eval, cfg.schedule);
    rec.lambda_peer = lambda_peer(t_eval, cfg.schedule);
    if (o.verdict.scored()) rec.scores = o.verdict.scores();
    else {
      rec.invalid = o.verdict.invalid();
      ++rep.discarded;
    }
    rec.ledger = std::move(o.ledger);
    rep.episodes.push_back(std::move(rec));
  }
  if (!rep.episodes.empty()) {
    const auto all = kpi_samples(rep.episodes);
    rep.final_kpis = compute_kpis(all, cfg.env);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationComparison {
  double delta_ftb = 0.0;          // shaped - ablated
  double delta_fbs = 0.0;
  double delta_fulfillment = 0.0;
  double delta_profit_gap = 0.0;   // shaped gap - ablated gap (negative is better)
};

inline AblationComparison compare_runs(const KpiReport& shaped, const KpiReport& ablated) {
  return {shaped.mean_ftb - ablated.mean_ftb, shaped.mean_fbs - ablated.mean_fbs,
          shaped.full_demand_episode_frac - ablated.full_demand_episode_frac,
          shaped.seller_profit_gap - ablated.seller_profit_gap};
}

inline nlohmann::json to_json(const AblationComparison& c) {
  return {{"delta_ftb", c.delta_ftb},
          {"delta_fbs", c.delta_fbs},
          {"delta_fulfillment", c.delta_fulfillment},
          {"delta_seller_profit_gap", c.delta_profit_gap}};
}

struct AblationReport {
  TrainingReport shaped;
  TrainingReport ablated;
  AblationComparison comparison;
};

inline AblationReport run_ablation(const TrainingConfig& cfg, Critic& critic, const RunHooks& shaped_hooks = {},
                                   const RunHooks& ablated_hooks = {}) {
  TrainingConfig on = cfg;
  on.schedule.enabled = true;
  TrainingConfig off = cfg;
  off.schedule.enabled = false;
  AblationReport r;
  r.shaped = run_training(on, critic, std::nullopt, shaped_hooks);
  r.ablated = run_training(off, critic, std::nullopt, ablated_hooks);
  if (r.shaped.final_kpis && r.ablated.final_kpis) r.comparison = compare_runs(*r.shaped.final_kpis, *r.ablated.final_kpis);
  return r;
}

// ---------------------------------------------------------------------------
// Output files

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Per-episode rows. Shaped rewards and fairness scores are empty for
/// discarded episodes.
inline void write_metrics_csv(const std::string& path, const TrainingReport& rep, const EnvConfig& env) {
  using detail::num;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int na = env.n_agents();
  os << "t,lambda_buy,lambda_peer";
  for (int k = 0; k < na; ++k) os << ",raw_" << agent_label(env, k);
  for (int k = 0; k < na; ++k) os << ",shaped_" << agent_label(env, k);
  for (int j = 0; j < env.n_buyers; ++j) os << ",ftb_B" << j + 1;
  os << ",fbs,d_unsat,discarded";
  for (int i = 0; i < env.n_sellers; ++i) os << ",price_S" << i + 1 << ",offered_S" << i + 1 << ",sold_S" << i + 1;
  for (int j = 0; j < env.n_buyers; ++j) os << ",demand_B" << j + 1 << ",purchased_B" << j + 1 << ",spend_B" << j + 1;
  os << "\n";
  for (const auto& r : rep.episodes) {
    os << r.t << ',' << num(r.lambda_buy) << ',' << num(r.lambda_peer);
    for (double v : r.raw_rewards) os << ',' << num(v);
    for (int k = 0; k < na; ++k) os << ',' << (r.shaped_rewards ? num((*r.shaped_rewards)[static_cast<std::size_t>(k)]) : "");
    for (int j = 0; j < env.n_buyers; ++j) os << ',' << (r.scores ? num(r.scores->ftb[static_cast<std::size_t>(j)]) : "");
    os << ',' << (r.scores ? num(r.scores->fbs) : "") << ',' << r.ledger.total_unmet << ',' << (r.scores ? 0 : 1);
    for (int i = 0; i < env.n_sellers; ++i) {
      const auto k = static_cast<std::size_t>(i);
      os << ',' << r.ledger.offers[k].price << ',' << r.ledger.offers[k].quantity << ',' << r.ledger.sold_per_seller[k];
    }
    for (int j = 0; j < env.n_buyers; ++j) {
      const auto k = static_cast<std::size_t>(j);
      os << ',' << r.ledger.initial_demand[k] << ',' << r.ledger.purchased_per_buyer[k] << ','
         << num(r.ledger.spend_per_buyer[k]);
    }
    os << "\n";
  }
}

/// Trailing moving averages over `window` episodes.
inline void write_curves_csv(const std::string& path, const TrainingReport& rep, const EnvConfig& env, int window) {
  using detail::num;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const auto na = static_cast<std::size_t>(env.n_agents());
  os << "t,lambda_buy,lambda_peer";
  for (std::size_t k = 0; k < na; ++k) os << ",ma_raw_" << agent_label(env, static_cast<int>(k));
  for (std::size_t k = 0; k < na; ++k) os << ",ma_shaped_" << agent_label(env, static_cast<int>(k));
  os << ",ma_ftb,ma_fbs,ma_full_demand\n";

  std::vector<double> raw(na, 0.0), shaped(na, 0.0);
  double ftb = 0, fbs = 0, full = 0;
  std::int64_t scored = 0;
  const auto& eps = rep.episodes;
  auto add = [&](const EpisodeRecord& r, double sign) {
    for (std::size_t k = 0; k < na; ++k) raw[k] += sign * r.raw_rewards[k];
    if (r.scores) {
      for (std::size_t k = 0; k < na; ++k) shaped[k] += sign * (*r.shaped_rewards)[k];
      ftb += sign * r.scores->mean_ftb();
      fbs += sign * r.scores->fbs;
      scored += sign > 0 ? 1 : -1;
    }
    full += sign * (r.ledger.total_unmet == 0 ? 1.0 : 0.0);
  };
  for (std::size_t e = 0; e < eps.size(); ++e) {
    add(eps[e], 1.0);
    if (e >= static_cast<std::size_t>(window)) add(eps[e - static_cast<std::size_t>(window)], -1.0);
    const double n = static_cast<double>(std::min<std::size_t>(e + 1, static_cast<std::size_t>(window)));
    os << eps[e].t << ',' << num(eps[e].lambda_buy) << ',' << num(eps[e].lambda_peer);
    for (double v : raw) os << ',' << num(v / n);
    for (double v : shaped) os << ',' << (scored > 0 ? num(v / static_cast<double>(scored)) : "");
    os << ',' << (scored > 0 ? num(ftb / static_cast<double>(scored)) : "") << ','
       << (scored > 0 ? num(fbs / static_cast<double>(scored)) : "") << ',' << num(full / n) << "\n";
  }
}

inline nlohmann::json report_summary(const TrainingReport& rep) {
  // Top level is the final-window report; extras ride along.
  nlohmann::json j = rep.final_kpis ? to_json(*rep.final_kpis) : nlohmann::json::object();
  j["series"] = nlohmann::json::array();
  for (const auto& k : rep.kpi_series) j["series"].push_back(to_json(k));
  j["discarded_total"] = rep.discarded;
  j["episodes_total"] = static_cast<std::int64_t>(rep.episodes.size());
  j["updates"] = static_cast<std::int64_t>(rep.updates.size());
  j["checkpoints"] = rep.checkpoint_paths;
  return j;
}

inline void write_run_outputs(const std::string& dir, const TrainingReport& rep, const TrainingConfig& cfg) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_metrics_csv((d / "metrics.csv").string(), rep, cfg.env);
  write_curves_csv((d / "curves.csv").string(), rep, cfg.env, cfg.reward_ma_window);
  std::ofstream((d / "kpi.json").string()) << report_summary(rep).dump(2) << "\n";
}

}  // namespace fairmarket
