#pragma once

// Independent PPO: each agent owns an actor (one categorical head per action
// component) and a separate value network, trained only on its own samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairmarket/env.hpp"
#include "fairmarket/mlp.hpp"

namespace fairmarket {

/// Raised when the network produces non-finite values; the run cannot continue.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AgentRole : std::uint32_t { Seller = 0, Buyer = 1 };

inline constexpr int kFractionBins = 11;  // 0.0, 0.1, ..., 1.0

struct NetworkConfig {
  std::vector<int> hidden{64, 64};
};

struct PpoHyperparams {
  double clip_epsilon = 0.2;
  double learning_rate = 3e-4;
  int epochs_per_update = 4;
  int minibatch_size = 64;
  int batch_episodes = 256;
  double value_loss_coef = 0.5;
  double entropy_coef = 0.01;
  double gamma = 0.95;  // single-decision episodes: kept for config compatibility
  bool normalize_advantages = true;

  void validate() const {
    if (!(clip_epsilon > 0)) throw ConfigError("ppo.clip_epsilon must be > 0");
    if (!(learning_rate > 0)) throw ConfigError("ppo.learning_rate must be > 0");
    if (epochs_per_update < 1 || minibatch_size < 1 || batch_episodes < 1)
      throw ConfigError("ppo: epochs, minibatch_size and batch_episodes must be >= 1");
    if (!(value_loss_coef >= 0) || !(entropy_coef >= 0) || !(gamma >= 0) || gamma > 1)
      throw ConfigError("ppo: coefficients must be >= 0 and gamma in [0,1]");
  }
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

struct PolicyParams {
  AgentRole role = AgentRole::Seller;
  int obs_dim = 0;
  std::vector<int> head_sizes;
  Mlp<double> actor;
  Mlp<double> critic;
  AdamState actor_opt;
  AdamState critic_opt;

  std::size_t param_count() const { return actor.param_count() + critic.param_count(); }
};

struct PolicyShape {
  int obs_dim;
  std::vector<int> head_sizes;
};

/// Seller: price category + quantity-fraction bin. Buyer: one fraction bin per seller.
inline PolicyShape policy_shape(AgentRole role, const EnvConfig& cfg) {
  if (role == AgentRole::Seller) return {seller_observation_size(cfg), {cfg.n_prices(), kFractionBins}};
  return {buyer_observation_size(cfg), std::vector<int>(static_cast<std::size_t>(cfg.n_sellers), kFractionBins)};
}

inline PolicyParams policy_init(AgentRole role, int obs_dim, std::vector<int> head_sizes, const NetworkConfig& net,
                                std::uint64_t seed) {
  if (obs_dim < 1) throw std::invalid_argument("policy_init: observation size must be >= 1");
  if (head_sizes.empty()) throw std::invalid_argument("policy_init: need at least one action head");
  for (int h : head_sizes)
    if (h < 1) throw std::invalid_argument("policy_init: head sizes must be >= 1");
  for (int h : net.hidden)
    if (h < 1) throw std::invalid_argument("policy_init: hidden sizes must be >= 1");

  PolicyParams p;
  p.role = role;
  p.obs_dim = obs_dim;
  p.head_sizes = std::move(head_sizes);
  std::vector<int> actor_sizes{obs_dim};
  actor_sizes.insert(actor_sizes.end(), net.hidden.begin(), net.hidden.end());
  std::vector<int> critic_sizes = actor_sizes;
  actor_sizes.push_back(std::accumulate(p.head_sizes.begin(), p.head_sizes.end(), 0));
  critic_sizes.push_back(1);
  p.actor = Mlp<double>(actor_sizes);
  p.critic = Mlp<double>(critic_sizes);

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  p.actor.init_orthogonal(rng, std::sqrt(2.0), 0.01);
  p.critic.init_orthogonal(rng, std::sqrt(2.0), 0.1);
  p.actor_opt = {std::vector<double>(p.actor.param_count()), std::vector<double>(p.actor.param_count()), 0};
  p.critic_opt = {std::vector<double>(p.critic.param_count()), std::vector<double>(p.critic.param_count()), 0};
  return p;
}

inline PolicyParams policy_init(AgentRole role, const EnvConfig& cfg, const NetworkConfig& net, std::uint64_t seed) {
  auto shape = policy_shape(role, cfg);
  return policy_init(role, shape.obs_dim, std::move(shape.head_sizes), net, seed);
}

// ---------------------------------------------------------------------------
// Forward pass and action selection

struct HeadOutput {
  std::vector<std::vector<double>> log_probs;  // per head, log-softmax of logits
  double value = 0.0;
};

namespace detail {

inline std::vector<double> log_softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - lse;
  return out;
}

inline void check_obs(const PolicyParams& p, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != p.obs_dim)
    throw ContractViolation("policy: observation has " + std::to_string(obs.size()) + " entries, expected " +
                            std::to_string(p.obs_dim));
}

}  // namespace detail

inline HeadOutput policy_forward(const PolicyParams& p, std::span<const double> obs) {
  detail::check_obs(p, obs);
  const auto logits = p.actor.forward(obs);
  HeadOutput out;
  std::size_t off = 0;
  for (int h : p.head_sizes) {
    std::span<const double> z(logits.data() + off, static_cast<std::size_t>(h));
    for (double v : z)
      if (!std::isfinite(v)) throw DivergenceError("policy produced a non-finite logit");
    out.log_probs.push_back(detail::log_softmax(z));
    off += static_cast<std::size_t>(h);
  }
  out.value = p.critic.forward(obs)[0];
  if (!std::isfinite(out.value)) throw DivergenceError("value network produced a non-finite estimate");
  return out;
}

struct ActionSample {
  std::vector<int> choices;  // one category per head
  double log_prob = 0.0;
  double value_estimate = 0.0;
};

template <class Rng>
ActionSample act(const PolicyParams& p, std::span<const double> obs, Rng& rng) {
  const HeadOutput out = policy_forward(p, obs);
  ActionSample a;
  a.value_estimate = out.value;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& lp : out.log_probs) {
    const double u = unif(rng);
    double c = 0;
    int pick = static_cast<int>(lp.size()) - 1;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      c += std::exp(lp[k]);
      if (u < c) {
        pick = static_cast<int>(k);
        break;
      }
    }
    a.choices.push_back(pick);
    a.log_prob += lp[static_cast<std::size_t>(pick)];
  }
  return a;
}

/// Greedy (argmax per head) action; no randomness.
inline ActionSample evaluate_policy(const PolicyParams& p, std::span<const double> obs) {
  const HeadOutput out = policy_forward(p, obs);
  ActionSample a;
  a.value_estimate = out.value;
  for (const auto& lp : out.log_probs) {
    const auto k = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    a.choices.push_back(static_cast<int>(k));
    a.log_prob += lp[k];
  }
  return a;
}

/// Log-probability of a given joint action under the current policy.
inline double action_log_prob(const PolicyParams& p, std::span<const double> obs, std::span<const int> choices) {
  const HeadOutput out = policy_forward(p, obs);
  double lp = 0;
  for (std::size_t h = 0; h < out.log_probs.size(); ++h) lp += out.log_probs[h][static_cast<std::size_t>(choices[h])];
  return lp;
}

inline Offer seller_offer_from_action(const ActionSample& a, int inventory, const EnvConfig& cfg) {
  const double frac = a.choices[1] / static_cast<double>(kFractionBins - 1);
  const int q = static_cast<int>(std::lround(frac * inventory));
  return Offer{cfg.price_min + a.choices[0], std::clamp(q, 0, inventory)};
}

inline std::vector<double> buyer_fractions_from_action(const ActionSample& a) {
  std::vector<double> f;
  f.reserve(a.choices.size());
  for (int c : a.choices) f.push_back(c / static_cast<double>(kFractionBins - 1));
  return f;
}

// ---------------------------------------------------------------------------
// Loss and gradient

struct Transition {
  std::vector<double> obs;
  std::vector<int> action;
  double log_prob_old = 0.0;
  double shaped_return = 0.0;
  double value_old = 0.0;
  double advantage = 0.0;  // filled by ppo_update before the epochs
};

/// min(rA, clip(r, 1-eps, 1+eps)A)
inline double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

struct LossParts {
  double total = 0.0;
  double policy = 0.0;   // -mean clipped surrogate
  double value = 0.0;    // mean squared error
  double entropy = 0.0;  // mean summed head entropy
  double clip_fraction = 0.0;
};

/// Mean PPO loss over `batch`. When `grad` is non-empty it receives the
/// gradient w.r.t. [actor params, critic params] (overwritten, not accumulated).
inline LossParts ppo_loss(const PolicyParams& p, std::span<const Transition> batch, const PpoHyperparams& hp,
                          std::span<double> grad = {}) {
  const bool want_grad = !grad.empty();
  if (want_grad) {
    if (grad.size() != p.param_count()) throw std::invalid_argument("ppo_loss: gradient buffer size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  std::span<double> g_actor = want_grad ? grad.first(p.actor.param_count()) : std::span<double>{};
  std::span<double> g_critic = want_grad ? grad.subspan(p.actor.param_count()) : std::span<double>{};

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double eps = hp.clip_epsilon;
  LossParts L;
  Mlp<double>::Cache actor_cache;
  Mlp<double>::Cache critic_cache;
  int clipped = 0;
  for (const Transition& t : batch) {
    detail::check_obs(p, t.obs);
    const auto logits = p.actor.forward(t.obs, want_grad ? &actor_cache : nullptr);
    std::vector<std::vector<double>> lps;
    std::vector<double> head_entropy;
    double logp = 0;
    double entropy = 0;
    std::size_t off = 0;
    for (std::size_t h = 0; h < p.head_sizes.size(); ++h) {
      const auto n = static_cast<std::size_t>(p.head_sizes[h]);
      auto lp = detail::log_softmax(std::span<const double>(logits.data() + off, n));
      double H = 0;
      for (double v : lp) H -= std::exp(v) * v;
      head_entropy.push_back(H);
      entropy += H;
      logp += lp[static_cast<std::size_t>(t.action[h])];
      lps.push_back(std::move(lp));
      off += n;
    }
    const double ratio = std::exp(logp - t.log_prob_old);
    const double A = t.advantage;
    const double surr1 = ratio * A;
    const double surr2 = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * A;
    L.policy -= std::min(surr1, surr2) * inv_n;
    L.entropy += entropy * inv_n;
    if (std::abs(ratio - 1.0) > eps) ++clipped;

    const double V = p.critic.forward(t.obs, want_grad ? &critic_cache : nullptr)[0];
    const double err = V - t.shaped_return;
    L.value += err * err * inv_n;

    if (want_grad) {
      // d(-min(surr1, surr2))/dlogp; zero when the clipped branch is active.
      const double dlogp = surr1 <= surr2 ? -ratio * A * inv_n : 0.0;
      std::vector<double> dlogits(logits.size());
      off = 0;
      for (std::size_t h = 0; h < p.head_sizes.size(); ++h) {
        const auto& lp = lps[h];
        for (std::size_t k = 0; k < lp.size(); ++k) {
          const double pk = std::exp(lp[k]);
          const double onehot = static_cast<int>(k) == t.action[h] ? 1.0 : 0.0;
          const double dH = -pk * (lp[k] + head_entropy[h]);
          dlogits[off + k] = dlogp * (onehot - pk) - hp.entropy_coef * inv_n * dH;
        }
        off += lp.size();
      }
      p.actor.backward(actor_cache, dlogits, g_actor);
      const double dV = 2.0 * hp.value_loss_coef * err * inv_n;
      p.critic.backward(critic_cache, std::span<const double>(&dV, 1), g_critic);
    }
  }
  L.clip_fraction = static_cast<double>(clipped) * inv_n;
  L.total = L.policy + hp.value_loss_coef * L.value - hp.entropy_coef * L.entropy;
  return L;
}

inline std::vector<double> flat_params(const PolicyParams& p) {
  std::vector<double> v(p.actor.params().begin(), p.actor.params().end());
  v.insert(v.end(), p.critic.params().begin(), p.critic.params().end());
  return v;
}

inline void set_flat_params(PolicyParams& p, std::span<const double> v) {
  if (v.size() != p.param_count()) throw std::invalid_argument("set_flat_params: size mismatch");
  std::copy_n(v.begin(), p.actor.param_count(), p.actor.params().begin());
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(p.actor.param_count()), v.end(), p.critic.params().begin());
}

inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& s, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++s.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.m[k] = b1 * s.m[k] + (1 - b1) * grad[k];
    s.v[k] = b2 * s.v[k] + (1 - b2) * grad[k] * grad[k];
    params[k] -= lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + eps);
  }
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
};

/// One PPO update for a single agent from that agent's own transitions.
template <class Rng>
UpdateStats ppo_update(PolicyParams& p, std::vector<Transition> batch, const PpoHyperparams& hp, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("ppo_update: empty batch");
  // One decision per episode: the return is the shaped terminal reward, so
  // the advantage is just return minus the stored baseline.
  for (auto& t : batch) t.advantage = t.shaped_return - t.value_old;
  if (hp.normalize_advantages && batch.size() > 1) {
    double mean = 0;
    for (const auto& t : batch) mean += t.advantage;
    mean /= static_cast<double>(batch.size());
    double var = 0;
    for (const auto& t : batch) var += (t.advantage - mean) * (t.advantage - mean);
    const double sd = std::sqrt(var / static_cast<double>(batch.size()));
    for (auto& t : batch) t.advantage = (t.advantage - mean) / (sd + 1e-8);
  }

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(p.param_count());
  std::vector<Transition> mb;
  UpdateStats st;
  for (int epoch = 0; epoch < hp.epochs_per_update; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.minibatch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.minibatch_size));
      mb.clear();
      for (std::size_t k = start; k < end; ++k) mb.push_back(batch[order[k]]);
      const LossParts L = ppo_loss(p, mb, hp, grad);
      if (!std::isfinite(L.total))
        throw DivergenceError("ppo_update: non-finite loss (policy=" + std::to_string(L.policy) +
                              ", value=" + std::to_string(L.value) + ", entropy=" + std::to_string(L.entropy) + ")");
      adam_step(p.actor.params(), std::span<const double>(grad).first(p.actor.param_count()), p.actor_opt,
                hp.learning_rate);
      adam_step(p.critic.params(), std::span<const double>(grad).subspan(p.actor.param_count()), p.critic_opt,
                hp.learning_rate);
      st.policy_loss += L.policy;
      st.value_loss += L.value;
      st.entropy += L.entropy;
      st.clip_fraction += L.clip_fraction;
      ++st.minibatches;
    }
  }
  const double n = st.minibatches;
  st.policy_loss /= n;
  st.value_loss /= n;
  st.entropy /= n;
  st.clip_fraction /= n;
  return st;
}

}  // namespace fairmarket
