#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fairmarket/checkpoint.hpp"
#include "fairmarket/ippo.hpp"

using namespace fairmarket;

namespace {

std::vector<double> random_obs(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> o(static_cast<std::size_t>(n));
  for (auto& v : o) v = u(rng);
  return o;
}

std::vector<Transition> random_batch(const PolicyParams& p, std::mt19937_64& rng, int n, double spread) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-spread, spread);
  std::vector<Transition> b;
  for (int k = 0; k < n; ++k) {
    Transition t;
    t.obs = random_obs(rng, p.obs_dim);
    const auto a = act(p, t.obs, rng);
    t.action = a.choices;
    t.log_prob_old = a.log_prob + jitter(rng);
    t.shaped_return = g(rng);
    t.value_old = a.value_estimate;
    t.advantage = g(rng);
    b.push_back(std::move(t));
  }
  return b;
}

}  // namespace

TEST(PolicyInit, DeterministicPerSeed) {
  const EnvConfig env;
  const auto a = policy_init(AgentRole::Seller, env, NetworkConfig{}, 42);
  const auto b = policy_init(AgentRole::Seller, env, NetworkConfig{}, 42);
  const auto c = policy_init(AgentRole::Seller, env, NetworkConfig{}, 43);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_NE(flat_params(a), flat_params(c));
  EXPECT_THROW(policy_init(AgentRole::Buyer, 0, {11}, NetworkConfig{}, 1), std::invalid_argument);
}

TEST(PolicyInit, NearUniformHeadsAndSmallValues) {
  const EnvConfig env;
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (auto role : {AgentRole::Seller, AgentRole::Buyer}) {
      const auto p = policy_init(role, env, NetworkConfig{}, seed);
      for (int n = 0; n < 1000; ++n) {
        const auto out = policy_forward(p, random_obs(rng, p.obs_dim));
        for (const auto& lp : out.log_probs)
          for (double v : lp) ASSERT_LT(std::exp(v), 0.2);
        ASSERT_LT(std::abs(out.value), 1.0);
      }
    }
  }
}

TEST(Act, LogProbIsProductOfSelectedHeadProbabilities) {
  const EnvConfig env;
  const auto p = policy_init(AgentRole::Buyer, env, NetworkConfig{}, 5);
  std::mt19937_64 rng(6);
  for (int n = 0; n < 500; ++n) {
    const auto obs = random_obs(rng, p.obs_dim);
    const auto a = act(p, obs, rng);
    const auto out = policy_forward(p, obs);
    double prod = 1;
    for (std::size_t h = 0; h < a.choices.size(); ++h) prod *= std::exp(out.log_probs[h][static_cast<std::size_t>(a.choices[h])]);
    ASSERT_NEAR(std::exp(a.log_prob), prod, 1e-9);
    ASSERT_NEAR(a.log_prob, action_log_prob(p, obs, a.choices), 1e-12);
  }
}

TEST(Act, GreedyIsDeterministicAndMaximal) {
  const EnvConfig env;
  const auto p = policy_init(AgentRole::Seller, env, NetworkConfig{}, 8);
  std::mt19937_64 rng(9);
  for (int n = 0; n < 100; ++n) {
    const auto obs = random_obs(rng, p.obs_dim);
    const auto g1 = evaluate_policy(p, obs), g2 = evaluate_policy(p, obs);
    ASSERT_EQ(g1.choices, g2.choices);
    const auto out = policy_forward(p, obs);
    for (std::size_t h = 0; h < out.log_probs.size(); ++h) {
      const auto& lp = out.log_probs[h];
      ASSERT_EQ(g1.choices[h], std::max_element(lp.begin(), lp.end()) - lp.begin());
    }
    for (int k = 0; k < 20; ++k) ASSERT_GE(g1.log_prob, act(p, obs, rng).log_prob);
  }
}

TEST(Act, ActionMapping) {
  EnvConfig env;
  ActionSample a;
  a.choices = {4, 5};
  const Offer o = seller_offer_from_action(a, 10, env);
  EXPECT_EQ(o.price, 5);
  EXPECT_EQ(o.quantity, 5);
  a.choices = {0, 10};
  EXPECT_EQ(seller_offer_from_action(a, 7, env), (Offer{1, 7}));
  a.choices = {0, 3, 10};
  EXPECT_EQ(buyer_fractions_from_action(a), (std::vector<double>{0.0, 0.3, 1.0}));
}

TEST(PpoLoss, RatioOneMeansUnclippedMeanAdvantage) {
  const EnvConfig env;
  const auto p = policy_init(AgentRole::Buyer, env, NetworkConfig{}, 1);
  std::mt19937_64 rng(2);
  auto batch = random_batch(p, rng, 32, 0.0);
  double mean_a = 0;
  for (auto& t : batch) {
    t.log_prob_old = action_log_prob(p, t.obs, t.action);
    mean_a += t.advantage / 32.0;
  }
  const auto L = ppo_loss(p, batch, PpoHyperparams{});
  EXPECT_NEAR(L.policy, -mean_a, 1e-12);
  EXPECT_EQ(L.clip_fraction, 0.0);
  EXPECT_GE(L.entropy, 0.0);
}

TEST(PpoLoss, ClippedSurrogateBound) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> r(0.0, 5.0), a(-10.0, 10.0);
  for (int n = 0; n < 100000; ++n) {
    const double ratio = r(rng), adv = a(rng);
    ASSERT_LE(clipped_surrogate(ratio, adv, 0.2), 1.2 * std::abs(adv) + 1e-12);
  }
}

// Central differences on small random networks, 64-bit.
TEST(PpoLoss, AnalyticGradientMatchesFiniteDifferences) {
  PpoHyperparams hp;
  hp.entropy_coef = 0.05;
  std::mt19937_64 rng(17);
  for (int inst = 0; inst < 20; ++inst) {
    NetworkConfig net;
    net.hidden = {static_cast<int>(2 + rng() % 3), static_cast<int>(2 + rng() % 3)};
    const std::vector<int> heads{static_cast<int>(2 + rng() % 3), static_cast<int>(2 + rng() % 2)};
    auto p = policy_init(AgentRole::Buyer, static_cast<int>(2 + rng() % 3), heads, net, rng());
    const auto batch = random_batch(p, rng, 8, 0.15);

    std::vector<double> grad(p.param_count());
    ppo_loss(p, batch, hp, grad);
    auto theta = flat_params(p);
    const double h = 1e-6;
    double worst = 0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double keep = theta[k];
      theta[k] = keep + h;
      set_flat_params(p, theta);
      const double up = ppo_loss(p, batch, hp).total;
      theta[k] = keep - h;
      set_flat_params(p, theta);
      const double down = ppo_loss(p, batch, hp).total;
      theta[k] = keep;
      const double fd = (up - down) / (2 * h);
      const double rel = std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
      worst = std::max(worst, rel);
    }
    set_flat_params(p, theta);
    EXPECT_LT(worst, 1e-4) << "instance " << inst;
  }
}

TEST(PpoUpdate, IndependentOfOtherAgentsBatches) {
  const EnvConfig env;
  const auto seller0 = policy_init(AgentRole::Seller, env, NetworkConfig{}, 1);
  const auto buyer0 = policy_init(AgentRole::Buyer, env, NetworkConfig{}, 2);
  std::mt19937_64 data(3);
  const auto seller_batch = random_batch(seller0, data, 64, 0.0);
  const auto buyer_batch = random_batch(buyer0, data, 64, 0.0);
  const PpoHyperparams hp;

  auto s1 = seller0, b1 = buyer0;
  std::mt19937_64 r1(10), rb(11);
  ppo_update(b1, buyer_batch, hp, rb);
  ppo_update(s1, seller_batch, hp, r1);

  auto s2 = seller0;
  std::mt19937_64 r2(10);
  ppo_update(s2, seller_batch, hp, r2);
  EXPECT_EQ(flat_params(s1), flat_params(s2));
  EXPECT_NE(flat_params(s1), flat_params(seller0));
}

TEST(PpoUpdate, EmptyBatchRejected) {
  auto p = policy_init(AgentRole::Seller, EnvConfig{}, NetworkConfig{}, 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(ppo_update(p, {}, PpoHyperparams{}, rng), std::invalid_argument);
}

TEST(PpoUpdate, NonFiniteReturnAborts) {
  auto p = policy_init(AgentRole::Seller, EnvConfig{}, NetworkConfig{}, 1);
  std::mt19937_64 rng(1);
  auto batch = random_batch(p, rng, 8, 0.0);
  batch[0].shaped_return = std::nan("");
  EXPECT_THROW(ppo_update(p, batch, PpoHyperparams{}, rng), DivergenceError);
}

// Two-armed bandit: one arm pays 1, the other 0.
double bandit_best_prob(std::uint64_t seed, int updates) {
  const int best = static_cast<int>(seed % 2);
  auto p = policy_init(AgentRole::Seller, 1, {2}, NetworkConfig{}, seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  const std::vector<double> obs{1.0};
  PpoHyperparams hp;
  hp.batch_episodes = 64;
  for (int u = 0; u < updates; ++u) {
    std::vector<Transition> batch;
    for (int k = 0; k < hp.batch_episodes; ++k) {
      const auto a = act(p, obs, rng);
      batch.push_back({obs, a.choices, a.log_prob, a.choices[0] == best ? 1.0 : 0.0, a.value_estimate, 0.0});
    }
    ppo_update(p, std::move(batch), hp, rng);
  }
  return std::exp(policy_forward(p, obs).log_probs[0][static_cast<std::size_t>(best)]);
}

TEST(PpoUpdate, TwoArmedBanditConverges) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) EXPECT_GE(bandit_best_prob(seed, 200), 0.95) << "seed " << seed;
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const EnvConfig env;
  std::vector<PolicyParams> ps{policy_init(AgentRole::Seller, env, NetworkConfig{}, 1),
                               policy_init(AgentRole::Seller, env, NetworkConfig{}, 2),
                               policy_init(AgentRole::Buyer, env, NetworkConfig{{8, 4}}, 3)};
  const auto dir = std::filesystem::temp_directory_path() / "fairmarket_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.ckpt").string();
  save_checkpoint(path, ps);
  const auto back = load_checkpoint(path);
  ASSERT_EQ(back.size(), ps.size());
  for (std::size_t k = 0; k < ps.size(); ++k) {
    EXPECT_EQ(back[k].role, ps[k].role);
    EXPECT_EQ(back[k].obs_dim, ps[k].obs_dim);
    EXPECT_EQ(back[k].head_sizes, ps[k].head_sizes);
    EXPECT_EQ(back[k].actor.sizes(), ps[k].actor.sizes());
    EXPECT_EQ(flat_params(back[k]), flat_params(ps[k]));
  }

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  {
    std::ofstream(path, std::ios::binary) << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), CheckpointError);
  std::filesystem::remove_all(dir);
}
