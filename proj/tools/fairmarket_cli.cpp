// fairmarket: train, evaluate and inspect fairness-shaped IPPO market agents.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairmarket/config.hpp"
#include "fairmarket/llm_client.hpp"
#include "fairmarket/trainer.hpp"

namespace fm = fairmarket;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfigError = 2, kRuntimeAbort = 3 };

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string critic;
  bool no_shaping = false;
  std::optional<std::int64_t> episodes;
  std::string output;
  bool single_thread = false;
  std::string load_checkpoint;
  std::optional<std::int64_t> save_every;
  std::string ledger_path;
};

void add_run_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "Configuration file (JSON); defaults are used when omitted");
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set shaping.w_B=5 (repeatable)");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--critic", o.critic, "Critic backend")->check(CLI::IsMember({"llm", "scripted"}));
  cmd->add_flag("--no-shaping", o.no_shaping, "Disable fairness shaping (lambda = 0)");
  cmd->add_option("--episodes", o.episodes, "Number of episodes")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--single-thread", o.single_thread, "Collect episodes on one thread");
  cmd->add_option("--load-checkpoint", o.load_checkpoint, "Start from (or evaluate) this checkpoint");
  cmd->add_option("--save-every", o.save_every, "Write a checkpoint every N episodes")->check(CLI::NonNegativeNumber);
}

/// File (or defaults) -> overrides -> flags -> validation. Throws ConfigError.
fm::TrainingConfig resolve_config(const Options& o) {
  fm::json j = o.config_path.empty() ? fm::to_json(fm::TrainingConfig{}) : fm::load_json_file(o.config_path);
  for (const auto& ov : o.overrides) fm::apply_override(j, ov);
  if (o.seed) j["seed"] = *o.seed;
  if (!o.critic.empty()) j["critic"]["backend"] = o.critic;
  if (o.no_shaping) j["shaping"]["enabled"] = false;
  if (o.single_thread) j["single_thread"] = true;
  if (o.save_every) j["save_every"] = *o.save_every;
  if (o.episodes) {
    // Shorter runs shrink the reporting windows with them.
    j["total_episodes"] = *o.episodes;
    const std::int64_t n = std::max<std::int64_t>(*o.episodes, 1);
    if (j.value("kpi_window", 2000) > n) j["kpi_window"] = n;
    if (j.value("reward_ma_window", 500) > n) j["reward_ma_window"] = n;
  }
  return fm::training_config_from_json(j);
}

std::unique_ptr<fm::Critic> make_critic(const fm::CriticConfig& c) {
  if (c.backend == fm::CriticBackend::Llm) return std::make_unique<fm::LlmCritic>(c);
  return std::make_unique<fm::ScriptedCritic>();
}

void write_json(const fs::path& p, const fm::json& j) { std::ofstream(p) << j.dump(2) << "\n"; }

fm::RunHooks progress_hooks(const fm::TrainingConfig& cfg, const fs::path& dir, const std::string& tag) {
  fm::RunHooks h;
  h.checkpoint_dir = (dir / "checkpoints").string();
  const std::int64_t step = std::max<std::int64_t>(cfg.total_episodes / 10, 1);
  h.on_progress = [step, tag, next = step](std::int64_t t, const fm::TrainingReport& rep) mutable {
    if (t < next) return;
    while (next <= t) next += step;
    std::fprintf(stderr, "[%s] episode %lld, updates %zu, discarded %lld\n", tag.c_str(), static_cast<long long>(t),
                 rep.updates.size(), static_cast<long long>(rep.discarded));
  };
  return h;
}

void print_kpis(const fm::KpiReport& k) {
  std::printf("  %-32s %10s   %s\n", "metric", "value", "reference target");
  std::printf("  %-32s %10.3f   >= 0.90 (reported 0.921)\n", "full-demand episode fraction", k.full_demand_episode_frac);
  std::printf("  %-32s %10.3f   >= 0.80 (reported 0.88)\n", "mean FTB", k.mean_ftb);
  std::printf("  %-32s %10.3f   >= 0.80 (reported 0.87)\n", "mean FBS", k.mean_fbs);
  std::printf("  %-32s %4.1f-%4.1f%%   20-30%% (reported 24-26%%)\n", "seller margins", 100 * k.margin_lo,
              100 * k.margin_hi);
  std::printf("  %-32s %10.3f   <= 0.60 (reported 0.57)\n", "max seller sales share", k.max_sales_share);
  std::printf("  %-32s %10lld   0\n", "buyer budget violations", static_cast<long long>(k.budget_violations));
  std::printf("  %-32s %10.3f\n", "seller trade-profit gap", k.seller_profit_gap);
  std::printf("  %-32s %10lld\n", "discarded episodes", static_cast<long long>(k.discarded_episode_count));
}

std::optional<std::vector<fm::PolicyParams>> maybe_load(const Options& o) {
  if (o.load_checkpoint.empty()) return std::nullopt;
  return fm::load_checkpoint(o.load_checkpoint);
}

int cmd_config_init(const Options& o) {
  const std::string text = fm::to_json(fm::TrainingConfig{}).dump(2) + "\n";
  if (o.output.empty() || o.output == "-") {
    std::cout << text;
  } else {
    std::ofstream(o.output) << text;
    std::fprintf(stderr, "wrote %s\n", o.output.c_str());
  }
  return kOk;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve_config(o);
  auto initial = maybe_load(o);
  auto critic = make_critic(cfg.critic);
  const fs::path dir = o.output;
  fs::create_directories(dir);
  write_json(dir / "resolved-config.json", fm::to_json(cfg));
  const auto rep = fm::run_training(cfg, *critic, std::move(initial), progress_hooks(cfg, dir, "train"));
  fm::write_run_outputs(dir.string(), rep, cfg);
  std::printf("trained %lld episodes (%zu updates, %lld discarded); outputs in %s\n",
              static_cast<long long>(rep.episodes.size()), rep.updates.size(), static_cast<long long>(rep.discarded),
              dir.string().c_str());
  if (rep.final_kpis) {
    std::printf("final-window KPIs (last %lld episodes):\n", static_cast<long long>(rep.final_kpis->episodes));
    print_kpis(*rep.final_kpis);
  }
  return kOk;
}

int cmd_ablate(const Options& o) {
  const auto cfg = resolve_config(o);
  auto critic = make_critic(cfg.critic);
  const fs::path dir = o.output;
  fs::create_directories(dir);
  write_json(dir / "resolved-config.json", fm::to_json(cfg));
  auto on = cfg;
  on.schedule.enabled = true;
  auto off = cfg;
  off.schedule.enabled = false;
  const auto shaped = fm::run_training(on, *critic, std::nullopt, progress_hooks(on, dir / "shaped", "shaped"));
  fm::write_run_outputs((dir / "shaped").string(), shaped, on);
  write_json(dir / "shaped" / "resolved-config.json", fm::to_json(on));
  const auto ablated = fm::run_training(off, *critic, std::nullopt, progress_hooks(off, dir / "ablation", "ablation"));
  fm::write_run_outputs((dir / "ablation").string(), ablated, off);
  write_json(dir / "ablation" / "resolved-config.json", fm::to_json(off));
  if (!shaped.final_kpis || !ablated.final_kpis) {
    std::printf("no episodes run; nothing to compare\n");
    return kOk;
  }
  const auto cmp = fm::compare_runs(*shaped.final_kpis, *ablated.final_kpis);
  fm::json j = fm::to_json(cmp);
  j["shaped"] = fm::to_json(*shaped.final_kpis);
  j["ablation"] = fm::to_json(*ablated.final_kpis);
  write_json(dir / "comparison.json", j);
  std::printf("shaped run:\n");
  print_kpis(*shaped.final_kpis);
  std::printf("ablation (lambda = 0):\n");
  print_kpis(*ablated.final_kpis);
  std::printf("comparison (shaped - ablation):\n");
  std::printf("  delta FTB              %+.3f\n", cmp.delta_ftb);
  std::printf("  delta FBS              %+.3f\n", cmp.delta_fbs);
  std::printf("  delta fulfillment      %+.3f\n", cmp.delta_fulfillment);
  std::printf("  delta seller-profit gap %+.3f   (ablation gap %.3f; reported ~0.35 without shaping)\n",
              cmp.delta_profit_gap, ablated.final_kpis->seller_profit_gap);
  return kOk;
}

int cmd_evaluate(const Options& o) {
  if (o.load_checkpoint.empty()) throw fm::ConfigError("evaluate requires --load-checkpoint");
  Options eo = o;
  eo.episodes.reset();
  const auto cfg = resolve_config(eo);
  auto critic = make_critic(cfg.critic);
  auto policies = fm::load_checkpoint(o.load_checkpoint);
  const std::int64_t n = o.episodes.value_or(1000);
  auto eval_cfg = cfg;
  eval_cfg.kpi_window = static_cast<int>(std::max<std::int64_t>(n, 1));
  const auto rep = fm::run_evaluation(eval_cfg, *critic, std::move(policies), n);
  const fs::path dir = o.output;
  fs::create_directories(dir);
  write_json(dir / "resolved-config.json", fm::to_json(cfg));
  fm::write_metrics_csv((dir / "metrics.csv").string(), rep, cfg.env);
  write_json(dir / "kpi.json", fm::report_summary(rep));
  std::printf("evaluated %lld greedy episodes\n", static_cast<long long>(n));
  if (rep.final_kpis) print_kpis(*rep.final_kpis);
  return kOk;
}

int cmd_score_episode(const Options& o) {
  const auto cfg = resolve_config(o);
  std::string text;
  if (o.ledger_path.empty() || o.ledger_path == "-") {
    text.assign(std::istreambuf_iterator<char>(std::cin), {});
  } else {
    std::ifstream is(o.ledger_path);
    if (!is) throw fm::ConfigError("cannot read " + o.ledger_path);
    text.assign(std::istreambuf_iterator<char>(is), {});
  }
  const auto ledger = fm::ledger_from_json(fm::parse_json_text(text, "ledger"), cfg.env);
  auto critic = make_critic(cfg.critic);
  std::cout << fm::serialize_prompt(ledger, cfg.env) << "\n";
  const auto v = critic->score(ledger, cfg.env);
  if (v.scored()) std::cout << "verdict: scored " << fm::render_scores(v.scores()) << "\n";
  else std::cout << "verdict: invalid " << fm::to_string(v.invalid().reason) << " (" << v.invalid().detail << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fairness-shaped independent PPO for peer-to-peer market agents"};
  app.require_subcommand(1);
  Options o;

  auto* init = app.add_subcommand("config-init", "Write the default configuration");
  init->add_option("-o,--output", o.output, "Destination file (stdout when omitted)");

  auto* train = app.add_subcommand("train", "Train all agents");
  add_run_flags(train, o);
  train->add_option("--output", o.output, "Run directory")->default_str("run");

  auto* ablate = app.add_subcommand("ablate", "Train with and without fairness shaping and compare");
  add_run_flags(ablate, o);
  ablate->add_option("--output", o.output, "Run directory")->default_str("ablation-run");

  auto* eval = app.add_subcommand("evaluate", "Run greedy episodes from a checkpoint and report KPIs");
  add_run_flags(eval, o);
  eval->add_option("--output", o.output, "Output directory")->default_str("eval");

  auto* score = app.add_subcommand("score-episode", "Print the critic prompt and verdict for a ledger JSON");
  score->add_option("ledger", o.ledger_path, "Ledger JSON file, or - for standard input");
  score->add_option("--config", o.config_path, "Configuration file (JSON)");
  score->add_option("--set", o.overrides, "Override a config value (repeatable)");
  score->add_option("--critic", o.critic, "Critic backend")->check(CLI::IsMember({"llm", "scripted"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (o.output.empty()) {
    if (*train) o.output = "run";
    if (*ablate) o.output = "ablation-run";
    if (*eval) o.output = "eval";
  }

  try {
    if (*init) return cmd_config_init(o);
    if (*train) return cmd_train(o);
    if (*ablate) return cmd_ablate(o);
    if (*eval) return cmd_evaluate(o);
    if (*score) return cmd_score_episode(o);
  } catch (const fm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const fm::CheckpointError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const fm::DivergenceError& e) {
    std::fprintf(stderr, "aborted: %s\n", e.what());
    return kRuntimeAbort;
  } catch (const fm::CriticOutageError& e) {
    std::fprintf(stderr, "aborted: %s\n", e.what());
    return kRuntimeAbort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
  return kOk;
}
