// Command-line front end: train, attack, lipschitz, sweep, report.
// Exit codes: 0 success, 2 validation error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "liprobust/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace liprobust;

namespace {

json read_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError("malformed config " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void check_keys(const json& j, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) ==
        known.end()) {
      throw ValidationError("unknown config key: " + key);
    }
  }
}

// Policy paths are relative to the config file.
GaussianPolicy load_policy(const json& j, const fs::path& config_path) {
  if (!j.contains("policy")) throw ValidationError("config needs a policy path");
  fs::path p = j["policy"].get<std::string>();
  if (p.is_relative()) p = config_path.parent_path() / p;
  return gaussian_policy_from_json(read_config(p));
}

template <class T>
T get(const json& j, const char* key, T fallback) {
  try {
    return j.value(key, fallback);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed value for ") + key + ": " + e.what());
  }
}

void run_train(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed) {
  const json j = read_config(config_path);
  check_keys(j, {"task", "architecture", "gamma", "widths", "ppo", "eval_episodes", "eval_seed"});
  const std::string task = get<std::string>(j, "task", "pendulum");
  const auto env = make_environment(task);
  const Architecture arch = architecture_from_string(get<std::string>(j, "architecture", "plain"));
  std::optional<double> gamma;
  if (j.contains("gamma") && !j["gamma"].is_null()) gamma = get<double>(j, "gamma", 0.0);
  const auto widths = get<std::vector<int>>(
      j, "widths", default_widths(arch, env->state_dim(), env->action_dim()));
  PPOConfig ppo = ppo_config_from_json(get<json>(j, "ppo", json::object()));
  if (seed) ppo.seed = *seed;
  ppo.validate();

  fs::create_directories(out);
  TrainOutputs outputs;
  outputs.metrics_path = (out / "metrics.jsonl").string();
  outputs.checkpoint_dir = (out / "checkpoints").string();
  outputs.on_metrics = [](const json& m) {
    std::cerr << "update " << m["update"] << " step " << m["step"] << " mean_reward "
              << m["mean_reward"] << '\n';
  };
  const TrainResult r = train(*env, build_policy(arch, widths, gamma, ppo.seed), ppo, outputs);
  write_json(out / "policy.json", to_json(r.policy));
  const int episodes = get<int>(j, "eval_episodes", 128);
  const EvalResult e = evaluate(*env, r.policy.mean, episodes,
                                get<std::uint64_t>(j, "eval_seed", 1'000'003), ppo.discount);
  write_json(out / "eval.json", {{"mean_return", e.mean_return},
                                 {"mean_total_reward", e.mean_total_reward},
                                 {"stabilized", e.stabilized},
                                 {"episodes", episodes},
                                 {"certified_bound", certified_upper_bound(r.policy.mean)},
                                 {"env_steps", r.env_steps},
                                 {"ppo", to_json(ppo)}});
  std::cout << "mean_return " << e.mean_return << " stabilized " << e.stabilized << '\n';
}

void run_attack_cmd(const fs::path& config_path, const fs::path& out,
                    std::optional<std::uint64_t> seed) {
  const json j = read_config(config_path);
  check_keys(j, {"task", "policy", "attack", "episodes", "eval_seed", "discount"});
  const auto env = make_environment(get<std::string>(j, "task", "pendulum"));
  const GaussianPolicy policy = load_policy(j, config_path);
  AttackSpec spec = attack_spec_from_json(get<json>(j, "attack", json::object()));
  if (seed) spec.seed = *seed;
  const int episodes = get<int>(j, "episodes", 128);
  if (episodes < 1) throw ValidationError("episodes must be positive");
  const Tensor x0 =
      sample_initial_states(*env, episodes, get<std::uint64_t>(j, "eval_seed", 1'000'003));
  const AttackResult r = run_attack(*env, policy.mean, x0, spec, get<double>(j, "discount", 0.99));
  fs::create_directories(out);
  write_trajectory_csv((out / "trajectory.csv").string(), r.trajectory, 0);
  write_json(out / "attack.json", r.to_json("trajectory.csv"));
  std::cout << "nominal " << r.nominal_return.mean() << " attacked " << r.attacked_return.mean()
            << '\n';
}

void run_lipschitz(const fs::path& config_path, const fs::path& out,
                   std::optional<std::uint64_t> seed) {
  const json j = read_config(config_path);
  check_keys(j, {"task", "policy", "options", "local", "local_resolution"});
  const std::string task = get<std::string>(j, "task", "pendulum");
  const GaussianPolicy policy = load_policy(j, config_path);
  LipschitzOptions o = lipschitz_options_from_json(get<json>(j, "options", json::object()));
  LipschitzOptions local =
      lipschitz_options_from_json(get<json>(j, "local", json::object()), local_grid_defaults());
  if (seed) o.seed = local.seed = *seed;
  const int res = get<int>(j, "local_resolution", 0);
  if (res < 0) throw ValidationError("local_resolution must be >= 0");
  const DomainBox domain = task_domain(task);
  const LipEstimate e = empirical_lower_bound(policy.mean, domain, o);
  fs::create_directories(out);
  write_json(out / "lipschitz.json", e.to_json());
  if (res > 0) {
    const LocalLipschitzGrid grid = local_lipschitz_grid(policy.mean, domain, res, res, local);
    grid.write_csv((out / "local_lipschitz.csv").string());
    write_json(out / "local_lipschitz.json", grid.sidecar());
  }
  std::cout << "lower_bound " << e.lower_bound << " certified "
            << certified_upper_bound(policy.mean) << '\n';
}

ExperimentConfig sweep_config(const fs::path& config_path, std::optional<std::uint64_t> seed) {
  ExperimentConfig c = load_experiment_config(config_path);
  if (seed) c.seeds = {*seed};
  c.validate();
  return c;
}

void print_report(const ReportSummary& r) {
  for (const std::string& m : r.missing) std::cerr << "missing cell " << m << '\n';
  std::cout << "wrote " << r.files.size() << " report files\n";
}

void run_sweep(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed) {
  const ExperimentConfig c = sweep_config(config_path, seed);
  const ExperimentSummary s = run_experiment(c, out, [](const ExperimentProgress& p) {
    std::cerr << (p.reused ? "reused " : "finished ") << p.cell << " (" << p.seconds << " s)\n";
  });
  std::cout << "trained " << s.trained.size() << " reused " << s.reused.size() << '\n';
  print_report(make_reports(out, c));
}

void run_report(const std::string& config_path, const fs::path& out,
                std::optional<std::uint64_t> seed) {
  if (config_path.empty()) {
    if (seed) {
      ExperimentConfig c = load_experiment_config(out / "config.json");
      c.seeds = {*seed};
      print_report(make_reports(out, c));
    } else {
      print_report(make_reports(out));
    }
    return;
  }
  print_report(make_reports(out, sweep_config(config_path, seed)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lipschitz-bounded policy training and robustness evaluation"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config, "JSON config file");
    if (config_required) opt->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "seed override");
  };
  auto* train_cmd = app.add_subcommand("train", "train one policy with PPO");
  auto* attack_cmd = app.add_subcommand("attack", "attack a trained policy");
  auto* lip_cmd = app.add_subcommand("lipschitz", "estimate a policy's Lipschitz lower bound");
  auto* sweep_cmd = app.add_subcommand("sweep", "run an experiment sweep and its reports");
  auto* report_cmd = app.add_subcommand("report", "regenerate reports for a sweep directory");
  for (auto* s : {train_cmd, attack_cmd, lip_cmd, sweep_cmd}) add_common(s, true);
  add_common(report_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) run_train(config, out, seed);
    if (*attack_cmd) run_attack_cmd(config, out, seed);
    if (*lip_cmd) run_lipschitz(config, out, seed);
    if (*sweep_cmd) run_sweep(config, out, seed);
    if (*report_cmd) run_report(config, out, seed);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
