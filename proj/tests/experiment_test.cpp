#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "liprobust/experiment.hpp"

using namespace liprobust;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path(::testing::TempDir()) / name;
  fs::remove_all(d);
  return d;
}

// Small enough to train in well under a second per cell.
json tiny_config() {
  return {{"task", "pendulum"},
          {"architectures", {"plain", "sandwich"}},
          {"gammas", {4}},
          {"widths", {{"plain", {2, 8, 8, 1}}, {"sandwich", {2, 8, 8, 1}}}},
          {"seeds", {0}},
          {"ppo",
           {{"num_envs", 4},
            {"rollout_len", 50},
            {"total_steps", 400},
            {"minibatch", 100},
            {"epochs", 1},
            {"eval_episodes", 4},
            {"eval_every", 2}}},
          {"delays", {0, 2}},
          {"eval_episodes", 6},
          {"attacks",
           {{{"kind", "pgd_step"}, {"epsilons", {0.05, 0.5}}, {"steps", 5}, {"episodes", 2}}}},
          {"estimation",
           {{"global", {{"restarts", 2}, {"iterations", 20}}},
            {"local", {{"restarts", 1}, {"iterations", 5}}},
            {"local_resolution", 3},
            {"contour_resolution", 7}}}};
}

}  // namespace

TEST(SmallestFailing, EveryEpsilonFailsGivesFirstPoint) {
  int calls = 0;
  const auto r = smallest_failing_epsilon(
      [&](double) {
        ++calls;
        return -1000.0;
      },
      {0.1, 0.2, 0.4}, -400.0);
  ASSERT_TRUE(r.epsilon);
  EXPECT_EQ(*r.epsilon, 0.1);
  EXPECT_FALSE(r.non_monotone);
  EXPECT_EQ(calls, 3);
}

TEST(SmallestFailing, NoFailureGivesNone) {
  const auto r = smallest_failing_epsilon([](double) { return -10.0; }, {0.1, 0.2}, -400.0);
  EXPECT_FALSE(r.epsilon);
  EXPECT_EQ(r.evaluations.size(), 2u);
}

TEST(SmallestFailing, BisectionRefinesBracket) {
  auto reward = [](double eps) { return -1000.0 * eps; };
  // First failing grid point 0.6; midpoint 0.45 also fails.
  auto r = smallest_failing_epsilon(reward, {0.1, 0.3, 0.6}, -400.0);
  ASSERT_TRUE(r.epsilon);
  EXPECT_DOUBLE_EQ(*r.epsilon, 0.45);
  EXPECT_EQ(r.evaluations.size(), 4u);
  // Midpoint 0.35 does not fail: the grid point stands.
  r = smallest_failing_epsilon(reward, {0.2, 0.5}, -400.0);
  EXPECT_DOUBLE_EQ(*r.epsilon, 0.5);
}

TEST(SmallestFailing, NonMonotonePatternIsFlagged) {
  const auto r = smallest_failing_epsilon(
      [](double eps) { return eps == 0.2 ? -500.0 : -100.0; }, {0.1, 0.2, 0.3}, -400.0);
  ASSERT_TRUE(r.epsilon);
  EXPECT_EQ(*r.epsilon, 0.2);
  EXPECT_TRUE(r.non_monotone);
  EXPECT_EQ(r.evaluations.size(), 3u);
  EXPECT_THROW(smallest_failing_epsilon([](double) { return 0.0; }, {0.3, 0.1}, -400.0),
               ValidationError);
}

TEST(ExperimentConfig, ModelsCrossGammasWithConstrainedOnly) {
  ExperimentConfig c;
  c.gammas = {3, 4, 6, 8, 12, 16};
  const auto models = c.models();
  ASSERT_EQ(models.size(), 7u);
  EXPECT_EQ(models[0].label(), "plain");
  EXPECT_EQ(models[1].label(), "sandwich_g3");
  EXPECT_EQ(models[6].label(), "sandwich_g16");
  EXPECT_EQ(models[0].widths, (std::vector<int>{2, 32, 32, 32, 32, 1}));
  EXPECT_EQ(models[1].widths, (std::vector<int>{2, 21, 21, 21, 21, 1}));
}

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  const ExperimentConfig c = experiment_config_from_json(tiny_config());
  EXPECT_EQ(to_json(experiment_config_from_json(to_json(c))), to_json(c));
  EXPECT_EQ(c.ppo_config(7).seed, 7u);
  EXPECT_EQ(c.ppo_config(7).num_envs, 4);

  auto bad = [](auto edit) {
    json j = tiny_config();
    edit(j);
    EXPECT_THROW(experiment_config_from_json(j), ValidationError) << j.dump();
  };
  bad([](json& j) { j["bogus"] = 1; });
  bad([](json& j) { j["seeds"] = {1, 1}; });
  bad([](json& j) { j["task"] = "cartpole"; });
  bad([](json& j) { j["architectures"] = {"resnet"}; });
  bad([](json& j) { j["gammas"] = {-1}; });
  bad([](json& j) { j["ppo"]["nope"] = 1; });
  bad([](json& j) { j["attacks"][0]["epsilons"] = {0.5, 0.1}; });
  bad([](json& j) { j["attacks"][0]["models"] = {"sandwich_g9"}; });
  bad([](json& j) { j["attacks"][0]["kind"] = "delay"; });
  bad([](json& j) { j["attacks"][0]["typo"] = 3; });
  bad([](json& j) { j["widths"]["plain"] = {3, 8, 1}; });
  bad([](json& j) { j["eval_episodes"] = "many"; });
  bad([](json& j) { j["estimation"]["global"]["restarts"] = 0; });
}

TEST(RunsCsv, RoundTrip) {
  const fs::path d = fresh_dir("runs_csv");
  fs::create_directories(d);
  const std::vector<RunRecord> runs = {{"none", 0, 0, -1.25, -3.5, true},
                                       {"trajectory_l2", 0.11, 5, -123.456789012345, -400, false}};
  write_runs_csv(d / "runs.csv", runs);
  const auto back = read_runs_csv(d / "runs.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].perturbation, "trajectory_l2");
  EXPECT_EQ(back[1].value, 0.11);
  EXPECT_EQ(back[1].episode, 5);
  EXPECT_EQ(back[1].discounted_return, -123.456789012345);
  EXPECT_TRUE(back[0].stabilized);
  EXPECT_FALSE(back[1].stabilized);
}

TEST(ContentHash, MatchesFnv1a) {
  EXPECT_EQ(content_hash(""), "cbf29ce484222325");
  EXPECT_EQ(content_hash("a"), "af63dc4c8601ec8c");
}

TEST(RunExperiment, SingleCellStructure) {
  json j = tiny_config();
  j["architectures"] = {"sandwich"};
  const ExperimentConfig c = experiment_config_from_json(j);
  const fs::path out = fresh_dir("exp_single");
  const ExperimentSummary s = run_experiment(c, out);
  ASSERT_EQ(s.trained, std::vector<std::string>{"sandwich_g4_s0"});
  const fs::path cell = out / "cells" / "sandwich_g4_s0";
  for (const char* f : {"policy.json", "eval.json", "runs.csv", "metrics.jsonl",
                        "local_lipschitz.csv", "local_lipschitz.json"}) {
    EXPECT_TRUE(fs::exists(cell / f)) << f;
  }
  int checkpoints = 0;
  for (const auto& e : fs::directory_iterator(cell / "checkpoints")) checkpoints += e.is_regular_file();
  EXPECT_GE(checkpoints, 1);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "config.json"));

  // Nominal, both delays and both attack budgets, per episode.
  const auto runs = read_runs_csv(cell / "runs.csv");
  auto count = [&](const std::string& kind) {
    return std::count_if(runs.begin(), runs.end(),
                         [&](const RunRecord& r) { return r.perturbation == kind; });
  };
  EXPECT_EQ(count("none"), 6);
  EXPECT_EQ(count("delay"), 12);
  const json evals = json::parse(slurp(cell / "eval.json"))["attacks"]["pgd_step_l2"]["points"];
  EXPECT_EQ(count("pgd_step_l2"), 2 * static_cast<long>(evals.size()));
  EXPECT_GE(evals.size(), 2u);
  for (const RunRecord& r : runs) {
    if (r.perturbation == "delay" && r.value == 0) {
      const auto nominal = std::find_if(runs.begin(), runs.end(), [&](const RunRecord& n) {
        return n.perturbation == "none" && n.episode == r.episode;
      });
      EXPECT_EQ(nominal->discounted_return, r.discounted_return);
    }
  }

  const json eval = json::parse(slurp(cell / "eval.json"));
  EXPECT_LE(eval["lipschitz"]["lower_bound"].get<double>(), 4.0 * (1 + 1e-6));
  EXPECT_EQ(eval["certified_bound"].get<double>(), 4.0);
  for (const json& p : eval["attacks"]["pgd_step_l2"]["points"]) {
    EXPECT_LE(p["max_norm"].get<double>(), p["epsilon"].get<double>() + 1e-9);
    EXPECT_LE(p["max_output_deviation"].get<double>(), 4.0 * p["epsilon"].get<double>() + 1e-6);
  }

  const ReportSummary rep = make_reports(out);
  EXPECT_TRUE(rep.missing.empty());
  std::ifstream summary(out / "reports" / "summary.csv");
  std::string line;
  int lines = 0;
  while (std::getline(summary, line)) ++lines;
  EXPECT_EQ(lines, 2);  // header + 1 row
}

TEST(RunExperiment, ResumeSkipsCompletedAndRerunsCorrupted) {
  const ExperimentConfig c = experiment_config_from_json(tiny_config());
  const fs::path out = fresh_dir("exp_resume");
  const ExperimentSummary first = run_experiment(c, out);
  EXPECT_EQ(first.trained.size(), 2u);
  const std::string policy = slurp(out / "cells" / "plain_s0" / "policy.json");

  const ExperimentSummary second = run_experiment(c, out);
  EXPECT_TRUE(second.trained.empty());
  EXPECT_EQ(second.reused.size(), 2u);

  {
    std::ofstream f(out / "cells" / "plain_s0" / "runs.csv", std::ios::app);
    f << "garbage\n";
  }
  const ExperimentSummary third = run_experiment(c, out);
  EXPECT_EQ(third.trained, std::vector<std::string>{"plain_s0"});
  EXPECT_EQ(slurp(out / "cells" / "plain_s0" / "policy.json"), policy);

  // A changed cell setting invalidates only that cell's entry.
  json j = tiny_config();
  j["attacks"][0]["models"] = {"sandwich_g4"};
  const ExperimentSummary fourth = run_experiment(experiment_config_from_json(j), out);
  EXPECT_EQ(fourth.trained, std::vector<std::string>{"plain_s0"});
}

TEST(RunExperiment, DeterministicAcrossDirectoriesAndWorkers) {
  json j = tiny_config();
  j["seeds"] = {0, 1};
  const ExperimentConfig c = experiment_config_from_json(j);
  const fs::path a = fresh_dir("exp_det_a"), b = fresh_dir("exp_det_b");
  run_experiment(c, a);
  j["workers"] = 2;
  run_experiment(experiment_config_from_json(j), b);
  for (const char* cell : {"plain_s0", "plain_s1", "sandwich_g4_s0", "sandwich_g4_s1"}) {
    EXPECT_EQ(slurp(a / "cells" / cell / "runs.csv"), slurp(b / "cells" / cell / "runs.csv"))
        << cell;
    EXPECT_EQ(slurp(a / "cells" / cell / "policy.json"), slurp(b / "cells" / cell / "policy.json"))
        << cell;
  }
  EXPECT_NE(slurp(a / "cells" / "plain_s0" / "runs.csv"),
            slurp(a / "cells" / "plain_s1" / "runs.csv"));
}

TEST(Summarize, RecomputableFromRuns) {
  json j = tiny_config();
  j["seeds"] = {0, 1};
  const ExperimentConfig c = experiment_config_from_json(j);
  const fs::path out = fresh_dir("exp_summary");
  run_experiment(c, out);
  std::vector<CellResult> cells;
  for (const ModelSpec& m : c.models()) {
    for (std::uint64_t s : c.seeds) cells.push_back(*load_cell(out, {m, s}));
  }
  const auto rows = summarize(c, cells);
  ASSERT_EQ(rows.size(), 2u);
  for (const SummaryRow& row : rows) {
    std::vector<double> r;
    std::vector<double> lips;
    for (const CellResult& cell : cells) {
      if (cell.key.model.label() != row.model.label()) continue;
      lips.push_back(cell.eval["lipschitz"]["lower_bound"].get<double>());
      for (const RunRecord& run : cell.runs) {
        if (run.perturbation == "none") r.push_back(run.discounted_return);
      }
    }
    ASSERT_EQ(r.size(), 12u);
    double mean = 0, var = 0;
    for (double x : r) mean += x / r.size();
    for (double x : r) var += (x - mean) * (x - mean) / (r.size() - 1);
    EXPECT_NEAR(row.reward_mean, mean, 1e-9 * std::abs(mean));
    EXPECT_NEAR(row.reward_std, std::sqrt(var), 1e-9 * std::sqrt(var));
    EXPECT_NEAR(row.lip_mean, 0.5 * (lips[0] + lips[1]), 1e-12);
    EXPECT_NEAR(row.lip_std, std::abs(lips[0] - lips[1]) / std::sqrt(2.0), 1e-12);
    EXPECT_EQ(row.seeds, 2);
    if (row.model.gamma) {
      EXPECT_LE(row.lip_mean, *row.model.gamma);
      EXPECT_NEAR(*row.tightness, row.lip_mean / *row.model.gamma, 1e-15);
    }
    ASSERT_EQ(row.failing_eps.size(), 1u);
    EXPECT_EQ(row.failing_eps[0].first, "pgd_step_l2");
  }
}

TEST(Reports, ShapesAndMissingCells) {
  json j = tiny_config();
  j["seeds"] = {0, 1};
  const ExperimentConfig c = experiment_config_from_json(j);
  const fs::path out = fresh_dir("exp_reports");
  run_experiment(c, out);
  fs::remove_all(out / "cells" / "plain_s1");
  const ReportSummary rep = make_reports(out);
  EXPECT_EQ(rep.missing, std::vector<std::string>{"plain_s1"});

  const fs::path r = out / "reports";
  std::ifstream contour(r / "contour_plain_s0.csv");
  std::string line;
  int rows = 0;
  while (std::getline(contour, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
  }
  EXPECT_EQ(rows, 7);

  std::ifstream delay(r / "delay_curve.csv");
  std::getline(delay, line);
  EXPECT_EQ(line, "model,architecture,gamma,value,reward_mean,reward_std,stabilized_fraction,runs");
  std::set<std::string> ks;
  while (std::getline(delay, line)) {
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    ks.insert(f[3]);
  }
  EXPECT_EQ(ks, (std::set<std::string>{"0", "2"}));

  std::ifstream cross(r / "cross_section.csv");
  std::getline(cross, line);
  EXPECT_EQ(line.rfind("model,architecture,gamma,lip_mean,perturbation,value,reward_mean,reward_std", 0),
            0u);
  for (const char* f : {"summary.csv", "delay_curve.svg", "attack_curve_pgd_step_l2.csv",
                        "attack_curve_pgd_step_l2.svg", "cross_section.svg",
                        "local_lipschitz_plain_s0.svg", "contour_sandwich_g4_s0.svg",
                        "report.json"}) {
    EXPECT_TRUE(fs::exists(r / f)) << f;
  }
  EXPECT_EQ(slurp(r / "delay_curve.svg").rfind("<svg", 0), 0u);
}
