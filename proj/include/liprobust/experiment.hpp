#pragma once

// Sweeps over architectures, gamma and seeds: training, nominal, delay and
// attack evaluation, Lipschitz estimation, a resumable manifest, and reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "liprobust/attacks.hpp"
#include "liprobust/environment.hpp"
#include "liprobust/lipschitz.hpp"
#include "liprobust/policy.hpp"
#include "liprobust/ppo.hpp"

namespace liprobust {

/// "pendulum" or "double_integrator".
std::unique_ptr<Environment> make_environment(const std::string& task);
/// State box for Lipschitz estimation and phase-space grids.
DomainBox task_domain(const std::string& task);

struct ModelSpec {
  Architecture architecture = Architecture::Plain;
  std::optional<double> gamma;
  std::vector<int> widths;  // {input, hidden..., output}

  /// "plain" or e.g. "sandwich_g4".
  std::string label() const;
};

/// Four hidden layers: 21 wide for Sandwich (matches the plain parameter
/// count), 32 otherwise.
std::vector<int> default_widths(Architecture a, int state_dim, int action_dim);

struct AttackGrid {
  AttackSpec spec;                // epsilon is taken from `epsilons`
  std::vector<double> epsilons;   // ascending
  std::vector<std::string> models;  // model labels to attack; empty = all
  /// Episodes per attack evaluation; 0 uses the experiment's eval_episodes.
  int episodes = 0;
};

struct EstimationSettings {
  LipschitzOptions global;
  LipschitzOptions local = local_grid_defaults();
  /// Cells per axis of the local Lipschitz grid; 0 disables it.
  int local_resolution = 41;
  /// Local grids are computed for this many seeds per model.
  int local_seeds = 1;
  /// Policy-action contour resolution per axis (reports).
  int contour_resolution = 101;
};

struct ExperimentConfig {
  std::string task = "pendulum";
  std::vector<Architecture> architectures = {Architecture::Plain, Architecture::Sandwich};
  std::vector<double> gammas = {4.0};
  /// Optional explicit widths per architecture name.
  nlohmann::json widths = nlohmann::json::object();
  std::vector<std::uint64_t> seeds = {0};
  /// PPOConfig overrides; the cell seed replaces `seed`.
  nlohmann::json ppo = nlohmann::json::object();
  std::vector<int> delays = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<AttackGrid> attacks;
  EstimationSettings estimation;
  int eval_episodes = 128;
  std::uint64_t eval_seed = 1'000'003;
  double discount = 0.99;
  /// Mean discounted return below this counts as a failure.
  double failure_threshold = -400.0;
  /// Nominal and delayed runs: |alpha| < tol over the last `window` states.
  double stabilize_tol = 0.2;
  /// Attacked runs use a looser angle.
  double attack_stabilize_tol = 0.3;
  int stabilize_window = 40;
  int workers = 1;

  void validate() const;
  /// Constrained architectures take every gamma; plain ones appear once.
  std::vector<ModelSpec> models() const;
  PPOConfig ppo_config(std::uint64_t seed) const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Unknown keys and malformed values raise ValidationError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct SmallestFailing {
  std::optional<double> epsilon;  // nullopt: no grid point fails
  bool non_monotone = false;
  std::vector<std::pair<double, double>> evaluations;  // (eps, mean reward)
};

/// Smallest grid eps whose mean reward is below threshold, refined by one
/// bisection step between it and the previous grid point. If a larger grid
/// eps stops failing, the failing grid point is returned unrefined and
/// non_monotone is set.
SmallestFailing smallest_failing_epsilon(const std::function<double(double)>& mean_reward,
                                         const std::vector<double>& grid, double threshold);

/// One evaluation episode.
struct RunRecord {
  std::string perturbation;  // none, delay, or an attack kind
  double value = 0.0;        // delay samples or eps
  int episode = 0;
  double discounted_return = 0.0;
  double total_reward = 0.0;
  bool stabilized = false;
};

void write_runs_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs);
std::vector<RunRecord> read_runs_csv(const std::filesystem::path& path);

struct CellKey {
  ModelSpec model;
  std::uint64_t seed = 0;

  std::string name() const;  // e.g. "sandwich_g4_s3"
};

struct ExperimentProgress {
  std::string cell;
  bool reused = false;
  double seconds = 0.0;
};

struct ExperimentSummary {
  std::filesystem::path directory;
  std::vector<std::string> trained;
  std::vector<std::string> reused;
};

/// Runs every (model, seed) cell under out/cells/<name>/, skipping cells the
/// manifest lists as complete with matching config and file hashes.
ExperimentSummary run_experiment(const ExperimentConfig& config, const std::filesystem::path& out,
                                 const std::function<void(const ExperimentProgress&)>& progress = {});

/// Loads the cell result written by run_experiment.
struct CellResult {
  CellKey key;
  GaussianPolicy policy;
  nlohmann::json eval;  // eval.json
  std::vector<RunRecord> runs;
};
std::optional<CellResult> load_cell(const std::filesystem::path& out, const CellKey& key);

/// Table-1 style row over all seeds of one model.
struct SummaryRow {
  ModelSpec model;
  int seeds = 0;
  double lip_mean = 0.0, lip_std = 0.0;
  std::optional<double> tightness;  // lip_mean / gamma
  double reward_mean = 0.0, reward_std = 0.0;
  double stabilized_seeds = 0.0;  // fraction of seeds stabilizing >= 90% of episodes
  /// Per attack kind: mean over seeds of the smallest failing eps, seeds
  /// without a failing eps counted at the largest grid eps.
  std::vector<std::pair<std::string, double>> failing_eps;
  std::vector<std::pair<std::string, int>> failing_eps_none;
};

/// Pure aggregation over loaded cells.
std::vector<SummaryRow> summarize(const ExperimentConfig& config,
                                  const std::vector<CellResult>& cells);

struct ReportSummary {
  std::vector<std::string> missing;
  std::vector<std::string> files;
};

/// Writes out/reports/: summary, delay and attack curves, cross-sections
/// against the empirical Lipschitz bound, action contours and local
/// Lipschitz heatmaps, as CSV plus SVG.
ReportSummary make_reports(const std::filesystem::path& out);
/// As above with an explicit config instead of out/config.json.
ReportSummary make_reports(const std::filesystem::path& out, const ExperimentConfig& config);

/// Stable 64-bit FNV-1a hash, hex encoded.
std::string content_hash(const std::string& bytes);

}  // namespace liprobust
