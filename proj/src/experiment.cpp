#include "liprobust/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace liprobust {

namespace fs = std::filesystem;
using nlohmann::json;

std::unique_ptr<Environment> make_environment(const std::string& task) {
  if (task == "pendulum") return std::make_unique<Pendulum>();
  if (task == "double_integrator") {
    return std::make_unique<LinearQuadratic>(LinearQuadraticParams::double_integrator());
  }
  throw ValidationError("unknown task: " + task);
}

DomainBox task_domain(const std::string& task) {
  if (task == "pendulum") return DomainBox::pendulum();
  if (task == "double_integrator") {
    DomainBox b;
    b.lower = Tensor::Constant(2, 1, -2.0);
    b.upper = Tensor::Constant(2, 1, 2.0);
    return b;
  }
  throw ValidationError("unknown task: " + task);
}

namespace {

std::string format_number(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

std::string attack_key(const AttackSpec& s) { return to_string(s.kind) + "_" + to_string(s.norm); }

json attack_grid_to_json(const AttackGrid& g) {
  // Raw fields: a step size of 0 stays relative to each grid epsilon.
  json j = {{"kind", to_string(g.spec.kind)}, {"norm", to_string(g.spec.norm)},
            {"steps", g.spec.steps},          {"step_size", g.spec.step_size},
            {"windows", g.spec.windows},      {"window_len", g.spec.window_len},
            {"restarts", g.spec.restarts},    {"seed", g.spec.seed}};
  j["epsilons"] = g.epsilons;
  j["models"] = g.models;
  j["episodes"] = g.episodes;
  return j;
}

AttackGrid attack_grid_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("attack grid entries must be objects");
  AttackGrid g;
  try {
    json spec = j;
    g.epsilons = j.at("epsilons").get<std::vector<double>>();
    g.models = j.value("models", std::vector<std::string>{});
    g.episodes = j.value("episodes", 0);
    for (const char* k : {"epsilons", "models", "episodes"}) spec.erase(k);
    static const std::set<std::string> known = {"kind", "norm", "steps", "step_size", "windows",
                                                "window_len", "restarts", "seed"};
    for (const auto& [key, value] : spec.items()) {
      if (!known.contains(key)) throw ValidationError("unknown attack grid key: " + key);
    }
    if (!g.epsilons.empty()) spec["epsilon"] = g.epsilons.front();
    g.spec = attack_spec_from_json(spec);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed attack grid: ") + e.what());
  }
  return g;
}

json estimation_to_json(const EstimationSettings& e) {
  return {{"global", to_json(e.global)},
          {"local", to_json(e.local)},
          {"local_resolution", e.local_resolution},
          {"local_seeds", e.local_seeds},
          {"contour_resolution", e.contour_resolution}};
}

EstimationSettings estimation_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("estimation settings must be an object");
  EstimationSettings e;
  for (const auto& [key, value] : j.items()) {
    if (!estimation_to_json(e).contains(key)) {
      throw ValidationError("unknown estimation key: " + key);
    }
  }
  if (j.contains("global")) e.global = lipschitz_options_from_json(j["global"], e.global);
  if (j.contains("local")) e.local = lipschitz_options_from_json(j["local"], e.local);
  try {
    e.local_resolution = j.value("local_resolution", e.local_resolution);
    e.local_seeds = j.value("local_seeds", e.local_seeds);
    e.contour_resolution = j.value("contour_resolution", e.contour_resolution);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed estimation settings: ") + ex.what());
  }
  return e;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path.string());
    f << text;
    if (!f) throw ValidationError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::optional<std::string> read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

json read_json(const fs::path& path) {
  const auto text = read_text(path);
  if (!text) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(*text);
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

std::string ModelSpec::label() const {
  std::string s = to_string(architecture);
  if (gamma) s += "_g" + format_number(*gamma);
  return s;
}

std::vector<int> default_widths(Architecture a, int state_dim, int action_dim) {
  const int h = a == Architecture::Sandwich ? 21 : 32;
  return {state_dim, h, h, h, h, action_dim};
}

std::string CellKey::name() const { return model.label() + "_s" + std::to_string(seed); }

void ExperimentConfig::validate() const {
  make_environment(task);
  if (architectures.empty()) throw ValidationError("no architectures configured");
  if (seeds.empty()) throw ValidationError("no seeds configured");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("seeds must be distinct");
  }
  const bool constrained =
      std::any_of(architectures.begin(), architectures.end(), is_constrained);
  if (constrained && gammas.empty()) throw ValidationError("constrained architectures need gammas");
  for (double g : gammas) {
    if (!(g > 0) || !std::isfinite(g)) throw ValidationError("gammas must be positive");
  }
  for (int k : delays) {
    if (k < 0) throw ValidationError("delays must be >= 0");
  }
  std::set<std::string> labels;
  for (const ModelSpec& m : models()) labels.insert(m.label());
  std::set<std::string> keys;
  for (const AttackGrid& g : attacks) {
    if (g.spec.kind != AttackKind::PgdStep && g.spec.kind != AttackKind::Trajectory &&
        g.spec.kind != AttackKind::UniformNoise) {
      throw ValidationError("attack grids support pgd_step, trajectory and uniform_noise");
    }
    if (g.epsilons.empty()) throw ValidationError("attack grid has no epsilons");
    for (std::size_t i = 0; i < g.epsilons.size(); ++i) {
      if (!(g.epsilons[i] >= 0)) throw ValidationError("attack epsilons must be >= 0");
      if (i > 0 && !(g.epsilons[i] > g.epsilons[i - 1])) {
        throw ValidationError("attack epsilons must be ascending");
      }
    }
    for (const std::string& m : g.models) {
      if (!labels.contains(m)) throw ValidationError("attack grid names unknown model " + m);
    }
    if (g.episodes < 0 || g.episodes > eval_episodes) {
      throw ValidationError("attack episodes must be in [0, eval_episodes]");
    }
    if (!keys.insert(attack_key(g.spec)).second) {
      throw ValidationError("duplicate attack grid " + attack_key(g.spec));
    }
    AttackSpec s = g.spec;
    s.epsilon = g.epsilons.back();
    s.validate();
  }
  if (eval_episodes < 1) throw ValidationError("eval_episodes must be positive");
  if (!(discount > 0 && discount <= 1)) throw ValidationError("discount must be in (0, 1]");
  if (!(stabilize_tol > 0) || !(attack_stabilize_tol > 0)) {
    throw ValidationError("stabilization tolerances must be positive");
  }
  if (stabilize_window < 1) throw ValidationError("stabilize_window must be positive");
  if (workers < 1) throw ValidationError("workers must be positive");
  if (estimation.local_resolution < 0 || estimation.contour_resolution < 2 ||
      estimation.local_seeds < 0) {
    throw ValidationError("estimation resolutions out of range");
  }
  task_domain(task).validate();
  for (std::uint64_t s : seeds) ppo_config(s).validate();
  const auto env = make_environment(task);
  if (stabilize_window > env->horizon() + 1) {
    throw ValidationError("stabilize_window exceeds the horizon");
  }
  for (const ModelSpec& m : models()) {
    if (m.widths.size() < 2 || m.widths.front() != env->state_dim() ||
        m.widths.back() != env->action_dim()) {
      throw ValidationError("widths for " + m.label() + " do not match the task");
    }
  }
}

std::vector<ModelSpec> ExperimentConfig::models() const {
  const auto env = make_environment(task);
  std::vector<ModelSpec> out;
  for (Architecture a : architectures) {
    ModelSpec m;
    m.architecture = a;
    const std::string name = to_string(a);
    m.widths = widths.contains(name) ? widths[name].get<std::vector<int>>()
                                     : default_widths(a, env->state_dim(), env->action_dim());
    if (!is_constrained(a)) {
      out.push_back(m);
      continue;
    }
    for (double g : gammas) {
      m.gamma = g;
      out.push_back(m);
    }
  }
  return out;
}

PPOConfig ExperimentConfig::ppo_config(std::uint64_t seed) const {
  PPOConfig c = ppo_config_from_json(ppo);
  c.seed = seed;
  return c;
}

json to_json(const ExperimentConfig& c) {
  std::vector<std::string> archs;
  for (Architecture a : c.architectures) archs.push_back(to_string(a));
  json attacks = json::array();
  for (const AttackGrid& g : c.attacks) attacks.push_back(attack_grid_to_json(g));
  return {{"task", c.task},
          {"architectures", archs},
          {"gammas", c.gammas},
          {"widths", c.widths},
          {"seeds", c.seeds},
          {"ppo", c.ppo},
          {"delays", c.delays},
          {"attacks", attacks},
          {"estimation", estimation_to_json(c.estimation)},
          {"eval_episodes", c.eval_episodes},
          {"eval_seed", c.eval_seed},
          {"discount", c.discount},
          {"failure_threshold", c.failure_threshold},
          {"stabilize_tol", c.stabilize_tol},
          {"attack_stabilize_tol", c.attack_stabilize_tol},
          {"stabilize_window", c.stabilize_window},
          {"workers", c.workers}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig c;
  const json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown experiment config key: " + key);
  }
  try {
    c.task = j.value("task", c.task);
    if (j.contains("architectures")) {
      c.architectures.clear();
      for (const auto& a : j["architectures"]) {
        c.architectures.push_back(architecture_from_string(a.get<std::string>()));
      }
    }
    c.gammas = j.value("gammas", c.gammas);
    c.widths = j.value("widths", c.widths);
    if (!c.widths.is_object()) throw ValidationError("widths must be an object");
    for (const auto& [name, w] : c.widths.items()) {
      architecture_from_string(name);
      w.get<std::vector<int>>();
    }
    c.seeds = j.value("seeds", c.seeds);
    c.ppo = j.value("ppo", c.ppo);
    ppo_config_from_json(c.ppo);
    c.delays = j.value("delays", c.delays);
    if (j.contains("attacks")) {
      if (!j["attacks"].is_array()) throw ValidationError("attacks must be an array");
      for (const auto& g : j["attacks"]) c.attacks.push_back(attack_grid_from_json(g));
    }
    if (j.contains("estimation")) c.estimation = estimation_from_json(j["estimation"]);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.discount = j.value("discount", c.discount);
    c.failure_threshold = j.value("failure_threshold", c.failure_threshold);
    c.stabilize_tol = j.value("stabilize_tol", c.stabilize_tol);
    c.attack_stabilize_tol = j.value("attack_stabilize_tol", c.attack_stabilize_tol);
    c.stabilize_window = j.value("stabilize_window", c.stabilize_window);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_json(path));
}

SmallestFailing smallest_failing_epsilon(const std::function<double(double)>& mean_reward,
                                         const std::vector<double>& grid, double threshold) {
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw ValidationError("epsilon grid must be ascending");
  }
  SmallestFailing out;
  std::vector<bool> fails;
  for (double eps : grid) {
    const double r = mean_reward(eps);
    out.evaluations.emplace_back(eps, r);
    fails.push_back(r < threshold);
  }
  const auto first = std::find(fails.begin(), fails.end(), true);
  if (first == fails.end()) return out;
  const std::size_t i = static_cast<std::size_t>(first - fails.begin());
  out.epsilon = grid[i];
  out.non_monotone = std::find(first, fails.end(), false) != fails.end();
  if (i == 0 || out.non_monotone) return out;
  const double mid = 0.5 * (grid[i - 1] + grid[i]);
  const double r = mean_reward(mid);
  out.evaluations.emplace_back(mid, r);
  if (r < threshold) out.epsilon = mid;
  return out;
}

void write_runs_csv(const fs::path& path, const std::vector<RunRecord>& runs) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "perturbation,value,episode,discounted_return,total_reward,stabilized\n";
  for (const RunRecord& r : runs) {
    os << r.perturbation << ',' << r.value << ',' << r.episode << ',' << r.discounted_return << ','
       << r.total_reward << ',' << (r.stabilized ? 1 : 0) << '\n';
  }
  write_text(path, os.str());
}

std::vector<RunRecord> read_runs_csv(const fs::path& path) {
  const auto text = read_text(path);
  if (!text) throw ValidationError("cannot read " + path.string());
  std::istringstream is(*text);
  std::string line;
  std::getline(is, line);
  std::vector<RunRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw ValidationError("malformed run row in " + path.string());
    try {
      out.push_back({f[0], std::stod(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]),
                     f[5] == "1"});
    } catch (const std::exception&) {
      throw ValidationError("malformed run row in " + path.string());
    }
  }
  return out;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

const std::vector<std::string> kCellFiles = {"policy.json", "eval.json", "runs.csv",
                                             "metrics.jsonl"};

std::string cell_config_hash(const ExperimentConfig& c, const CellKey& key, bool local_grid) {
  json attacks = json::array();
  for (const AttackGrid& g : c.attacks) {
    if (g.models.empty() ||
        std::find(g.models.begin(), g.models.end(), key.model.label()) != g.models.end()) {
      json a = attack_grid_to_json(g);
      a.erase("models");
      attacks.push_back(a);
    }
  }
  const json j = {{"task", c.task},
                  {"model", key.model.label()},
                  {"widths", key.model.widths},
                  {"seed", key.seed},
                  {"ppo", to_json(c.ppo_config(key.seed))},
                  {"delays", c.delays},
                  {"attacks", attacks},
                  {"global", to_json(c.estimation.global)},
                  {"local", local_grid ? to_json(c.estimation.local) : json()},
                  {"local_resolution", local_grid ? c.estimation.local_resolution : 0},
                  {"eval_episodes", c.eval_episodes},
                  {"eval_seed", c.eval_seed},
                  {"discount", c.discount},
                  {"failure_threshold", c.failure_threshold},
                  {"stabilize_tol", c.stabilize_tol},
                  {"attack_stabilize_tol", c.attack_stabilize_tol},
                  {"stabilize_window", c.stabilize_window}};
  return content_hash(j.dump());
}

json file_hashes(const fs::path& dir) {
  json files = json::object();
  for (const std::string& f : kCellFiles) {
    const auto text = read_text(dir / f);
    files[f] = text ? content_hash(*text) : "";
  }
  return files;
}

void record_runs(std::vector<RunRecord>& runs, const std::string& perturbation, double value,
                 const Trajectory& traj, int window, double tol) {
  const std::vector<bool> stable = stabilized_episodes(traj, window, tol);
  for (int j = 0; j < traj.episodes(); ++j) {
    double total = 0.0;
    for (const Tensor& r : traj.rewards) total += r(0, j);
    runs.push_back({perturbation, value, j, traj.discounted_return(0, j), total, stable[j]});
  }
}

json episode_stats(const std::vector<RunRecord>& runs, std::size_t begin) {
  std::vector<double> ret, total;
  int stable = 0;
  for (std::size_t i = begin; i < runs.size(); ++i) {
    ret.push_back(runs[i].discounted_return);
    total.push_back(runs[i].total_reward);
    stable += runs[i].stabilized;
  }
  return {{"mean_return", mean_of(ret)},
          {"std_return", std_of(ret)},
          {"mean_total_reward", mean_of(total)},
          {"stabilized", ret.empty() ? 0.0 : double(stable) / double(ret.size())}};
}

void run_cell(const ExperimentConfig& config, const CellKey& key, const fs::path& dir,
              bool local_grid) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto env = make_environment(config.task);
  const auto t0 = std::chrono::steady_clock::now();

  PolicyNetwork net =
      build_policy(key.model.architecture, key.model.widths, key.model.gamma, key.seed);
  TrainOutputs outputs;
  outputs.metrics_path = (dir / "metrics.jsonl").string();
  outputs.checkpoint_dir = (dir / "checkpoints").string();
  const TrainResult trained = train(*env, net, config.ppo_config(key.seed), outputs);
  const PolicyNetwork& policy = trained.policy.mean;
  const double train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const PolicySnapshot snap{policy};
  const Tensor x0 = sample_initial_states(*env, config.eval_episodes, config.eval_seed);
  RolloutOptions ro;
  ro.discount = config.discount;
  const int window = std::min(config.stabilize_window, env->horizon() + 1);

  std::vector<RunRecord> runs;
  json eval;
  eval["cell"] = key.name();
  eval["model"] = key.model.label();
  eval["architecture"] = to_string(key.model.architecture);
  eval["gamma"] = key.model.gamma ? json(*key.model.gamma) : json();
  eval["seed"] = key.seed;
  eval["certified_bound"] = certified_upper_bound(policy);
  eval["env_steps"] = trained.env_steps;
  eval["train_seconds"] = train_seconds;

  std::size_t begin = runs.size();
  record_runs(runs, "none", 0.0, rollout(*env, std::cref(snap), x0, config.eval_seed,
                                         NoPerturbation{}, ro),
              window, config.stabilize_tol);
  eval["nominal"] = episode_stats(runs, begin);

  eval["delays"] = json::array();
  for (int k : config.delays) {
    begin = runs.size();
    record_runs(runs, "delay", k,
                rollout(*env, std::cref(snap), x0, config.eval_seed, delay_adapter(k), ro), window,
                config.stabilize_tol);
    json s = episode_stats(runs, begin);
    s["k"] = k;
    eval["delays"].push_back(s);
  }

  eval["attacks"] = json::object();
  for (const AttackGrid& grid : config.attacks) {
    if (!grid.models.empty() && std::find(grid.models.begin(), grid.models.end(),
                                          key.model.label()) == grid.models.end()) {
      continue;
    }
    const std::string name = attack_key(grid.spec);
    const int n = grid.episodes > 0 ? grid.episodes : config.eval_episodes;
    const Tensor xa = x0.leftCols(n);
    json points = json::array();
    auto attacked = [&](double eps) {
      AttackSpec spec = grid.spec;
      spec.epsilon = eps;
      spec.seed = key.seed;
      const AttackResult r = run_attack(*env, policy, xa, spec, config.discount);
      const std::size_t b = runs.size();
      record_runs(runs, name, eps, r.trajectory, window, config.attack_stabilize_tol);
      json s = episode_stats(runs, b);
      s["epsilon"] = eps;
      s["nominal_return"] = r.nominal_return.mean();
      s["max_output_deviation"] = r.max_output_deviation;
      s["max_norm"] = [&] {
        const auto norms = r.per_step_norms();
        return norms.empty() ? 0.0 : *std::max_element(norms.begin(), norms.end());
      }();
      points.push_back(s);
      return s["mean_return"].get<double>();
    };
    const SmallestFailing sf =
        smallest_failing_epsilon(attacked, grid.epsilons, config.failure_threshold);
    json evaluations = json::array();
    for (const auto& [eps, r] : sf.evaluations) evaluations.push_back({eps, r});
    eval["attacks"][name] = {{"spec", attack_grid_to_json(grid)},
                             {"episodes", n},
                             {"points", points},
                             {"smallest_failing", sf.epsilon ? json(*sf.epsilon) : json()},
                             {"non_monotone", sf.non_monotone}};
  }

  const DomainBox domain = task_domain(config.task);
  LipschitzOptions lo = config.estimation.global;
  lo.seed = key.seed;
  eval["lipschitz"] = empirical_lower_bound(policy, domain, lo).to_json();
  if (local_grid) {
    LipschitzOptions local = config.estimation.local;
    local.seed = key.seed;
    const int r = config.estimation.local_resolution;
    const LocalLipschitzGrid grid = local_lipschitz_grid(policy, domain, r, r, local);
    grid.write_csv((dir / "local_lipschitz.csv").string());
    write_text(dir / "local_lipschitz.json", grid.sidecar().dump(2));
  }
  eval["total_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_runs_csv(dir / "runs.csv", runs);
  write_text(dir / "policy.json", to_json(trained.policy).dump());
  write_text(dir / "eval.json", eval.dump(2));
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config, const fs::path& out,
                                 const std::function<void(const ExperimentProgress&)>& progress) {
  config.validate();
  fs::create_directories(out / "cells");
  write_text(out / "config.json", to_json(config).dump(2));

  json manifest = {{"cells", json::object()}};
  if (fs::exists(out / "manifest.json")) {
    try {
      manifest = read_json(out / "manifest.json");
      if (!manifest.contains("cells") || !manifest["cells"].is_object()) {
        manifest = {{"cells", json::object()}};
      }
    } catch (const ValidationError&) {
      manifest = {{"cells", json::object()}};
    }
  }
  manifest["config_hash"] = content_hash(to_json(config).dump());

  struct Job {
    CellKey key;
    bool local_grid;
  };
  std::vector<Job> jobs;
  for (const ModelSpec& m : config.models()) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
      jobs.push_back({{m, config.seeds[i]},
                      config.estimation.local_resolution > 0 &&
                          int(i) < config.estimation.local_seeds});
    }
  }

  ExperimentSummary summary;
  summary.directory = out;
  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      {
        std::lock_guard lock(mutex);
        if (failure) return;
      }
      const std::size_t i = next++;
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      const std::string name = job.key.name();
      const fs::path dir = out / "cells" / name;
      const std::string chash = cell_config_hash(config, job.key, job.local_grid);
      bool complete = false;
      {
        std::lock_guard lock(mutex);
        const json& cells = manifest["cells"];
        complete = cells.contains(name) && cells[name].value("config_hash", "") == chash &&
                   cells[name].value("files", json()) == file_hashes(dir);
      }
      const auto t0 = std::chrono::steady_clock::now();
      if (!complete) {
        try {
          run_cell(config, job.key, dir, job.local_grid);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
      std::lock_guard lock(mutex);
      if (!complete) {
        manifest["cells"][name] = {{"config_hash", chash}, {"files", file_hashes(dir)}};
        write_text(out / "manifest.json", manifest.dump(2));
        summary.trained.push_back(name);
      } else {
        summary.reused.push_back(name);
      }
      if (progress) {
        progress({name, complete,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
      }
    }
  };

  const int n_workers = std::min<int>(config.workers, static_cast<int>(jobs.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  write_text(out / "manifest.json", manifest.dump(2));
  if (failure) std::rethrow_exception(failure);
  return summary;
}

std::optional<CellResult> load_cell(const fs::path& out, const CellKey& key) {
  const fs::path dir = out / "cells" / key.name();
  const auto manifest_text = read_text(out / "manifest.json");
  if (!manifest_text) return std::nullopt;
  json manifest;
  try {
    manifest = json::parse(*manifest_text);
  } catch (const json::exception&) {
    return std::nullopt;
  }
  const std::string name = key.name();
  if (!manifest.contains("cells") || !manifest["cells"].contains(name) ||
      manifest["cells"][name].value("files", json()) != file_hashes(dir)) {
    return std::nullopt;
  }
  CellResult r;
  r.key = key;
  r.policy = gaussian_policy_from_json(read_json(dir / "policy.json"));
  r.eval = read_json(dir / "eval.json");
  r.runs = read_runs_csv(dir / "runs.csv");
  return r;
}

std::vector<SummaryRow> summarize(const ExperimentConfig& config,
                                  const std::vector<CellResult>& cells) {
  std::vector<SummaryRow> rows;
  for (const ModelSpec& m : config.models()) {
    SummaryRow row;
    row.model = m;
    std::vector<double> lips, rewards;
    int stable_seeds = 0;
    std::map<std::string, std::vector<double>> eps;
    std::map<std::string, int> none;
    for (const CellResult& c : cells) {
      if (c.key.model.label() != m.label()) continue;
      ++row.seeds;
      lips.push_back(c.eval.at("lipschitz").at("lower_bound").get<double>());
      int n = 0, stable = 0;
      for (const RunRecord& r : c.runs) {
        if (r.perturbation != "none") continue;
        rewards.push_back(r.discounted_return);
        ++n;
        stable += r.stabilized;
      }
      if (n > 0 && double(stable) >= 0.9 * n) ++stable_seeds;
      for (const AttackGrid& g : config.attacks) {
        const std::string key = attack_key(g.spec);
        if (!c.eval.at("attacks").contains(key)) continue;
        const json& s = c.eval["attacks"][key]["smallest_failing"];
        if (s.is_null()) {
          eps[key].push_back(g.epsilons.back());
          ++none[key];
        } else {
          eps[key].push_back(s.get<double>());
        }
      }
    }
    row.lip_mean = mean_of(lips);
    row.lip_std = std_of(lips);
    if (m.gamma && row.seeds > 0) row.tightness = row.lip_mean / *m.gamma;
    row.reward_mean = mean_of(rewards);
    row.reward_std = std_of(rewards);
    row.stabilized_seeds = row.seeds > 0 ? double(stable_seeds) / row.seeds : 0.0;
    for (const AttackGrid& g : config.attacks) {
      const std::string key = attack_key(g.spec);
      if (!eps.contains(key)) continue;
      row.failing_eps.emplace_back(key, mean_of(eps[key]));
      row.failing_eps_none.emplace_back(key, none[key]);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace liprobust
