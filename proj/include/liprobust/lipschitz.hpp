#pragma once

// Empirical lower bounds on a policy's Lipschitz constant:
//   max over x in a box and |v|_2 <= eps of |k(x + v) - k(x)|_2 / |v|_2
// found by projected gradient ascent from random restarts.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "liprobust/policy.hpp"
#include "liprobust/rollout.hpp"

namespace liprobust {

struct DomainBox {
  Tensor lower;  // n x 1
  Tensor upper;  // n x 1

  /// alpha in [-pi, pi], alpha_dot in [-8, 8].
  static DomainBox pendulum();
  int dim() const { return static_cast<int>(lower.rows()); }
  /// Throws ValidationError unless lower < upper componentwise.
  void validate() const;
};

struct LipschitzOptions {
  double epsilon = 0.1;
  int restarts = 20;
  int iterations = 500;
  /// Raw gradient step; divided by 10 after iterations / 2.
  double step = 0.01;
  std::uint64_t seed = 0;
  /// Keep the best-so-far value after every iteration.
  bool record_history = false;
};

nlohmann::json to_json(const LipschitzOptions& o);
/// Missing keys keep the values in `defaults`; unknown keys are rejected.
LipschitzOptions lipschitz_options_from_json(const nlohmann::json& j,
                                             const LipschitzOptions& defaults = {});

struct LipEstimate {
  double lower_bound = 0.0;
  Tensor x;  // maximizing point
  Tensor v;  // maximizing perturbation
  int restarts = 0;
  int iterations = 0;
  std::optional<double> tightness;  // lower_bound / certified bound
  bool constant = false;            // no input change moved the output
  std::vector<double> history;

  nlohmann::json to_json() const;
};

/// Smallest |v| kept during the ascent; the ratio is ill-conditioned below it.
inline constexpr double kMinPerturbationNorm = 1e-6;

LipEstimate empirical_lower_bound(const GraphPolicyFn& policy, const DomainBox& domain,
                                  const LipschitzOptions& options = {});
/// Also reports tightness against certified_upper_bound(net).
LipEstimate empirical_lower_bound(const PolicyNetwork& net, const DomainBox& domain,
                                  const LipschitzOptions& options = {});

struct LocalLipschitzGrid {
  std::vector<double> alpha;      // cell centers, row axis
  std::vector<double> alpha_dot;  // cell centers, column axis
  Tensor values;                  // alpha.size() x alpha_dot.size()
  LipschitzOptions options;

  /// values as CSV, one line per alpha index.
  void write_csv(const std::string& path) const;
  /// Axes and settings.
  nlohmann::json sidecar() const;
};

/// Local estimate at each cell center: x is fixed, only v is optimized.
/// Defaults used by callers: 41 x 41 cells, 2 restarts, 100 iterations.
LocalLipschitzGrid local_lipschitz_grid(const GraphPolicyFn& policy, const DomainBox& domain,
                                        int n_alpha, int n_alpha_dot,
                                        const LipschitzOptions& options);
LocalLipschitzGrid local_lipschitz_grid(const PolicyNetwork& net, const DomainBox& domain,
                                        int n_alpha, int n_alpha_dot,
                                        const LipschitzOptions& options);

/// Options for local grids: eps 0.1, 2 restarts, 100 iterations.
LipschitzOptions local_grid_defaults();

}  // namespace liprobust
