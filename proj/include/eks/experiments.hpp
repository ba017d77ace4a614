#pragma once

#include "eks/dynamics.hpp"
#include "eks/metrics.hpp"
#include "eks/model.hpp"
#include "eks/reference.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace eks {

inline constexpr std::string_view kSoftwareName = "eks-lab";
inline constexpr std::string_view kSoftwareVersion = "0.1.0";

enum class StudyKind { Sample, StudyJ, StudyTime, StudyCoupling, DemoNonlinear, Validate };

std::string_view to_string(StudyKind kind) noexcept;
std::optional<StudyKind> parse_study_kind(std::string_view name) noexcept;

struct Band {
  double lo;
  double hi;
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

/// Pre-registered pass/fail thresholds; absent entries are not graded.
struct Acceptance {
  std::optional<Band> slope;
  std::optional<Band> control_slope;
  std::optional<double> r_squared_min;
  std::optional<double> mean_error_max;
  std::optional<double> cov_error_max;
  std::optional<double> alg2_mean_error_max;
  std::optional<int> min_alg1_worse;
};

struct StudyConfig {
  StudyKind kind = StudyKind::Validate;
  std::optional<InverseProblem> problem;
  std::optional<GaussianMoments> initial;
  SdeConfig sde;  // sde.seed holds the base seed; j_particles is 0 when unset
  double dt_ode = kDefaultOdeStep;
  std::vector<Eigen::Index> j_values;
  std::vector<double> t_checkpoints;
  int repeats = 1;
  std::uint64_t base_seed = 0;
  bool control = false;
  bool particles = false;
  bool write_ensembles = true;
  bool write_diagnostics = true;
  std::optional<std::pair<double, double>> fit_window;
  Acceptance acceptance;
  /// Validation mutation hook forwarded to SdeConfig::drift_scale.
  double drift_scale = 1.0;
  /// Resolved configuration (problem inline, effective seed) for the report.
  nlohmann::ordered_json echo;
};

/// Parses and validates a config document. `base_dir` resolves a problem
/// given by file path. Errors are ErrorKind::Config naming the offending
/// JSON path. With `expected_kind`, /study/kind may be omitted but must match
/// when present.
StudyConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {},
                         std::optional<std::uint64_t> seed_override = std::nullopt,
                         std::optional<StudyKind> expected_kind = std::nullopt);
StudyConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt,
                        std::optional<StudyKind> expected_kind = std::nullopt);

InverseProblem parse_problem(const nlohmann::json& node, const std::string& where = "/problem");
nlohmann::ordered_json problem_to_json(const InverseProblem& problem);

/// L=2, K=2, A=diag(1,2), Gamma=I, Gamma0=I, y=(1,1), u0=0.
InverseProblem default_problem();
/// rho0 = N((2,-2), I).
GaussianMoments default_initial();

struct CellResult {
  std::string study;
  Eigen::Index j = 0;
  double t = 0.0;
  int repeat = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double wall_ms = 0.0;
};

struct FitEntry {
  std::string name;
  SlopeFit fit;
};

struct Check {
  std::string name;
  double value;
  std::string comparator;  // "<=", ">=", "in"
  double lo;
  double hi;
  bool pass;
};

struct Artifact {
  std::string filename;
  std::string content;
};

struct StudyReport {
  StudyKind kind = StudyKind::Validate;
  std::uint64_t base_seed = 0;
  nlohmann::ordered_json config_echo;
  std::vector<CellResult> cells;
  std::vector<FitEntry> fits;
  std::vector<Check> checks;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  std::vector<Artifact> artifacts;

  bool passed() const noexcept;
};

/// Seed of sweep cell (J, repeat) under `base`.
std::uint64_t cell_seed(std::uint64_t base, Eigen::Index j, int repeat) noexcept;

StudyReport run_sample(const StudyConfig& cfg, int threads = 1);
StudyReport run_study_j(const StudyConfig& cfg, int threads = 1);
StudyReport run_study_time(const StudyConfig& cfg, int threads = 1);
StudyReport run_study_coupling(const StudyConfig& cfg, int threads = 1);
StudyReport run_demo_nonlinear(const StudyConfig& cfg, int threads = 1);
StudyReport run_validate(const StudyConfig& cfg, int threads = 1);
StudyReport run_study(const StudyConfig& cfg, int threads = 1);

/// Report JSON. The timestamp is the only non-reproducible field and sits on
/// its own line right after the opening brace.
std::string report_to_json(const StudyReport& report, std::string_view timestamp);

/// Flat CSV: study,J,t,repeat,seed,metric_name,value,wall_ms.
std::string cells_to_csv(const StudyReport& report);

/// Writes report.json, <kind>.csv and all artifacts into `out_dir`.
void write_report(const StudyReport& report, const std::filesystem::path& out_dir, std::string_view timestamp);

}  // namespace eks
