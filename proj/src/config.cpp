#include "eks/error.hpp"
#include "eks/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace eks {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw Error(ErrorKind::Config, (where.empty() ? std::string("/") : where) + ": " + msg);
}

const json& required(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(where + "/" + key, "missing required field");
  return *it;
}

const json* optional_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double number(const json& node, const std::string& where) {
  if (!node.is_number()) fail(where, "expected a number");
  const double v = node.get<double>();
  if (!std::isfinite(v)) fail(where, "expected a finite number");
  return v;
}

bool boolean(const json& node, const std::string& where) {
  if (!node.is_boolean()) fail(where, "expected true or false");
  return node.get<bool>();
}

std::int64_t integer(const json& node, const std::string& where) {
  if (!node.is_number_integer()) fail(where, "expected an integer");
  return node.get<std::int64_t>();
}

Vector vector_of(const json& node, const std::string& where) {
  if (!node.is_array() || node.empty()) fail(where, "expected a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(node[i], where + "/" + std::to_string(i));
  return v;
}

Matrix matrix_of(const json& node, const std::string& where) {
  if (!node.is_array() || node.empty()) fail(where, "expected a non-empty array of rows");
  const std::size_t cols = node[0].is_array() ? node[0].size() : 0;
  if (cols == 0) fail(where + "/0", "expected a non-empty row");
  Matrix m(static_cast<Eigen::Index>(node.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string row_path = where + "/" + std::to_string(i);
    if (!node[i].is_array() || node[i].size() != cols) fail(row_path, "rows must all have " + std::to_string(cols) + " entries");
    for (std::size_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = number(node[i][j], row_path + "/" + std::to_string(j));
    }
  }
  return m;
}

SymMatrix sym_of(const json& node, const std::string& where) {
  const Matrix m = matrix_of(node, where);
  if (m.rows() != m.cols()) fail(where, "expected a square matrix");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
    fail(where, "expected a symmetric matrix");
  }
  return SymMatrix(m);
}

Band band_of(const json& node, const std::string& where) {
  if (!node.is_array() || node.size() != 2) fail(where, "expected [lo, hi]");
  Band b{number(node[0], where + "/0"), number(node[1], where + "/1")};
  if (b.lo > b.hi) fail(where, "band must satisfy lo <= hi");
  return b;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json vector_json(const Vector& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

}  // namespace

std::string_view to_string(StudyKind kind) noexcept {
  switch (kind) {
    case StudyKind::Sample: return "sample";
    case StudyKind::StudyJ: return "study-j";
    case StudyKind::StudyTime: return "study-time";
    case StudyKind::StudyCoupling: return "study-coupling";
    case StudyKind::DemoNonlinear: return "demo-nonlinear";
    case StudyKind::Validate: return "validate";
  }
  return "unknown";
}

std::optional<StudyKind> parse_study_kind(std::string_view name) noexcept {
  for (StudyKind k : {StudyKind::Sample, StudyKind::StudyJ, StudyKind::StudyTime, StudyKind::StudyCoupling,
                      StudyKind::DemoNonlinear, StudyKind::Validate}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

InverseProblem parse_problem(const json& node, const std::string& where) {
  if (!node.is_object()) fail(where, "expected a problem object");
  LinearMap a(matrix_of(required(node, "A", where), where + "/A"));
  SymMatrix gamma = sym_of(required(node, "Gamma", where), where + "/Gamma");
  SymMatrix gamma0 = sym_of(required(node, "Gamma0", where), where + "/Gamma0");
  Vector y = vector_of(required(node, "y", where), where + "/y");
  Vector u0 = vector_of(required(node, "u0", where), where + "/u0");

  std::optional<NonlinearPerturbation> pert;
  if (const json* p = optional_field(node, "perturbation")) {
    const std::string pw = where + "/perturbation";
    const Vector dir = vector_of(required(*p, "seed_direction", pw), pw + "/seed_direction");
    const double amp = number(required(*p, "amplitude", pw), pw + "/amplitude");
    const Vector freq = vector_of(required(*p, "frequency", pw), pw + "/frequency");
    try {
      pert = make_perpendicular_perturbation(a, gamma, dir, amp, freq);
    } catch (const Error& e) {
      fail(pw, e.what());
    }
  }
  try {
    return InverseProblem(std::move(a), std::move(gamma), std::move(gamma0), std::move(y), std::move(u0),
                          std::move(pert));
  } catch (const Error& e) {
    fail(where, e.what());
  }
}

ordered_json problem_to_json(const InverseProblem& problem) {
  ordered_json out;
  out["A"] = matrix_json(problem.a());
  out["Gamma"] = matrix_json(problem.gamma().matrix());
  out["Gamma0"] = matrix_json(problem.gamma0().matrix());
  out["y"] = vector_json(problem.y());
  out["u0"] = vector_json(problem.u0());
  return out;
}

InverseProblem default_problem() {
  Matrix a(2, 2);
  a << 1.0, 0.0, 0.0, 2.0;
  return InverseProblem(LinearMap(a), SymMatrix::identity(2), SymMatrix::identity(2), Vector::Ones(2),
                        Vector::Zero(2));
}

GaussianMoments default_initial() {
  Vector m(2);
  m << 2.0, -2.0;
  return GaussianMoments{m, SymMatrix::identity(2)};
}

StudyConfig parse_config(const json& doc, const std::filesystem::path& base_dir,
                         std::optional<std::uint64_t> seed_override, std::optional<StudyKind> expected_kind) {
  if (!doc.is_object()) fail("", "config must be a JSON object");
  StudyConfig cfg;
  ordered_json echo = ordered_json::parse(doc.dump());

  static const json kEmpty = json::object();
  const json* study_ptr = expected_kind ? optional_field(doc, "study") : &required(doc, "study", "");
  const json& study = study_ptr ? *study_ptr : kEmpty;
  if (!study.is_object()) fail("/study", "expected an object");
  if (const json* kind_node = optional_field(study, "kind")) {
    if (!kind_node->is_string()) fail("/study/kind", "expected a string");
    const auto kind = parse_study_kind(kind_node->get<std::string>());
    if (!kind) fail("/study/kind", "unknown study kind '" + kind_node->get<std::string>() + "'");
    if (expected_kind && *kind != *expected_kind) {
      fail("/study/kind", "config is for '" + kind_node->get<std::string>() + "' but '" +
                              std::string(to_string(*expected_kind)) + "' was requested");
    }
    cfg.kind = *kind;
  } else if (expected_kind) {
    cfg.kind = *expected_kind;
    echo["study"]["kind"] = to_string(cfg.kind);
  } else {
    fail("/study/kind", "missing required field");
  }

  if (seed_override) {
    cfg.base_seed = *seed_override;
  } else {
    const json& s = required(doc, "seed", "");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      fail("/seed", "expected a non-negative integer");
    }
    cfg.base_seed = s.get<std::uint64_t>();
  }
  echo["seed"] = cfg.base_seed;
  cfg.sde.seed = cfg.base_seed;

  const bool needs_model = cfg.kind != StudyKind::Validate;
  if (const json* p = optional_field(doc, "problem")) {
    if (p->is_string()) {
      const std::filesystem::path file = base_dir / p->get<std::string>();
      json loaded;
      try {
        loaded = read_json_file(file);
      } catch (const Error& e) {
        fail("/problem", e.detail());
      }
      cfg.problem = parse_problem(loaded, "/problem(" + file.string() + ")");
      echo["problem"] = ordered_json::parse(loaded.dump());
    } else {
      cfg.problem = parse_problem(*p, "/problem");
    }
  } else if (needs_model) {
    fail("/problem", "missing required field");
  }
  if (const json* init = optional_field(doc, "initial")) {
    Vector mean = vector_of(required(*init, "mean", "/initial"), "/initial/mean");
    SymMatrix cov = sym_of(required(*init, "cov", "/initial"), "/initial/cov");
    if (cov.dim() != mean.size()) fail("/initial/cov", "size does not match /initial/mean");
    try {
      if (lambda_min(cov) < 0.0) (void)spd_sqrt(cov);
    } catch (const Error& e) {
      fail("/initial/cov", e.what());
    }
    cfg.initial = GaussianMoments{std::move(mean), std::move(cov)};
  } else if (needs_model) {
    fail("/initial", "missing required field");
  }
  if (cfg.problem && cfg.initial && cfg.initial->mean.size() != cfg.problem->param_dim()) {
    fail("/initial/mean", "dimension does not match the problem");
  }

  cfg.sde.j_particles = 0;
  bool have_horizon = false;
  if (const json* sde = optional_field(doc, "sde")) {
    if (const json* h = optional_field(*sde, "h")) cfg.sde.h = number(*h, "/sde/h");
    if (!(cfg.sde.h > 0.0) || cfg.sde.h > kMaxStepSize) fail("/sde/h", "must lie in (0, 0.5]");
    if (const json* tol = optional_field(*sde, "sqrt_tol")) cfg.sde.sqrt_tol = number(*tol, "/sde/sqrt_tol");
    if (const json* j = optional_field(*sde, "J")) {
      cfg.sde.j_particles = integer(*j, "/sde/J");
      if (cfg.sde.j_particles < 1) fail("/sde/J", "must be >= 1");
    }
    const json* t = optional_field(*sde, "T");
    const json* n = optional_field(*sde, "n_steps");
    if (t && n) fail("/sde", "give either T or n_steps, not both");
    if (n) {
      const auto steps = integer(*n, "/sde/n_steps");
      if (steps < 0) fail("/sde/n_steps", "must be >= 0");
      cfg.sde.n_steps = static_cast<std::uint64_t>(steps);
      have_horizon = true;
    } else if (t) {
      const double horizon = number(*t, "/sde/T");
      if (horizon < 0.0) fail("/sde/T", "must be >= 0");
      const double steps = std::round(horizon / cfg.sde.h);
      if (std::abs(steps * cfg.sde.h - horizon) > 1e-9 * std::max(1.0, horizon)) {
        fail("/sde/T", "must be an integer multiple of h");
      }
      cfg.sde.n_steps = static_cast<std::uint64_t>(steps);
      have_horizon = true;
    }
  }
  if (const json* dt = optional_field(doc, "dt_ode")) {
    cfg.dt_ode = number(*dt, "/dt_ode");
    if (!(cfg.dt_ode > 0.0)) fail("/dt_ode", "must be > 0");
  }

  if (const json* r = optional_field(study, "repeats")) {
    const auto reps = integer(*r, "/study/repeats");
    if (reps < 1) fail("/study/repeats", "must be >= 1");
    cfg.repeats = static_cast<int>(reps);
  }
  if (const json* js = optional_field(study, "J_values")) {
    if (!js->is_array() || js->empty()) fail("/study/J_values", "expected a non-empty array");
    for (std::size_t i = 0; i < js->size(); ++i) {
      const auto j = integer((*js)[i], "/study/J_values/" + std::to_string(i));
      if (j < 1) fail("/study/J_values/" + std::to_string(i), "must be >= 1");
      if (!cfg.j_values.empty() && j <= cfg.j_values.back()) fail("/study/J_values", "must be strictly increasing");
      cfg.j_values.push_back(j);
    }
  }
  if (const json* ts = optional_field(study, "t_checkpoints")) {
    if (!ts->is_array() || ts->empty()) fail("/study/t_checkpoints", "expected a non-empty array");
    for (std::size_t i = 0; i < ts->size(); ++i) {
      const double t = number((*ts)[i], "/study/t_checkpoints/" + std::to_string(i));
      if (t < 0.0) fail("/study/t_checkpoints/" + std::to_string(i), "must be >= 0");
      if (!cfg.t_checkpoints.empty() && t < cfg.t_checkpoints.back()) fail("/study/t_checkpoints", "must be sorted");
      cfg.t_checkpoints.push_back(t);
    }
  }
  if (const json* b = optional_field(study, "control")) cfg.control = boolean(*b, "/study/control");
  if (const json* b = optional_field(study, "particles")) cfg.particles = boolean(*b, "/study/particles");
  if (const json* b = optional_field(study, "write_ensembles")) cfg.write_ensembles = boolean(*b, "/study/write_ensembles");
  if (const json* b = optional_field(study, "write_diagnostics")) cfg.write_diagnostics = boolean(*b, "/study/write_diagnostics");
  if (const json* w = optional_field(study, "fit_window")) {
    const Band b = band_of(*w, "/study/fit_window");
    cfg.fit_window = std::make_pair(b.lo, b.hi);
  }
  if (const json* f = optional_field(study, "fault_injection")) {
    if (const json* d = optional_field(*f, "drift_scale")) cfg.drift_scale = number(*d, "/study/fault_injection/drift_scale");
  }

  if (const json* acc = optional_field(doc, "acceptance")) {
    if (!acc->is_object()) fail("/acceptance", "expected an object");
    if (const json* x = optional_field(*acc, "slope")) cfg.acceptance.slope = band_of(*x, "/acceptance/slope");
    if (const json* x = optional_field(*acc, "control_slope")) cfg.acceptance.control_slope = band_of(*x, "/acceptance/control_slope");
    if (const json* x = optional_field(*acc, "r_squared_min")) cfg.acceptance.r_squared_min = number(*x, "/acceptance/r_squared_min");
    if (const json* x = optional_field(*acc, "mean_error_max")) cfg.acceptance.mean_error_max = number(*x, "/acceptance/mean_error_max");
    if (const json* x = optional_field(*acc, "cov_error_max")) cfg.acceptance.cov_error_max = number(*x, "/acceptance/cov_error_max");
    if (const json* x = optional_field(*acc, "alg2_mean_error_max")) cfg.acceptance.alg2_mean_error_max = number(*x, "/acceptance/alg2_mean_error_max");
    if (const json* x = optional_field(*acc, "min_alg1_worse")) cfg.acceptance.min_alg1_worse = static_cast<int>(integer(*x, "/acceptance/min_alg1_worse"));
  }

  // Per-kind requirements.
  auto need_linear = [&] {
    if (!cfg.problem->is_linear()) fail("/problem/perturbation", std::string(to_string(cfg.kind)) + " needs a linear problem");
  };
  auto need_horizon = [&] {
    if (!have_horizon) fail("/sde", "missing T or n_steps");
  };
  auto need_j = [&] {
    if (cfg.sde.j_particles < 1) fail("/sde/J", "missing required field");
  };
  auto need_repeats = [&] {
    if (!optional_field(study, "repeats")) fail("/study/repeats", "missing required field");
  };
  switch (cfg.kind) {
    case StudyKind::Sample:
      need_horizon();
      need_j();
      need_repeats();
      break;
    case StudyKind::StudyJ:
    case StudyKind::StudyCoupling:
      need_linear();
      need_horizon();
      need_repeats();
      if (cfg.j_values.empty()) fail("/study/J_values", "missing required field");
      break;
    case StudyKind::StudyTime:
      need_linear();
      if (cfg.t_checkpoints.empty()) fail("/study/t_checkpoints", "missing required field");
      if (cfg.particles) {
        need_j();
        need_repeats();
      }
      break;
    case StudyKind::DemoNonlinear:
      if (cfg.problem->is_linear()) fail("/problem/perturbation", "demo-nonlinear needs a perturbation");
      if (cfg.problem->param_dim() > 2) fail("/problem/A", "demo-nonlinear needs L <= 2 for the quadrature oracle");
      need_horizon();
      need_j();
      need_repeats();
      break;
    case StudyKind::Validate:
      break;
  }

  cfg.echo = std::move(echo);
  return cfg;
}

StudyConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override,
                        std::optional<StudyKind> expected_kind) {
  return parse_config(read_json_file(path), path.parent_path(), seed_override, expected_kind);
}

}  // namespace eks
