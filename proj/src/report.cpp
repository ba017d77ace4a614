#include "eks/error.hpp"
#include "eks/experiments.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace eks {

using nlohmann::ordered_json;

namespace {

ordered_json number_or_null(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

std::string format_double(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
}

}  // namespace

std::string report_to_json(const StudyReport& report, std::string_view timestamp) {
  ordered_json body;
  body["software"] = {{"name", kSoftwareName}, {"version", kSoftwareVersion}};
  body["kind"] = to_string(report.kind);
  body["base_seed"] = report.base_seed;
  body["passed"] = report.passed();
  body["config"] = report.config_echo;
  body["summary"] = report.summary;

  ordered_json fits = ordered_json::array();
  for (const auto& f : report.fits) {
    ordered_json points = ordered_json::array();
    for (const auto& [x, y] : f.fit.points) points.push_back(ordered_json::array({x, y}));
    fits.push_back({{"name", f.name},
                    {"slope", number_or_null(f.fit.slope)},
                    {"intercept", number_or_null(f.fit.intercept)},
                    {"r_squared", number_or_null(f.fit.r_squared)},
                    {"points", points}});
  }
  body["fits"] = fits;

  ordered_json checks = ordered_json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"value", number_or_null(c.value)},
                      {"comparator", c.comparator},
                      {"lo", number_or_null(c.lo)},
                      {"hi", number_or_null(c.hi)},
                      {"pass", c.pass}});
  }
  body["checks"] = checks;

  // Runtimes live only in the CSV so the JSON stays reproducible.
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"study", c.study},
                     {"J", c.j},
                     {"t", c.t},
                     {"repeat", c.repeat},
                     {"seed", c.seed},
                     {"metric", c.metric},
                     {"value", number_or_null(c.value)}});
  }
  body["cells"] = cells;

  const std::string rest = body.dump(2);
  // rest starts with "{\n"; splice the timestamp in as the first member.
  std::string out = "{\n  \"generated_at\": " + ordered_json(std::string(timestamp)).dump() + ",\n";
  out += rest.substr(2);
  out += '\n';
  return out;
}

std::string cells_to_csv(const StudyReport& report) {
  std::ostringstream out;
  out << "study,J,t,repeat,seed,metric_name,value,wall_ms\n";
  for (const auto& c : report.cells) {
    out << c.study << ',' << c.j << ',' << format_double(c.t) << ',' << c.repeat << ',' << c.seed << ',' << c.metric
        << ',' << format_double(c.value) << ',' << std::fixed << std::setprecision(3) << c.wall_ms << '\n';
    out << std::defaultfloat;
  }
  return out.str();
}

void write_report(const StudyReport& report, const std::filesystem::path& out_dir, std::string_view timestamp) {
  const std::string json = report_to_json(report, timestamp);
  const std::string csv = cells_to_csv(report);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::InvalidArgument, "cannot create " + out_dir.string() + ": " + ec.message());
  write_file(out_dir / "report.json", json);
  write_file(out_dir / (std::string(to_string(report.kind)) + ".csv"), csv);
  for (const auto& a : report.artifacts) write_file(out_dir / a.filename, a.content);
}

}  // namespace eks
