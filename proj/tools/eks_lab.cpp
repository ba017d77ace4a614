#include "eks/error.hpp"
#include "eks/experiments.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <ctime>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAcceptance = 1;
constexpr int kExitUsage = 2;

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --threads wins, then EKS_LAB_THREADS, then 1.
int resolve_threads(const std::optional<int>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("EKS_LAB_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) {
      throw eks::Error(eks::ErrorKind::Config, std::string("EKS_LAB_THREADS: expected a positive integer, got '") + env + "'");
    }
    return static_cast<int>(n);
  }
  return 1;
}

struct Args {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Kalman sampler experiments", std::string(eks::kSoftwareName)};
  app.set_version_flag("--version", std::string(eks::kSoftwareVersion));
  app.require_subcommand(1);

  Args args;
  const eks::StudyKind kinds[] = {eks::StudyKind::Sample,        eks::StudyKind::StudyJ,
                                  eks::StudyKind::StudyTime,     eks::StudyKind::StudyCoupling,
                                  eks::StudyKind::DemoNonlinear, eks::StudyKind::Validate};
  const char* help[] = {"run the sampler and write the final ensemble",
                        "sweep over ensemble size and fit the mean-field rate",
                        "deterministic decay of the moment flow toward the posterior",
                        "coupled particle/mean-field runs and the coupling rate",
                        "gradient-corrected vs plain sampler on a nonlinear forward map",
                        "run the property checks of every module"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(kinds); ++i) {
    CLI::App* sub = app.add_subcommand(std::string(eks::to_string(kinds[i])), help[i]);
    sub->add_option("--config", args.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory")->required();
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--threads", args.threads, "worker threads (default: EKS_LAB_THREADS or 1)")
        ->check(CLI::Range(1, 4096));
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::optional<eks::StudyKind> kind;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) kind = kinds[i];
  }

  eks::StudyConfig cfg;
  int threads = 1;
  try {
    threads = resolve_threads(args.threads);
    cfg = eks::load_config(args.config, args.seed, kind);
  } catch (const eks::Error& e) {
    std::cerr << args.config << ": " << e.what() << '\n';
    return kExitUsage;
  }

  eks::StudyReport report;
  try {
    report = eks::run_study(cfg, threads);
  } catch (const eks::Error& e) {
    std::cerr << eks::to_string(cfg.kind) << " failed: " << e.what() << '\n';
    return e.kind() == eks::ErrorKind::Config ? kExitUsage : kExitAcceptance;
  }

  try {
    eks::write_report(report, args.out, utc_timestamp());
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }

  for (const auto& c : report.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << c.value << '\n';
  }
  std::cout << "report: " << (std::filesystem::path(args.out) / "report.json").string() << '\n';
  return report.passed() ? kExitOk : kExitAcceptance;
}
