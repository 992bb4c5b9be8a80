// mreit: run, compare and validate harmonic Bz experiments.

#include <iostream>

#include "CLI11.hpp"
#include "mreit/experiment.hpp"

namespace {

int report(const mreit::ExperimentOutcome& ex) {
  std::cout << "wrote " << ex.directory.string() << "\n";
  for (const auto& c : ex.cases) {
    const auto re = c.result.re_series();
    std::cout << "  " << c.label << ": " << c.result.iterations << " iterations, verdict "
              << mreit::verdict_name(c.result.verdict);
    if (!re.empty()) std::cout << ", RE = " << re.back();
    if (c.result.clamped) std::cout << " (clamped)";
    std::cout << "\n";
    for (const auto& w : c.recovered.warnings) std::cerr << "warning: " << c.label << ": " << w << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-current harmonic Bz conductivity reconstruction"};
  app.require_subcommand(1);

  std::string config;
  std::string output_root;
  auto* run = app.add_subcommand("run", "Run an experiment and write its artifact directory");
  run->add_option("config", config, "Experiment config (INI)")->required();
  run->add_option("--output-root", output_root, "Override the output root (also MREIT_OUTPUT_ROOT)");

  std::string dir_a, dir_b;
  auto* compare = app.add_subcommand("compare", "Tabulate RE and RE-hat of two runs at n = 5, 10, ..., 50");
  compare->add_option("dir_a", dir_a, "First artifact directory")->required();
  compare->add_option("dir_b", dir_b, "Second artifact directory")->required();

  auto* validate = app.add_subcommand("validate", "Parse a config and build its geometry without solving");
  validate->add_option("config", config, "Experiment config (INI)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = mreit::load_config(config);
      if (!output_root.empty()) {
        cfg.output.dir = output_root;
        ::unsetenv("MREIT_OUTPUT_ROOT");
      }
      return report(mreit::run_experiment(cfg));
    }
    if (*compare) {
      std::cout << mreit::compare_table(dir_a, dir_b);
      return 0;
    }
    if (*validate) {
      std::cout << mreit::validate_config(mreit::load_config(config));
      return 0;
    }
  } catch (const mreit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mreit::GeometryError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mreit::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
