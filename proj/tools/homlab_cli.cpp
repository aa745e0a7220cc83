// homlab command line: validate | run | list | describe <kind>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "homlab/experiments.hpp"

namespace {

int exit_for(const hom::Validation& v) { return v.capacity_only() ? 3 : 1; }

void print_violations(const hom::Validation& v) {
  for (const auto& x : v.violations)
    std::cerr << (x.capacity ? "capacity: " : "error: ") << x.path << ": " << x.message << "\n";
}

// Reads the config and applies the command-line overrides before validation,
// so the overrides are part of the resolved document and its hash.
bool load(const std::string& path, std::optional<long long> seed, std::optional<int> workers, hom::json& doc,
          std::string& err) {
  std::ifstream f(path);
  if (!f) {
    err = "cannot read config file '" + path + "'";
    return false;
  }
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    doc = hom::json::parse(ss.str());
  } catch (const hom::json::parse_error& e) {
    err = std::string("invalid JSON: ") + e.what();
    return false;
  }
  if (doc.is_object()) {
    if (seed) doc["seed"] = *seed;
    if (workers) doc["workers"] = *workers;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"homlab: lattice stochastic homogenization experiments"};
  app.require_subcommand(1);

  std::string config, out;
  std::optional<long long> seed;
  std::optional<int> workers;
  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", config, "JSON experiment configuration")->required();
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--workers", workers, "worker threads (results do not depend on it)");
    if (with_out) sub->add_option("--out", out, "output directory (overrides the configured one)");
  };

  auto* validate = app.add_subcommand("validate", "check a configuration and print it with every default filled in");
  add_common(validate, false);
  auto* run = app.add_subcommand("run", "validate and run an experiment, writing manifest.json and a CSV table");
  add_common(run, true);
  auto* list = app.add_subcommand("list", "list experiment kinds");
  std::string kind;
  auto* describe = app.add_subcommand("describe", "describe one experiment kind and its parameter defaults");
  describe->add_option("kind", kind, "experiment kind")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*list) {
      for (const auto& e : hom::list_experiments())
        std::cout << e.kind << "\t" << e.summary << "\n\ttests: " << e.anchor << "\n";
      return 0;
    }
    if (*describe) {
      std::cout << hom::describe_experiment(kind).dump(2) << "\n";
      return 0;
    }
    hom::json doc;
    std::string err;
    if (!load(config, seed, workers, doc, err)) {
      std::cerr << "error: " << err << "\n";
      return 1;
    }
    auto v = hom::validate_config(doc);
    if (!v.config) {
      print_violations(v);
      return exit_for(v);
    }
    if (*validate) {
      std::cout << v.config->resolved.dump(2) << "\n";
      return 0;
    }
    auto res = hom::run_experiment(*v.config, out);
    std::cout << res.manifest_path << ": " << res.manifest["status"].get<std::string>() << "\n";
    if (res.exit_code != 0 && res.manifest.contains("failure"))
      std::cerr << "error: " << res.manifest["failure"]["message"].get<std::string>() << "\n";
    return res.exit_code;
  } catch (const hom::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hom::CapacityError& e) {
    std::cerr << "capacity: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
