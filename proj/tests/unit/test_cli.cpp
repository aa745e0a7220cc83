#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "homlab/experiments.hpp"

using namespace hom;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("homlab_unit_" + name);
  fs::remove_all(p);
  return p;
}

json config_file(const std::string& name) { return json::parse(slurp(fs::path(HOMLAB_SOURCE_DIR) / "configs" / name)); }

int cli(const std::string& args) {
  const int rc = std::system((std::string(HOMLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
#ifdef WEXITSTATUS
  return WEXITSTATUS(rc);
#else
  return rc;
#endif
}

}  // namespace

TEST_CASE("validation echoes defaults") {
  auto v = validate_config(std::string(R"({"experiment": "decay-scan", "ensemble": {"model": "iid", "dim": 1, "values": [0.9, 1.1]}})"));
  REQUIRE(v.violations.empty());
  REQUIRE(v.config);
  const json& r = v.config->resolved;
  CHECK(r.contains("seed"));
  CHECK(r.contains("workers"));
  CHECK(r.contains("sampling"));
  CHECK(r.contains("grid"));
  CHECK(r.contains("params"));
  // the resolved document validates to itself
  auto again = validate_config(r);
  REQUIRE(again.config);
  CHECK(again.config->resolved == r);
  CHECK(config_hash(*again.config) == config_hash(*v.config));
}

TEST_CASE("validation errors") {
  auto bad = validate_config(std::string(
      R"({"experiment": "transition-scan", "ensemble": {"model": "gaussian", "dim": 2, "gamma": -1, "delta": 0.05}})"));
  REQUIRE(bad.violations.size() == 1);
  CHECK(bad.violations[0].message == "correlation exponent must be positive");
  CHECK_FALSE(bad.capacity_only());

  auto big = validate_config(std::string(
      R"({"experiment": "schur-verify", "ensemble": {"model": "iid", "dim": 1, "values": [0.9, 1.1]}, "sampling": {"kind": "exact"}, "grid": {"side": 40}})"));
  REQUIRE_FALSE(big.violations.empty());
  CHECK(big.capacity_only());
  CHECK(big.violations[0].message.find("2^40") != std::string::npos);

  CHECK_FALSE(validate_config(std::string("{\"experiment\": \"nope\"}")).violations.empty());
  CHECK_FALSE(validate_config(std::string("[1, 2]")).violations.empty());
}

TEST_CASE("experiment catalog") {
  const auto& cat = list_experiments();
  REQUIRE(cat.size() == 8);
  for (const auto& e : cat) {
    CHECK_FALSE(e.anchor.empty());
    CHECK_FALSE(e.columns.empty());
    CHECK(catalog_entry(e.kind).kind == e.kind);
    const json desc = describe_experiment(e.kind);
    CHECK(desc["columns"] == e.columns);
    bool defaults = false;
    for (auto it = desc.begin(); it != desc.end(); ++it) defaults |= it.key().rfind("defaults", 0) == 0;
    CHECK(defaults);
  }
  CHECK(&list_experiments() == &cat);
  CHECK_THROWS_AS(catalog_entry("nope"), ConfigError);
}

TEST_CASE("runs: results, warnings, determinism") {
  auto v = validate_config(config_file("schur_d1.json"));
  REQUIRE(v.config);
  auto dir = scratch("schur");
  auto out = run_experiment(*v.config, dir.string());
  REQUIRE(out.exit_code == 0);
  CHECK(out.manifest["status"] == "ok");
  for (const auto& r : out.manifest["results"]) CHECK(r["value"].get<double>() < 1e-8);
  CHECK(fs::exists(dir / "manifest.json"));
  const std::string csv = slurp(dir / "schur-verify.csv");
  CHECK(csv.rfind("config_hash,", 0) == 0);

  auto dir2 = scratch("schur2");
  run_experiment(*v.config, dir2.string());
  CHECK(slurp(dir2 / "schur-verify.csv") == csv);

  auto z = validate_config(config_file("decay_zero_d1.json"));
  REQUIRE(z.config);
  auto zo = run_experiment(*z.config, scratch("zero").string());
  bool floor = false;
  for (const auto& w : zo.manifest["warnings"]) floor |= w.get<std::string>().find("noise floor: exact zero") != std::string::npos;
  CHECK(floor);
}

TEST_CASE("command-line exit codes") {
  const std::string cfg = (fs::path(HOMLAB_SOURCE_DIR) / "configs" / "schur_d1.json").string();
  CHECK(cli("validate --config " + cfg) == 0);
  CHECK(cli("list") == 0);
  CHECK(cli("describe path-audit") == 0);
  CHECK(cli("run --config " + cfg + " --out " + scratch("cli").string()) == 0);

  auto bad = scratch("bad.json");
  std::ofstream(bad) << R"({"experiment": "transition-scan", "ensemble": {"model": "gaussian", "dim": 2, "gamma": -1}})";
  CHECK(cli("validate --config " + bad.string()) == 1);
  CHECK(cli("validate --config " + scratch("missing.json").string()) == 1);

  auto big = scratch("big.json");
  std::ofstream(big) << R"({"experiment": "schur-verify", "ensemble": {"model": "iid", "dim": 1, "values": [0.9, 1.1]}, "grid": {"side": 40}})";
  CHECK(cli("validate --config " + big.string()) == 3);
  CHECK(cli("run --config " + big.string() + " --out " + scratch("bigout").string()) == 3);
}
