#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "homlab/field.hpp"
#include "json.hpp"

namespace hom {

using json = nlohmann::json;

struct Violation {
  std::string path;  // JSON-pointer-like, e.g. /ensemble/gamma
  std::string message;
  bool capacity = false;
};

struct SamplingSpec {
  std::string kind = "exact";  // exact | monte-carlo | translates | single
  std::size_t samples = 16;
  double max_bits = 24;
};

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string output = "out";
  EnsembleSpec ensemble;
  SamplingSpec sampling;
  int side = 4;
  int R = 1;
  json params;    // kind-specific, defaults filled
  json resolved;  // the whole document with every default echoed

  Grid grid() const { return Grid::cube(ensemble.dim, side, R); }
};

struct Validation {
  std::optional<ExperimentConfig> config;
  std::vector<Violation> violations;
  bool capacity_only() const;  // every violation is a capacity-guard violation
};

// Schema check of a JSON document; either a resolved config or the full list of violations.
Validation validate_config(const std::string& text);
Validation validate_config(const json& doc);

struct CatalogEntry {
  std::string kind;
  std::string summary;
  std::string anchor;   // the mathematical statement the experiment probes
  std::string columns;  // CSV header
};
const std::vector<CatalogEntry>& list_experiments();
const CatalogEntry& catalog_entry(const std::string& kind);  // ConfigError when unknown
// Catalog entry plus the default parameter block for a kind.
json describe_experiment(const std::string& kind);

std::uint64_t fnv1a(const std::string& bytes);
std::string config_hash(const ExperimentConfig& c);

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 1 config, 2 runtime, 3 capacity
  json manifest;
  std::string manifest_path;
  std::vector<std::string> files;
};
// Writes <out>/manifest.json first, then the data files, then the final manifest.
RunOutcome run_experiment(const ExperimentConfig& c, const std::string& out_dir = "");

// Builds the ensemble described by the config (normalized).
Ensemble build_ensemble(const ExperimentConfig& c);

std::string code_version();

}  // namespace hom
