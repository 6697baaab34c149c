#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "ufdn/nn.hpp"
#include "ufdn/objectives.hpp"
#include "ufdn/trainer.hpp"

namespace ufdn {

using json = nlohmann::json;

// Conversions between configuration structs and JSON trees. Readers start from
// the defaults, reject unknown keys with a ConfigError naming the key path and
// accept any subset of fields.
json to_json(const Architecture& arch);
json to_json(const LossWeights& weights);
json to_json(const TrainConfig& config);
Architecture architecture_from_json(const json& j, const std::string& where = "arch");
LossWeights weights_from_json(const json& j, const std::string& where = "weights");
TrainConfig train_config_from_json(const json& j, const std::string& where = "train");

struct DataConfig {
  std::string corpus;            // required
  std::size_t domains = 0;       // required (N)
  std::size_t image_size = 32;
};

struct EvalConfig {
  std::string heldout_corpus;    // optional; evaluation falls back to data.corpus
  std::uint64_t probe_seed = 0;
};

struct RunConfig {
  Architecture arch;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  /// Full validation; throws ConfigError.
  void validate() const;
};

RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ufdn
