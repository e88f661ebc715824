// JSON (de)serialization for model state and configuration. Doubles are
// written with shortest round-trip representation, so a save/load cycle is
// bit-exact and training can resume byte-for-byte.
#pragma once

#include <json.hpp>
#include <string>

#include "concurl/trainer.hpp"

namespace concurl {

using json = nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const json& j);

// FNV-1a hex digest of the key-sorted config JSON; stable under field
// reordering in config files.
std::string config_hash(const TrainConfig& cfg);

json state_to_json(const ModelState& state);
ModelState state_from_json(const json& j);

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace concurl
