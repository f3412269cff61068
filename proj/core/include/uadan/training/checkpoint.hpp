#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "uadan/util/rng.hpp"

namespace uadan::training {

/**
 * Full training state: parameters, optimizer velocity, RNG streams, progress
 * counters, and the generating config. Serialized as JSON with raw
 * little-endian doubles in base64, so a save/load round trip is bit-exact and
 * two identical runs produce byte-identical files.
 */
struct Checkpoint {
  int iteration = 0;  // completed optimization steps
  nlohmann::json config;
  std::uint64_t config_hash = 0;
  double best_map = -1.0;
  int best_iteration = -1;
  std::map<std::string, Eigen::MatrixXd> tensors;
  std::map<std::string, Eigen::MatrixXd> velocity;
  std::map<std::string, util::Rng::State> rng_streams;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/** Lossless matrix <-> JSON encoding used inside checkpoints. */
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace uadan::training
