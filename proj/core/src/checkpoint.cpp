#include "uadan/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "uadan/util/base64.hpp"

namespace uadan::training {

namespace {

std::string encode_doubles(const double* data, std::size_t n) {
  std::vector<std::uint8_t> bytes(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) {
      bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff);
    }
  }
  return util::base64_encode(bytes);
}

void decode_doubles(const std::string& b64, double* out, std::size_t n) {
  const std::vector<std::uint8_t> bytes = util::base64_decode(b64);
  if (bytes.size() != n * 8) throw std::runtime_error("checkpoint: blob size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) {
      bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    }
    out[i] = std::bit_cast<double>(bits);
  }
}

nlohmann::json rng_state_to_json(const util::Rng::State& s) {
  return nlohmann::json{{"words", {s.words[0], s.words[1], s.words[2], s.words[3]}},
                        {"has_spare", s.has_spare},
                        {"spare_bits", std::bit_cast<std::uint64_t>(s.spare)}};
}

util::Rng::State rng_state_from_json(const nlohmann::json& j) {
  util::Rng::State s;
  const auto& w = j.at("words");
  for (int i = 0; i < 4; ++i) s.words[static_cast<std::size_t>(i)] = w.at(i).get<std::uint64_t>();
  s.has_spare = j.at("has_spare").get<bool>();
  s.spare = std::bit_cast<double>(j.at("spare_bits").get<std::uint64_t>());
  return s;
}

}  // namespace

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  return nlohmann::json{{"rows", m.rows()},
                        {"cols", m.cols()},
                        {"data", encode_doubles(m.data(), static_cast<std::size_t>(m.size()))}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  if (rows < 0 || cols < 0) throw std::runtime_error("checkpoint: negative matrix shape");
  Eigen::MatrixXd m(rows, cols);
  decode_doubles(j.at("data").get<std::string>(), m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["iteration"] = ck.iteration;
  j["config"] = ck.config;
  j["config_hash"] = ck.config_hash;
  j["best_map"] = ck.best_map;
  j["best_iteration"] = ck.best_iteration;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, m] : ck.tensors) params[name] = matrix_to_json(m);
  j["params"] = std::move(params);
  nlohmann::json vel = nlohmann::json::object();
  for (const auto& [name, m] : ck.velocity) vel[name] = matrix_to_json(m);
  j["velocity"] = std::move(vel);
  nlohmann::json rng = nlohmann::json::object();
  for (const auto& [name, s] : ck.rng_streams) rng[name] = rng_state_to_json(s);
  j["rng"] = std::move(rng);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    f << j.dump(1) << "\n";
    if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
    Checkpoint ck;
    if (j.at("format_version").get<int>() != 1) {
      throw std::runtime_error("checkpoint: unsupported format version");
    }
    ck.iteration = j.at("iteration").get<int>();
    ck.config = j.at("config");
    ck.config_hash = j.at("config_hash").get<std::uint64_t>();
    ck.best_map = j.at("best_map").get<double>();
    ck.best_iteration = j.at("best_iteration").get<int>();
    for (const auto& [name, jm] : j.at("params").items()) ck.tensors[name] = matrix_from_json(jm);
    for (const auto& [name, jm] : j.at("velocity").items()) ck.velocity[name] = matrix_from_json(jm);
    for (const auto& [name, js] : j.at("rng").items()) ck.rng_streams[name] = rng_state_from_json(js);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: malformed file " + path.string() + ": " + e.what());
  }
}

}  // namespace uadan::training
