#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "test_util.hpp"
#include "uadan/boxes.hpp"
#include "uadan/datagen/datagen.hpp"

using namespace uadan;
using namespace uadan::datagen;
using testutil::same_bits;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.width = 48;
  cfg.height = 48;
  cfg.classes = 3;
  cfg.min_objects = 1;
  cfg.max_objects = 3;
  return cfg;
}

ShiftConfig strong_shift() {
  ShiftConfig s;
  s.hue_shift = 120.0;
  s.noise_std = 0.05;
  s.blur_radius = 0.8;
  s.scale_jitter = 0.2;
  s.background_palette = {{0.85, 0.82, 0.78}};
  return s;
}

fs::path temp_dir(const std::string& leaf) {
  fs::path dir = fs::temp_directory_path() / ("uadan_datagen_" + leaf);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("dataset generation is deterministic and samples reproduce in isolation") {
  const DatasetConfig cfg = small_config();
  const ShiftConfig shift = strong_shift();

  const auto a = generate_dataset(6, cfg, shift, Domain::target, 77);
  const auto b = generate_dataset(6, cfg, shift, Domain::target, 77);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(same_bits(a[i].image(), b[i].image()));
    CHECK(a[i].sample_seed() == b[i].sample_seed());
    CHECK(a[i].label_count() == b[i].label_count());
  }

  // Each sample depends only on (dataset_seed, index), not on its neighbours.
  const DetectionSample lone = generate_sample(cfg, shift, Domain::target, 77, 4);
  CHECK(same_bits(lone.image(), a[4].image()));
  CHECK(lone.sample_seed() == sample_seed(77, 4));

  // A different dataset seed reshuffles everything.
  const auto c = generate_dataset(6, cfg, shift, Domain::target, 78);
  CHECK(!same_bits(c[0].image(), a[0].image()));
}

TEST_CASE("generated annotations stay in bounds with limited overlap") {
  const DatasetConfig cfg = small_config();
  const auto samples = generate_dataset(20, cfg, ShiftConfig{}, Domain::source, 5);
  int pairs = 0;
  int crowded = 0;  // placement retries, but keeps the last candidate when unlucky
  for (const auto& s : samples) {
    const auto& labels = s.train_labels();
    REQUIRE(labels.size() >= static_cast<std::size_t>(cfg.min_objects));
    REQUIRE(labels.size() <= static_cast<std::size_t>(cfg.max_objects));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      CHECK(labels[i].class_id >= 1);
      CHECK(labels[i].class_id <= cfg.classes);
      CHECK(labels[i].box.x1 >= 0.0);
      CHECK(labels[i].box.y1 >= 0.0);
      CHECK(labels[i].box.x2 <= cfg.width);
      CHECK(labels[i].box.y2 <= cfg.height);
      CHECK(labels[i].box.width() >= cfg.min_side * 0.5);
      for (std::size_t j = i + 1; j < labels.size(); ++j) {
        ++pairs;
        if (iou(labels[i].box, labels[j].box) > cfg.max_overlap + 1e-12) ++crowded;
      }
    }
  }
  CHECK(pairs > 5);
  CHECK(crowded <= pairs / 10);
}

TEST_CASE("identity shift passes images through bit-exact") {
  const DatasetConfig cfg = small_config();
  const ShiftConfig identity;
  REQUIRE(identity.is_identity());

  const DetectionSample src = generate_sample(cfg, identity, Domain::source, 11, 0);
  const Tensor3 shifted = apply_domain_shift(src.image(), identity, 123);
  CHECK(same_bits(shifted, src.image()));

  // A non-identity shift must actually change pixels.
  const Tensor3 moved = apply_domain_shift(src.image(), strong_shift(), 123);
  CHECK(!same_bits(moved, src.image()));
  CHECK(moved.data.minCoeff() >= 0.0);
  CHECK(moved.data.maxCoeff() <= 1.0);
}

TEST_CASE("ppm io round-trips quantized images bit-exact") {
  const DatasetConfig cfg = small_config();
  const DetectionSample s = generate_sample(cfg, ShiftConfig{}, Domain::source, 21, 3);

  // Generated images are already quantized, so a second quantize is a no-op.
  CHECK(same_bits(quantize8(s.image()), s.image()));

  const fs::path dir = temp_dir("ppm");
  fs::create_directories(dir);
  const fs::path file = dir / "img.ppm";
  write_ppm(file, s.image());
  const Tensor3 back = read_ppm(file);
  CHECK(back.ch == 3);
  CHECK(back.h == s.image().h);
  CHECK(back.w == s.image().w);
  CHECK(same_bits(back, s.image()));

  CHECK_THROWS_AS((void)read_ppm(dir / "missing.ppm"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("save/load round-trips samples and manifest config") {
  const DatasetConfig cfg = small_config();
  const ShiftConfig shift = strong_shift();
  const auto samples = generate_dataset(4, cfg, shift, Domain::target, 99);

  nlohmann::json gen;
  gen["dataset"] = dataset_config_to_json(cfg);
  gen["shift"] = shift_to_json(shift);
  gen["seed"] = 99;

  const fs::path dir = temp_dir("roundtrip");
  save_dataset(dir, samples, gen);

  const nlohmann::json manifest = read_manifest(dir);
  CHECK(manifest.at("generation_config") == gen);
  CHECK(shift_from_json(manifest["generation_config"]["shift"]).hue_shift == shift.hue_shift);
  CHECK(dataset_config_from_json(manifest["generation_config"]["dataset"]).width == cfg.width);

  const auto loaded = load_dataset(dir);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(same_bits(loaded[i].image(), samples[i].image()));
    CHECK(loaded[i].domain() == samples[i].domain());
    CHECK(loaded[i].sample_seed() == samples[i].sample_seed());
    const auto& a = loaded[i].eval_labels();
    const auto& b = samples[i].eval_labels();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].class_id == b[k].class_id);
      CHECK(a[k].box.x1 == b[k].box.x1);
      CHECK(a[k].box.y2 == b[k].box.y2);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("target labels are quarantined from training code") {
  const DatasetConfig cfg = small_config();
  const DetectionSample src = generate_sample(cfg, ShiftConfig{}, Domain::source, 1, 0);
  const DetectionSample tgt = generate_sample(cfg, strong_shift(), Domain::target, 1, 0);

  CHECK_NOTHROW((void)src.train_labels());
  CHECK_THROWS_AS((void)tgt.train_labels(), std::logic_error);

  DetectionSample::reset_target_eval_label_reads();
  CHECK(DetectionSample::target_eval_label_reads() == 0);
  (void)src.eval_labels();  // source reads are not counted
  CHECK(DetectionSample::target_eval_label_reads() == 0);
  (void)tgt.eval_labels();
  (void)tgt.eval_labels();
  CHECK(DetectionSample::target_eval_label_reads() == 2);
  DetectionSample::reset_target_eval_label_reads();
}

TEST_CASE("shift config validation rejects out-of-range values") {
  ShiftConfig bad;
  bad.noise_std = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ShiftConfig{};
  bad.blur_radius = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ShiftConfig{};
  bad.scale_jitter = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  DatasetConfig dbad = small_config();
  dbad.classes = 9;  // only 5 shape types exist
  CHECK_THROWS_AS(dbad.validate(), std::invalid_argument);
  dbad = small_config();
  dbad.min_objects = 0;
  CHECK_THROWS_AS(dbad.validate(), std::invalid_argument);
}
