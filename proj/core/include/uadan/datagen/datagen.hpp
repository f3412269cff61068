#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uadan/boxes.hpp"
#include "uadan/tensor.hpp"

namespace uadan::datagen {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/** Ground-truth annotation: class ids are 1-based, 0 is reserved for background. */
struct BoxLabel {
  int class_id = 0;
  Box box;
};

struct Color {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

/**
 * Appearance shift applied to target-domain samples.
 *
 * hue_shift / blur_radius / noise_std transform the rendered image (in that
 * order); background_palette and scale_jitter act at composition time by
 * overriding the background colors and jittering object sizes. An all-default
 * config is the identity: the image passes through bit-exact.
 */
struct ShiftConfig {
  double hue_shift = 0.0;     // hue rotation in degrees
  double noise_std = 0.0;     // additive Gaussian noise, in [0,1] intensity units
  double blur_radius = 0.0;   // Gaussian blur sigma in pixels
  double scale_jitter = 0.0;  // relative object-size jitter, e.g. 0.2 => +-20%
  std::vector<Color> background_palette;

  bool is_identity() const {
    return hue_shift == 0.0 && noise_std == 0.0 && blur_radius == 0.0 && scale_jitter == 0.0 &&
           background_palette.empty();
  }
  void validate() const;
};

struct DatasetConfig {
  int width = 64;
  int height = 64;
  int classes = 3;  // number of foreground classes (max 5 shape types)
  int min_objects = 1;
  int max_objects = 3;
  double min_side = 8.0;
  double max_side = 24.0;
  double max_overlap = 0.25;  // placement rejects candidates overlapping more than this IoU
  std::vector<Color> background_palette;  // defaults to dark tones when empty
  std::vector<Color> foreground_palette;  // defaults to vivid tones when empty

  void validate() const;
};

/**
 * One image with its annotations.
 *
 * Target-domain ground truth exists only for evaluation; training code must
 * never see it. train_labels() is the only accessor training may use and it
 * throws for target samples, while eval_labels() on a target sample bumps a
 * process-wide counter that experiments record to prove the training loop
 * stayed blind to target annotations.
 */
class DetectionSample {
 public:
  DetectionSample(Tensor3 image, std::vector<BoxLabel> labels, Domain domain,
                  std::uint64_t sample_seed);

  const Tensor3& image() const { return image_; }
  Domain domain() const { return domain_; }
  std::uint64_t sample_seed() const { return seed_; }
  std::size_t label_count() const { return labels_.size(); }

  const std::vector<BoxLabel>& train_labels() const;
  const std::vector<BoxLabel>& eval_labels() const;

  static std::uint64_t target_eval_label_reads();
  static void reset_target_eval_label_reads();

 private:
  Tensor3 image_;
  std::vector<BoxLabel> labels_;
  Domain domain_;
  std::uint64_t seed_;
};

/** Deterministic per-sample seed derived from the dataset seed and sample index. */
std::uint64_t sample_seed(std::uint64_t dataset_seed, int index);

/** Render a single sample; samples are reproducible in isolation by index. */
DetectionSample generate_sample(const DatasetConfig& cfg, const ShiftConfig& shift, Domain domain,
                                std::uint64_t dataset_seed, int index);

/**
 * Render a dataset of n samples. Target-domain samples get the shift applied
 * and keep their labels for evaluation only; source samples ignore the shift.
 */
std::vector<DetectionSample> generate_dataset(int n, const DatasetConfig& cfg,
                                              const ShiftConfig& shift, Domain domain,
                                              std::uint64_t dataset_seed);

/** Appearance transform alone (hue -> blur -> noise); identity config is bit-exact. */
Tensor3 apply_domain_shift(const Tensor3& image, const ShiftConfig& shift, std::uint64_t seed);

/** Snap intensities to the 8-bit grid k/255 so files round-trip losslessly. */
Tensor3 quantize8(const Tensor3& image);

/** Binary PPM (P6) image IO; the on-disk representation is lossless for quantized tensors. */
void write_ppm(const std::filesystem::path& path, const Tensor3& image);
Tensor3 read_ppm(const std::filesystem::path& path);

/**
 * Persist samples as one PPM per sample plus manifest.json carrying domain,
 * seeds, annotations, and the caller's generation config (for compatibility
 * checks before reuse).
 */
void save_dataset(const std::filesystem::path& dir, const std::vector<DetectionSample>& samples,
                  const nlohmann::json& generation_config);

std::vector<DetectionSample> load_dataset(const std::filesystem::path& dir);

/** Read back the manifest of a saved dataset (throws if missing/malformed). */
nlohmann::json read_manifest(const std::filesystem::path& dir);

nlohmann::json shift_to_json(const ShiftConfig& shift);
ShiftConfig shift_from_json(const nlohmann::json& j);
nlohmann::json dataset_config_to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

}  // namespace uadan::datagen
