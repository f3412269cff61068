#include "uadan/datagen/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "uadan/util/rng.hpp"

namespace uadan::datagen {

namespace {

std::atomic<std::uint64_t> g_target_eval_label_reads{0};

// Dark, muted source backgrounds; the target shift typically overrides these
// with a light palette to create the appearance gap between domains.
const std::vector<Color> kDefaultBackgrounds = {
    {0.10, 0.11, 0.13}, {0.16, 0.13, 0.10}, {0.12, 0.16, 0.12}, {0.08, 0.09, 0.16}};

const std::vector<Color> kDefaultForegrounds = {{0.95, 0.30, 0.25}, {0.25, 0.80, 0.35},
                                                {0.25, 0.45, 0.95}, {0.95, 0.85, 0.25},
                                                {0.85, 0.35, 0.90}, {0.30, 0.85, 0.85}};

constexpr int kMaxShapeClasses = 5;
constexpr int kPlacementAttempts = 40;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx == 0.0 ? 0.0 : d / mx;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0.0, g1 = 0.0, b1 = 0.0;
  switch (static_cast<int>(hp)) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

double cross_sign(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

/** Point-in-shape test at a continuous point for the shape of the given class. */
bool inside_shape(int class_id, double px, double py, const Box& b) {
  const double cx = b.cx();
  const double cy = b.cy();
  const double rx = 0.5 * b.width();
  const double ry = 0.5 * b.height();
  switch (class_id) {
    case 1: {  // disc
      const double dx = (px - cx) / rx;
      const double dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case 2:  // filled square: the whole box
      return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
    case 3: {  // upward triangle: apex at top-center, base along the bottom edge
      const double d1 = cross_sign(cx, b.y1, b.x1, b.y2, px, py);
      const double d2 = cross_sign(b.x1, b.y2, b.x2, b.y2, px, py);
      const double d3 = cross_sign(b.x2, b.y2, cx, b.y1, px, py);
      const bool any_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
      const bool any_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
      return !(any_neg && any_pos);
    }
    case 4: {  // ring: disc with a concentric hole at half radius
      const double dx = (px - cx) / rx;
      const double dy = (py - cy) / ry;
      const double d2 = dx * dx + dy * dy;
      return d2 <= 1.0 && d2 >= 0.25;
    }
    case 5: {  // diamond
      return std::fabs(px - cx) / rx + std::fabs(py - cy) / ry <= 1.0;
    }
    default:
      throw std::invalid_argument("inside_shape: unsupported class id");
  }
}

/** 2x2 supersampled coverage of the shape over pixel (x, y). */
double shape_coverage(int class_id, int x, int y, const Box& b) {
  static constexpr double kOffsets[2] = {0.25, 0.75};
  int hits = 0;
  for (double oy : kOffsets) {
    for (double ox : kOffsets) {
      if (inside_shape(class_id, x + ox, y + oy, b)) ++hits;
    }
  }
  return hits / 4.0;
}

void blend_shape(Tensor3& img, int class_id, const Box& b, const Color& color) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int x_hi = std::min(img.w - 1, static_cast<int>(std::ceil(b.x2)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int y_hi = std::min(img.h - 1, static_cast<int>(std::ceil(b.y2)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double a = shape_coverage(class_id, x, y, b);
      if (a == 0.0) continue;
      img.at(0, y, x) = (1.0 - a) * img.at(0, y, x) + a * color.r;
      img.at(1, y, x) = (1.0 - a) * img.at(1, y, x) + a * color.g;
      img.at(2, y, x) = (1.0 - a) * img.at(2, y, x) + a * color.b;
    }
  }
}

Color pick_color(const std::vector<Color>& palette, util::Rng& rng, double jitter) {
  Color c = palette[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(palette.size()) - 1))];
  c.r = clamp01(c.r + rng.uniform(-jitter, jitter));
  c.g = clamp01(c.g + rng.uniform(-jitter, jitter));
  c.b = clamp01(c.b + rng.uniform(-jitter, jitter));
  return c;
}

Tensor3 gaussian_blur(const Tensor3& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  // Separable pass with edge replication at the borders.
  Tensor3 tmp = Tensor3::zeros_like(img);
  for (int c = 0; c < img.ch; ++c) {
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xi = std::clamp(x + i, 0, img.w - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(c, y, xi);
        }
        tmp.at(c, y, x) = acc;
      }
    }
  }
  Tensor3 out = Tensor3::zeros_like(img);
  for (int c = 0; c < img.ch; ++c) {
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yi = std::clamp(y + i, 0, img.h - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(c, yi, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

nlohmann::json color_to_json(const Color& c) { return nlohmann::json{c.r, c.g, c.b}; }

Color color_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("color: expected [r,g,b]");
  return Color{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json palette_to_json(const std::vector<Color>& palette) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Color& c : palette) arr.push_back(color_to_json(c));
  return arr;
}

std::vector<Color> palette_from_json(const nlohmann::json& arr) {
  std::vector<Color> out;
  for (const auto& j : arr) out.push_back(color_from_json(j));
  return out;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw std::invalid_argument("unknown domain: " + s);
}

void ShiftConfig::validate() const {
  if (noise_std < 0.0 || noise_std > 1.0) throw std::invalid_argument("shift: noise_std out of range");
  if (blur_radius < 0.0 || blur_radius > 8.0) throw std::invalid_argument("shift: blur_radius out of range");
  if (scale_jitter < 0.0 || scale_jitter > 0.9) throw std::invalid_argument("shift: scale_jitter out of range");
}

void DatasetConfig::validate() const {
  if (classes < 1 || classes > kMaxShapeClasses) {
    throw std::invalid_argument("dataset: classes must be in [1,5] (distinct shape types)");
  }
  if (min_objects < 1 || max_objects < min_objects) {
    throw std::invalid_argument("dataset: invalid objects_per_image range");
  }
  if (min_side < 4.0 || max_side < min_side) {
    throw std::invalid_argument("dataset: invalid object side range");
  }
  if (width < max_side + 2.0 || height < max_side + 2.0) {
    throw std::invalid_argument("dataset: image too small for requested objects");
  }
  if (max_overlap < 0.0 || max_overlap >= 1.0) {
    throw std::invalid_argument("dataset: max_overlap out of range");
  }
}

DetectionSample::DetectionSample(Tensor3 image, std::vector<BoxLabel> labels, Domain domain,
                                 std::uint64_t sample_seed)
    : image_(std::move(image)), labels_(std::move(labels)), domain_(domain), seed_(sample_seed) {}

const std::vector<BoxLabel>& DetectionSample::train_labels() const {
  if (domain_ != Domain::source) {
    throw std::logic_error("train_labels: target-domain annotations are not available to training");
  }
  return labels_;
}

const std::vector<BoxLabel>& DetectionSample::eval_labels() const {
  if (domain_ == Domain::target) {
    g_target_eval_label_reads.fetch_add(1, std::memory_order_relaxed);
  }
  return labels_;
}

std::uint64_t DetectionSample::target_eval_label_reads() {
  return g_target_eval_label_reads.load(std::memory_order_relaxed);
}

void DetectionSample::reset_target_eval_label_reads() {
  g_target_eval_label_reads.store(0, std::memory_order_relaxed);
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, int index) {
  std::uint64_t state = dataset_seed + static_cast<std::uint64_t>(index + 1) * 0x9e3779b97f4a7c15ULL;
  return util::splitmix64(state);
}

DetectionSample generate_sample(const DatasetConfig& cfg, const ShiftConfig& shift, Domain domain,
                                std::uint64_t dataset_seed, int index) {
  cfg.validate();
  shift.validate();
  const std::uint64_t seed = sample_seed(dataset_seed, index);
  util::Rng rng(seed);
  const bool shifted = domain == Domain::target;

  const std::vector<Color>& bg_palette =
      (shifted && !shift.background_palette.empty())
          ? shift.background_palette
          : (cfg.background_palette.empty() ? kDefaultBackgrounds : cfg.background_palette);
  const std::vector<Color>& fg_palette =
      cfg.foreground_palette.empty() ? kDefaultForegrounds : cfg.foreground_palette;

  Tensor3 img(3, cfg.height, cfg.width);
  const Color bg = pick_color(bg_palette, rng, 0.03);
  img.data.row(0).setConstant(bg.r);
  img.data.row(1).setConstant(bg.g);
  img.data.row(2).setConstant(bg.b);

  const int n_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<BoxLabel> labels;
  labels.reserve(static_cast<std::size_t>(n_objects));
  for (int k = 0; k < n_objects; ++k) {
    const int cls = rng.uniform_int(1, cfg.classes);
    Box box;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      double side = rng.uniform(cfg.min_side, cfg.max_side);
      if (shifted && shift.scale_jitter > 0.0) {
        side *= 1.0 + rng.uniform(-shift.scale_jitter, shift.scale_jitter);
        side = std::clamp(side, 6.0, std::min<double>(cfg.width, cfg.height) - 2.0);
      }
      const double x1 = rng.uniform(0.0, cfg.width - side);
      const double y1 = rng.uniform(0.0, cfg.height - side);
      box = Box{x1, y1, x1 + side, y1 + side};
      bool ok = true;
      for (const BoxLabel& placed : labels) {
        if (iou(box, placed.box) > cfg.max_overlap) {
          ok = false;
          break;
        }
      }
      // After exhausting attempts the last candidate is kept: the per-image
      // object count is part of the dataset contract, mild overlap is not.
      if (ok) break;
    }
    blend_shape(img, cls, box, pick_color(fg_palette, rng, 0.08));
    labels.push_back(BoxLabel{cls, box});
  }

  if (shifted) {
    img = apply_domain_shift(img, shift, util::fnv1a64("shift") ^ seed);
  }
  img = quantize8(img);
  return DetectionSample(std::move(img), std::move(labels), domain, seed);
}

std::vector<DetectionSample> generate_dataset(int n, const DatasetConfig& cfg,
                                              const ShiftConfig& shift, Domain domain,
                                              std::uint64_t dataset_seed) {
  if (n <= 0) throw std::invalid_argument("generate_dataset: n must be positive");
  std::vector<DetectionSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, shift, domain, dataset_seed, i));
  return out;
}

Tensor3 apply_domain_shift(const Tensor3& image, const ShiftConfig& shift, std::uint64_t seed) {
  shift.validate();
  if (shift.hue_shift == 0.0 && shift.blur_radius == 0.0 && shift.noise_std == 0.0) {
    return image;  // bit-exact identity
  }
  if (image.ch != 3) throw std::invalid_argument("apply_domain_shift: expected a 3-channel image");
  Tensor3 out = image;

  if (shift.hue_shift != 0.0) {
    for (int j = 0; j < out.pixels(); ++j) {
      double h, s, v;
      rgb_to_hsv(out.data(0, j), out.data(1, j), out.data(2, j), h, s, v);
      h = std::fmod(h + shift.hue_shift, 360.0);
      if (h < 0.0) h += 360.0;
      hsv_to_rgb(h, s, v, out.data(0, j), out.data(1, j), out.data(2, j));
    }
  }
  if (shift.blur_radius > 0.0) {
    out = gaussian_blur(out, shift.blur_radius);
  }
  if (shift.noise_std > 0.0) {
    util::Rng rng(seed);
    for (int c = 0; c < out.ch; ++c) {
      for (int j = 0; j < out.pixels(); ++j) {
        out.data(c, j) = clamp01(out.data(c, j) + rng.normal(0.0, shift.noise_std));
      }
    }
  }
  return out;
}

Tensor3 quantize8(const Tensor3& image) {
  Tensor3 out = image;
  for (int c = 0; c < out.ch; ++c) {
    for (int j = 0; j < out.pixels(); ++j) {
      out.data(c, j) = static_cast<double>(std::lround(clamp01(out.data(c, j)) * 255.0)) / 255.0;
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor3& image) {
  if (image.ch != 3) throw std::invalid_argument("write_ppm: expected a 3-channel image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path.string());
  f << "P6\n" << image.w << " " << image.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.w) * 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = clamp01(image.at(c, y, x));
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Tensor3 read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path.string());
  auto next_token = [&f]() -> std::string {
    std::string tok;
    while (f) {
      const int c = f.peek();
      if (c == '#') {  // comment until end of line
        std::string line;
        std::getline(f, line);
        continue;
      }
      if (std::isspace(c)) {
        f.get();
        continue;
      }
      break;
    }
    f >> tok;
    return tok;
  };
  if (next_token() != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval");
  f.get();  // single whitespace after header
  Tensor3 img(3, h, w);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw std::runtime_error("read_ppm: truncated file: " + path.string());
  }
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<double>(buf[i++]) / 255.0;
      }
    }
  }
  return img;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<DetectionSample>& samples,
                  const nlohmann::json& generation_config) {
  if (samples.empty()) throw std::invalid_argument("save_dataset: no samples");
  std::filesystem::create_directories(dir / "images");
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["domain"] = to_string(samples.front().domain());
  manifest["width"] = samples.front().image().w;
  manifest["height"] = samples.front().image().h;
  manifest["generation_config"] = generation_config;
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DetectionSample& s = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.ppm", i);
    write_ppm(dir / "images" / name, s.image());
    nlohmann::json labels = nlohmann::json::array();
    for (const BoxLabel& l : s.eval_labels()) {
      labels.push_back({{"class_id", l.class_id},
                        {"box", {l.box.x1, l.box.y1, l.box.x2, l.box.y2}}});
    }
    entries.push_back({{"file", std::string("images/") + name},
                       {"seed", s.sample_seed()},
                       {"labels", labels}});
  }
  manifest["samples"] = std::move(entries);
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("save_dataset: cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("dataset: missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("dataset: malformed manifest.json in " + dir.string() + ": " + e.what());
  }
  return manifest;
}

std::vector<DetectionSample> load_dataset(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  try {
    const Domain domain = domain_from_string(manifest.at("domain").get<std::string>());
    const int w = manifest.at("width").get<int>();
    const int h = manifest.at("height").get<int>();
    std::vector<DetectionSample> out;
    for (const auto& entry : manifest.at("samples")) {
      Tensor3 img = read_ppm(dir / entry.at("file").get<std::string>());
      if (img.w != w || img.h != h) {
        throw std::runtime_error("dataset: image size disagrees with manifest");
      }
      std::vector<BoxLabel> labels;
      for (const auto& jl : entry.at("labels")) {
        const auto& jb = jl.at("box");
        const Box box{jb.at(0).get<double>(), jb.at(1).get<double>(), jb.at(2).get<double>(),
                      jb.at(3).get<double>()};
        if (!box.valid() || box.x1 < 0.0 || box.y1 < 0.0 || box.x2 > w || box.y2 > h) {
          throw std::runtime_error("dataset: label box out of bounds");
        }
        labels.push_back(BoxLabel{jl.at("class_id").get<int>(), box});
      }
      out.emplace_back(std::move(img), std::move(labels), domain,
                       entry.at("seed").get<std::uint64_t>());
    }
    if (out.empty()) throw std::runtime_error("dataset: empty sample list");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("dataset: malformed manifest.json in " + dir.string() + ": " + e.what());
  }
}

nlohmann::json shift_to_json(const ShiftConfig& shift) {
  return nlohmann::json{{"hue_shift", shift.hue_shift},
                        {"noise_std", shift.noise_std},
                        {"blur_radius", shift.blur_radius},
                        {"scale_jitter", shift.scale_jitter},
                        {"background_palette", palette_to_json(shift.background_palette)}};
}

ShiftConfig shift_from_json(const nlohmann::json& j) {
  ShiftConfig s;
  s.hue_shift = j.value("hue_shift", 0.0);
  s.noise_std = j.value("noise_std", 0.0);
  s.blur_radius = j.value("blur_radius", 0.0);
  s.scale_jitter = j.value("scale_jitter", 0.0);
  if (j.contains("background_palette")) s.background_palette = palette_from_json(j["background_palette"]);
  s.validate();
  return s;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& cfg) {
  return nlohmann::json{{"width", cfg.width},
                        {"height", cfg.height},
                        {"classes", cfg.classes},
                        {"min_objects", cfg.min_objects},
                        {"max_objects", cfg.max_objects},
                        {"min_side", cfg.min_side},
                        {"max_side", cfg.max_side},
                        {"max_overlap", cfg.max_overlap},
                        {"background_palette", palette_to_json(cfg.background_palette)},
                        {"foreground_palette", palette_to_json(cfg.foreground_palette)}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.classes = j.value("classes", c.classes);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.min_side = j.value("min_side", c.min_side);
  c.max_side = j.value("max_side", c.max_side);
  c.max_overlap = j.value("max_overlap", c.max_overlap);
  if (j.contains("background_palette")) c.background_palette = palette_from_json(j["background_palette"]);
  if (j.contains("foreground_palette")) c.foreground_palette = palette_from_json(j["foreground_palette"]);
  c.validate();
  return c;
}

}  // namespace uadan::datagen
