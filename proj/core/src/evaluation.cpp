#include "uadan/evaluation/evaluation.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "uadan/util/rng.hpp"

namespace uadan::evaluation {

namespace {

struct RankedDet {
  double score = 0.0;
  double area = 0.0;
  int image = 0;
  int order = 0;  // index within its image's detection list
  int class_id = 0;
  Box box;
};

/** Global detection rank: score desc, larger box first, then input order. */
bool ranked_before(const RankedDet& a, const RankedDet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.area != b.area) return a.area > b.area;
  if (a.image != b.image) return a.image < b.image;
  return a.order < b.order;
}

std::vector<RankedDet> ranked_detections(const std::vector<ImageEval>& images) {
  std::vector<RankedDet> all;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& dets = images[i].detections;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      all.push_back(RankedDet{dets[d].score, dets[d].box.area(), static_cast<int>(i),
                              static_cast<int>(d), dets[d].class_id, dets[d].box});
    }
  }
  std::sort(all.begin(), all.end(), ranked_before);
  return all;
}

/** All-points interpolated AP over one ranked precision/recall sequence. */
double interpolated_ap(const std::vector<PrPoint>& curve) {
  if (curve.empty()) return 0.0;
  const std::size_t n = curve.size();
  std::vector<double> envelope(n);
  double env = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    env = std::max(env, curve[i].precision);
    envelope[i] = env;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

}  // namespace

EvalResult evaluate(const std::vector<ImageEval>& images, int classes, double iou_threshold) {
  if (classes < 1) throw std::invalid_argument("evaluate: need at least one class");
  if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
    throw std::invalid_argument("evaluate: IoU threshold must be in (0,1]");
  }
  int gt_total = 0;
  for (const ImageEval& img : images) gt_total += static_cast<int>(img.truths.size());
  if (gt_total == 0) throw std::invalid_argument("evaluate: no ground truth boxes");

  const std::vector<RankedDet> ranked = ranked_detections(images);

  EvalResult result;
  double ap_sum = 0.0;
  int classes_with_gt = 0;
  for (int c = 1; c <= classes; ++c) {
    ClassEval ce;
    ce.class_id = c;
    // Ground truth of this class, per image, with matched flags.
    std::vector<std::vector<int>> gt_idx(images.size());
    std::vector<std::vector<bool>> gt_used(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t g = 0; g < images[i].truths.size(); ++g) {
        if (images[i].truths[g].class_id == c) {
          gt_idx[i].push_back(static_cast<int>(g));
          gt_used[i].push_back(false);
          ++ce.gt_count;
        }
      }
    }
    int tp = 0;
    int fp = 0;
    for (const RankedDet& det : ranked) {
      if (det.class_id != c) continue;
      const std::size_t i = static_cast<std::size_t>(det.image);
      double best_iou = 0.0;
      int best = -1;
      for (std::size_t k = 0; k < gt_idx[i].size(); ++k) {
        if (gt_used[i][k]) continue;
        const double v = iou(det.box, images[i].truths[static_cast<std::size_t>(gt_idx[i][k])].box);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(k);
        }
      }
      if (best >= 0) {
        gt_used[i][static_cast<std::size_t>(best)] = true;
        ++tp;
      } else {
        ++fp;
      }
      PrPoint p;
      p.recall = ce.gt_count > 0 ? static_cast<double>(tp) / ce.gt_count : 0.0;
      p.precision = static_cast<double>(tp) / (tp + fp);
      p.score = det.score;
      ce.curve.push_back(p);
    }
    ce.tp = tp;
    ce.fp = fp;
    ce.ap = ce.gt_count > 0 ? interpolated_ap(ce.curve) : 0.0;
    if (ce.gt_count > 0) {
      ap_sum += ce.ap;
      ++classes_with_gt;
    }
    result.per_class.push_back(std::move(ce));
  }
  result.map = ap_sum / classes_with_gt;
  return result;
}

ErrorBuckets error_buckets(const std::vector<ImageEval>& images, double fg_iou, double loc_iou) {
  if (fg_iou <= loc_iou || loc_iou < 0.0 || fg_iou > 1.0) {
    throw std::invalid_argument("error_buckets: need 0 <= loc_iou < fg_iou <= 1");
  }
  ErrorBuckets ea;
  std::vector<std::vector<bool>> gt_used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    gt_used[i].assign(images[i].truths.size(), false);
    ea.gt_total += static_cast<int>(images[i].truths.size());
  }
  for (const RankedDet& det : ranked_detections(images)) {
    ++ea.det_total;
    const std::size_t i = static_cast<std::size_t>(det.image);
    const auto& truths = images[i].truths;
    // Bucket priority: correct > duplicate > misclassified > mislocalized > background.
    double best_same_unmatched = 0.0;
    int best_same_unmatched_idx = -1;
    double best_same = 0.0;
    double best_any = 0.0;
    for (std::size_t g = 0; g < truths.size(); ++g) {
      const double v = iou(det.box, truths[g].box);
      best_any = std::max(best_any, v);
      if (truths[g].class_id == det.class_id) {
        best_same = std::max(best_same, v);
        if (!gt_used[i][g] && v > best_same_unmatched) {
          best_same_unmatched = v;
          best_same_unmatched_idx = static_cast<int>(g);
        }
      }
    }
    if (best_same_unmatched >= fg_iou) {
      gt_used[i][static_cast<std::size_t>(best_same_unmatched_idx)] = true;
      ++ea.correct;
    } else if (best_same >= fg_iou) {
      ++ea.duplicates;
    } else if (best_any >= fg_iou) {
      ++ea.misclassified;
    } else if (best_any >= loc_iou) {
      ++ea.mislocalized;
    } else {
      ++ea.background;
    }
  }
  ea.missed = ea.gt_total - ea.correct;
  ea.has_detections = ea.det_total > 0;
  ea.has_truths = ea.gt_total > 0;
  ea.precision = ea.has_detections ? static_cast<double>(ea.correct) / ea.det_total : 0.0;
  ea.recall = ea.has_truths ? static_cast<double>(ea.correct) / ea.gt_total : 0.0;
  return ea;
}

namespace {

/** Per-truth matched flags under the same ranked greedy matching as AP. */
std::vector<std::vector<bool>> matched_truths(const std::vector<ImageEval>& images,
                                              double iou_threshold) {
  std::vector<std::vector<bool>> matched(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    matched[i].assign(images[i].truths.size(), false);
  }
  for (const RankedDet& det : ranked_detections(images)) {
    const std::size_t i = static_cast<std::size_t>(det.image);
    const auto& truths = images[i].truths;
    double best_iou = 0.0;
    int best = -1;
    for (std::size_t g = 0; g < truths.size(); ++g) {
      if (matched[i][g] || truths[g].class_id != det.class_id) continue;
      const double v = iou(det.box, truths[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) matched[i][static_cast<std::size_t>(best)] = true;
  }
  return matched;
}

bool same_truths(const std::vector<ImageEval>& a, const std::vector<ImageEval>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].truths.size() != b[i].truths.size()) return false;
    for (std::size_t g = 0; g < a[i].truths.size(); ++g) {
      const auto& ta = a[i].truths[g];
      const auto& tb = b[i].truths[g];
      if (ta.class_id != tb.class_id || ta.box.x1 != tb.box.x1 || ta.box.y1 != tb.box.y1 ||
          ta.box.x2 != tb.box.x2 || ta.box.y2 != tb.box.y2) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

ErrorAnalysis error_analysis(const std::vector<ImageEval>& baseline,
                             const std::vector<ImageEval>& adapted, double iou_threshold) {
  if (!same_truths(baseline, adapted)) {
    throw std::invalid_argument("error_analysis: runs disagree on the ground truth");
  }
  const auto base_hit = matched_truths(baseline, iou_threshold);
  const auto adapt_hit = matched_truths(adapted, iou_threshold);

  ErrorAnalysis ea;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    for (std::size_t g = 0; g < baseline[i].truths.size(); ++g) {
      ++ea.gt_total;
      const bool b = base_hit[i][g];
      const bool a = adapt_hit[i][g];
      ea.baseline_matched += b;
      ea.adapted_matched += a;
      ea.both_matched += a && b;
      ea.recovered += a && !b;
      ea.induced += b && !a;
    }
  }
  const int baseline_missed = ea.gt_total - ea.baseline_matched;
  ea.recovered_rate_defined = baseline_missed > 0;
  ea.induced_rate_defined = ea.baseline_matched > 0;
  if (ea.recovered_rate_defined) {
    ea.recovered_tp_rate = static_cast<double>(ea.recovered) / baseline_missed;
  }
  if (ea.induced_rate_defined) {
    ea.induced_fn_rate = static_cast<double>(ea.induced) / ea.baseline_matched;
  }
  return ea;
}

ClassVariance class_variance(const std::vector<std::pair<int, Eigen::VectorXd>>& features,
                             int per_class_cap, std::uint64_t seed) {
  if (per_class_cap < 1) throw std::invalid_argument("class_variance: cap must be positive");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < features.size(); ++i) {
    by_class[features[i].first].push_back(static_cast<int>(i));
  }
  if (by_class.size() < 2) {
    throw std::invalid_argument("class_variance: need at least two classes present");
  }
  util::Rng rng = util::Rng::stream(seed, "class_variance");
  std::vector<int> kept;
  for (auto& [cls, idxs] : by_class) {
    if (static_cast<int>(idxs.size()) > per_class_cap) {
      rng.shuffle(idxs);
      idxs.resize(static_cast<std::size_t>(per_class_cap));
      std::sort(idxs.begin(), idxs.end());
    }
    kept.insert(kept.end(), idxs.begin(), idxs.end());
  }

  const Eigen::Index dim = features[static_cast<std::size_t>(kept.front())].second.size();
  for (int i : kept) {
    if (features[static_cast<std::size_t>(i)].second.size() != dim) {
      throw std::invalid_argument("class_variance: inconsistent feature dimensions");
    }
  }
  const double n_total = static_cast<double>(kept.size());
  Eigen::VectorXd grand_mean = Eigen::VectorXd::Zero(dim);
  for (int i : kept) grand_mean += features[static_cast<std::size_t>(i)].second;
  grand_mean /= n_total;

  ClassVariance out;
  out.classes_used = static_cast<int>(by_class.size());
  out.samples_used = static_cast<int>(kept.size());
  for (const auto& [cls, idxs] : by_class) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (int i : idxs) mean += features[static_cast<std::size_t>(i)].second;
    mean /= static_cast<double>(idxs.size());
    for (int i : idxs) {
      out.within += (features[static_cast<std::size_t>(i)].second - mean).squaredNorm();
    }
    out.between += static_cast<double>(idxs.size()) * (mean - grand_mean).squaredNorm();
  }
  out.within /= n_total;
  out.between /= n_total;
  for (int i : kept) {
    out.total += (features[static_cast<std::size_t>(i)].second - grand_mean).squaredNorm();
  }
  out.total /= n_total;
  return out;
}

nlohmann::json detections_to_json(const std::vector<ImageEval>& images) {
  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json imgs = nlohmann::json::array();
  for (const ImageEval& img : images) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : img.detections) {
      dets.push_back({{"class_id", d.class_id},
                      {"score", d.score},
                      {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}});
    }
    nlohmann::json truths = nlohmann::json::array();
    for (const auto& t : img.truths) {
      truths.push_back({{"class_id", t.class_id},
                        {"box", {t.box.x1, t.box.y1, t.box.x2, t.box.y2}}});
    }
    imgs.push_back({{"detections", std::move(dets)}, {"truths", std::move(truths)}});
  }
  j["images"] = std::move(imgs);
  return j;
}

std::vector<ImageEval> detections_from_json(const nlohmann::json& j) {
  try {
    std::vector<ImageEval> out;
    for (const auto& jimg : j.at("images")) {
      ImageEval img;
      for (const auto& jd : jimg.at("detections")) {
        const auto& b = jd.at("box");
        img.detections.push_back(detector::DetectionResult{
            jd.at("class_id").get<int>(), jd.at("score").get<double>(),
            Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()}});
      }
      for (const auto& jt : jimg.at("truths")) {
        const auto& b = jt.at("box");
        img.truths.push_back(datagen::BoxLabel{
            jt.at("class_id").get<int>(), Box{b.at(0).get<double>(), b.at(1).get<double>(),
                                              b.at(2).get<double>(), b.at(3).get<double>()}});
      }
      out.push_back(std::move(img));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("detections: malformed json: ") + e.what());
  }
}

}  // namespace uadan::evaluation
