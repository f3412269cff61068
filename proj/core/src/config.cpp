#include "uadan/training/config.hpp"

#include <stdexcept>

#include "uadan/util/rng.hpp"

namespace uadan::training {

void OptimConfig::validate() const {
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optim: momentum out of range");
  if (weight_decay < 0.0) throw std::invalid_argument("optim: negative weight decay");
  if (lr_initial <= 0.0 || lr_final <= 0.0) throw std::invalid_argument("optim: learning rates must be positive");
  if (iters_initial < 0 || iters_final < 0 || total_iters() <= 0) {
    throw std::invalid_argument("optim: invalid iteration schedule");
  }
}

void TrainConfig::validate() const {
  optim.validate();
  uncertainty::GateConfig{xi}.validate();
  if (grl_lambda < 0.0) throw std::invalid_argument("train: grl_lambda must be non-negative");
  if (eval_every <= 0 || history_every <= 0) {
    throw std::invalid_argument("train: cadences must be positive");
  }
  if (anchor_batch <= 0) throw std::invalid_argument("train: anchor batch must be positive");
  if (anchor_neg_iou < 0.0 || anchor_pos_iou <= anchor_neg_iou || anchor_pos_iou > 1.0) {
    throw std::invalid_argument("train: anchor IoU thresholds must satisfy 0 <= neg < pos <= 1");
  }
  if (proposal_fg_iou <= 0.0 || proposal_fg_iou > 1.0) {
    throw std::invalid_argument("train: proposal foreground IoU out of range");
  }
}

void DataConfig::validate() const {
  dataset.validate();
  shift.validate();
  if (train_source <= 0 || train_target <= 0 || eval_target <= 0) {
    throw std::invalid_argument("data: split sizes must be positive");
  }
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  // Default benchmark: moderately crowded scenes, with the target domain
  // rendered on mid-tone backgrounds (vs. the dark source default) under a
  // 50-degree hue rotation, mild sensor noise and blur, and strong object
  // size jitter. Calibrated so source-only training degrades badly on the
  // target while feature alignment can close much of the gap.
  cfg.data.dataset.max_objects = 4;
  cfg.data.dataset.max_side = 22.0;
  cfg.data.dataset.max_overlap = 0.35;
  cfg.data.shift.hue_shift = 50.0;
  cfg.data.shift.noise_std = 0.04;
  cfg.data.shift.blur_radius = 0.5;
  cfg.data.shift.scale_jitter = 0.35;
  cfg.data.shift.background_palette = {{0.42, 0.40, 0.38},
                                       {0.36, 0.41, 0.46},
                                       {0.45, 0.38, 0.41},
                                       {0.38, 0.44, 0.35}};
  return cfg;
}

void ExperimentConfig::validate() const {
  data.validate();
  detector.validate();
  train.validate();
  if (detector.classes != data.dataset.classes) {
    throw std::invalid_argument("config: detector classes disagree with dataset classes");
  }
  if (detector.height != data.dataset.height || detector.width != data.dataset.width) {
    throw std::invalid_argument("config: detector input size disagrees with dataset images");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["data"] = {{"dataset", datagen::dataset_config_to_json(data.dataset)},
               {"shift", datagen::shift_to_json(data.shift)},
               {"train_source", data.train_source},
               {"train_target", data.train_target},
               {"eval_target", data.eval_target},
               {"data_seed", data.data_seed}};
  j["detector"] = {{"in_channels", detector.in_channels},
                   {"height", detector.height},
                   {"width", detector.width},
                   {"stride", detector.stride},
                   {"feat_dim", detector.feat_dim},
                   {"anchor_sides", detector.anchor_sides},
                   {"rpn_hidden", detector.rpn_hidden},
                   {"roi_size", detector.roi_size},
                   {"instance_dim", detector.instance_dim},
                   {"classes", detector.classes},
                   {"proposals", detector.proposals},
                   {"proposal_nms_iou", detector.proposal_nms_iou},
                   {"detect_nms_iou", detector.detect_nms_iou},
                   {"score_threshold", detector.score_threshold},
                   {"eps", detector.eps}};
  j["train"] = {{"mode", to_string(train.mode)},
                {"xi", train.xi},
                {"grl_lambda", train.grl_lambda},
                {"instance_entropy_reduction", uncertainty::to_string(train.instance_entropy_reduction)},
                {"optim",
                 {{"momentum", train.optim.momentum},
                  {"weight_decay", train.optim.weight_decay},
                  {"lr_initial", train.optim.lr_initial},
                  {"lr_final", train.optim.lr_final},
                  {"iters_initial", train.optim.iters_initial},
                  {"iters_final", train.optim.iters_final}}},
                {"eval_every", train.eval_every},
                {"history_every", train.history_every},
                {"anchor_batch", train.anchor_batch},
                {"anchor_pos_iou", train.anchor_pos_iou},
                {"anchor_neg_iou", train.anchor_neg_iou},
                {"proposal_fg_iou", train.proposal_fg_iou},
                {"seed", train.seed}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      if (d.contains("dataset")) cfg.data.dataset = datagen::dataset_config_from_json(d["dataset"]);
      if (d.contains("shift")) cfg.data.shift = datagen::shift_from_json(d["shift"]);
      cfg.data.train_source = d.value("train_source", cfg.data.train_source);
      cfg.data.train_target = d.value("train_target", cfg.data.train_target);
      cfg.data.eval_target = d.value("eval_target", cfg.data.eval_target);
      cfg.data.data_seed = d.value("data_seed", cfg.data.data_seed);
    }
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      cfg.detector.in_channels = d.value("in_channels", cfg.detector.in_channels);
      cfg.detector.height = d.value("height", cfg.detector.height);
      cfg.detector.width = d.value("width", cfg.detector.width);
      cfg.detector.stride = d.value("stride", cfg.detector.stride);
      cfg.detector.feat_dim = d.value("feat_dim", cfg.detector.feat_dim);
      if (d.contains("anchor_sides")) cfg.detector.anchor_sides = d["anchor_sides"].get<std::vector<int>>();
      cfg.detector.rpn_hidden = d.value("rpn_hidden", cfg.detector.rpn_hidden);
      cfg.detector.roi_size = d.value("roi_size", cfg.detector.roi_size);
      cfg.detector.instance_dim = d.value("instance_dim", cfg.detector.instance_dim);
      cfg.detector.classes = d.value("classes", cfg.detector.classes);
      cfg.detector.proposals = d.value("proposals", cfg.detector.proposals);
      cfg.detector.proposal_nms_iou = d.value("proposal_nms_iou", cfg.detector.proposal_nms_iou);
      cfg.detector.detect_nms_iou = d.value("detect_nms_iou", cfg.detector.detect_nms_iou);
      cfg.detector.score_threshold = d.value("score_threshold", cfg.detector.score_threshold);
      cfg.detector.eps = d.value("eps", cfg.detector.eps);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      if (t.contains("mode")) cfg.train.mode = ablation_mode_from_string(t["mode"].get<std::string>());
      cfg.train.xi = t.value("xi", cfg.train.xi);
      cfg.train.grl_lambda = t.value("grl_lambda", cfg.train.grl_lambda);
      if (t.contains("instance_entropy_reduction")) {
        cfg.train.instance_entropy_reduction =
            uncertainty::entropy_reduction_from_string(t["instance_entropy_reduction"].get<std::string>());
      }
      if (t.contains("optim")) {
        const auto& o = t["optim"];
        cfg.train.optim.momentum = o.value("momentum", cfg.train.optim.momentum);
        cfg.train.optim.weight_decay = o.value("weight_decay", cfg.train.optim.weight_decay);
        cfg.train.optim.lr_initial = o.value("lr_initial", cfg.train.optim.lr_initial);
        cfg.train.optim.lr_final = o.value("lr_final", cfg.train.optim.lr_final);
        cfg.train.optim.iters_initial = o.value("iters_initial", cfg.train.optim.iters_initial);
        cfg.train.optim.iters_final = o.value("iters_final", cfg.train.optim.iters_final);
      }
      cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
      cfg.train.history_every = t.value("history_every", cfg.train.history_every);
      cfg.train.anchor_batch = t.value("anchor_batch", cfg.train.anchor_batch);
      cfg.train.anchor_pos_iou = t.value("anchor_pos_iou", cfg.train.anchor_pos_iou);
      cfg.train.anchor_neg_iou = t.value("anchor_neg_iou", cfg.train.anchor_neg_iou);
      cfg.train.proposal_fg_iou = t.value("proposal_fg_iou", cfg.train.proposal_fg_iou);
      cfg.train.seed = t.value("seed", cfg.train.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::canonical_dump() const { return to_json().dump(); }

std::uint64_t ExperimentConfig::hash() const { return util::fnv1a64(canonical_dump()); }

}  // namespace uadan::training
