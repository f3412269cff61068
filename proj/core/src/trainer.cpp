#include "uadan/training/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "uadan/adaptation/grl.hpp"
#include "uadan/uncertainty/entropy.hpp"

namespace uadan::training {

namespace {

/** GT boxes as extra unit-score proposals for the source RCNN branch; keeps
 *  the second stage supplied with foreground examples while the RPN warms up. */
std::vector<detector::Proposal> with_truth_proposals(const std::vector<detector::Proposal>& props,
                                                     const std::vector<datagen::BoxLabel>& truths,
                                                     int img_w, int img_h) {
  std::vector<detector::Proposal> out = props;
  for (const datagen::BoxLabel& t : truths) {
    out.push_back(detector::Proposal{clip_box(t.box, img_w, img_h), 1.0, -1});
  }
  return out;
}

}  // namespace

struct Trainer::ForwardPass {
  detector::Backbone::Cache backbone;
  detector::RpnHead::Cache rpn;
  Tensor3 feat;
  detector::ProposalMap pm;
  std::vector<detector::Proposal> proposals;
  std::vector<detector::RoiPoolCache> pool;
  detector::RoiProjection::Cache proj;
  Eigen::MatrixXd pooled;
  Eigen::MatrixXd instances;
  detector::RcnnHead::Cache rcnn_cache;
  detector::RcnnOutputs rcnn;
  uncertainty::EntropyMap emap;
  Eigen::VectorXd det_entropy;
  Eigen::VectorXd ins_entropy;
  bool has_instances = false;
  bool has_rcnn = false;
};

Trainer::Trainer(ExperimentConfig cfg, std::vector<datagen::DetectionSample> train_source,
                 std::vector<datagen::DetectionSample> train_target,
                 std::vector<datagen::DetectionSample> eval_target)
    : cfg_([&cfg] {
        cfg.validate();
        return std::move(cfg);
      }()),
      train_source_(std::move(train_source)),
      train_target_(std::move(train_target)),
      eval_target_(std::move(eval_target)),
      model_(cfg_.detector, cfg_.train.seed),
      image_cls_(cfg_.detector.feat_dim, cfg_.detector.feat_dim / 2),
      instance_cls_(cfg_.detector.instance_dim, 128),
      anchor_rng_(util::Rng::stream(cfg_.train.seed, "anchors")),
      dropout_rng_(util::Rng::stream(cfg_.train.seed, "dropout")),
      source_order_rng_(util::Rng::stream(cfg_.train.seed, "data.source")),
      target_order_rng_(util::Rng::stream(cfg_.train.seed, "data.target")) {
  if (train_source_.empty() || train_target_.empty() || eval_target_.empty()) {
    throw std::invalid_argument("trainer: empty dataset split");
  }
  for (const auto& s : train_source_) {
    if (s.domain() != datagen::Domain::source) {
      throw std::invalid_argument("trainer: source split contains target samples");
    }
  }
  for (const auto* split : {&train_target_, &eval_target_}) {
    for (const auto& s : *split) {
      if (s.domain() != datagen::Domain::target) {
        throw std::invalid_argument("trainer: target split contains source samples");
      }
    }
  }
  util::Rng domain_init = util::Rng::stream(cfg_.train.seed, "init.domain");
  image_cls_.init(domain_init);
  instance_cls_.init(domain_init);

  std::vector<nn::Param*> params = model_.params();
  for (nn::Param* p : image_cls_.params()) params.push_back(p);
  for (nn::Param* p : instance_cls_.params()) params.push_back(p);
  optimizer_ = std::make_unique<nn::SgdOptimizer>(std::move(params), cfg_.train.optim.momentum,
                                                  cfg_.train.optim.weight_decay);
  replay_data_order(0);
}

int Trainer::next_index(std::vector<int>& perm, int& cursor, util::Rng& rng) {
  if (cursor == static_cast<int>(perm.size())) {
    rng.shuffle(perm);
    cursor = 0;
  }
  return perm[static_cast<std::size_t>(cursor++)];
}

void Trainer::replay_data_order(int iteration) {
  // Epoch shuffles are a pure function of (seed, iteration), so resuming
  // replays them instead of serializing permutations.
  source_order_rng_ = util::Rng::stream(cfg_.train.seed, "data.source");
  target_order_rng_ = util::Rng::stream(cfg_.train.seed, "data.target");
  const int ns = static_cast<int>(train_source_.size());
  const int nt = static_cast<int>(train_target_.size());
  source_perm_.resize(static_cast<std::size_t>(ns));
  target_perm_.resize(static_cast<std::size_t>(nt));
  std::iota(source_perm_.begin(), source_perm_.end(), 0);
  std::iota(target_perm_.begin(), target_perm_.end(), 0);
  for (int k = 0; k <= iteration / ns; ++k) source_order_rng_.shuffle(source_perm_);
  for (int k = 0; k <= iteration / nt; ++k) target_order_rng_.shuffle(target_perm_);
  source_cursor_ = iteration % ns;
  target_cursor_ = iteration % nt;
}

void Trainer::forward_domain(const datagen::DetectionSample& sample, bool want_instances,
                             bool want_rcnn, bool want_entropy_map, ForwardPass& fp) {
  fp.feat = model_.backbone().forward(sample.image(), &fp.backbone);
  fp.pm = model_.rpn().forward(fp.feat, &fp.rpn);
  fp.proposals = model_.propose(fp.pm);
  if (want_entropy_map) fp.emap = uncertainty::proposal_entropy_map(fp.pm, cfg_.detector.eps);
  if (want_instances && !fp.proposals.empty()) {
    fp.pooled = model_.pool_proposals(fp.feat, fp.proposals, &fp.pool);
    fp.instances = model_.projection().forward(fp.pooled, &fp.proj);
    fp.has_instances = true;
    if (want_rcnn) {
      fp.rcnn = model_.rcnn().forward(fp.instances, &fp.rcnn_cache);
      fp.has_rcnn = true;
    }
  }
}

StepBreakdown Trainer::train_step(const datagen::DetectionSample& source,
                                  const datagen::DetectionSample& target, double lr) {
  const AblationMode mode = cfg_.train.mode;
  const double eps = cfg_.detector.eps;
  const double lambda = cfg_.train.grl_lambda;
  const bool image_align = uses_image_alignment(mode);
  const InstanceWeighting ins_weighting = instance_weighting(mode);
  const bool instance_align = ins_weighting != InstanceWeighting::none;
  const bool need_det_entropy = ins_weighting == InstanceWeighting::entropy ||
                                ins_weighting == InstanceWeighting::gated;
  const bool need_emap = image_alignment_weighted(mode) && image_align;
  const bool need_ins_entropy = ins_weighting == InstanceWeighting::gated;

  optimizer_->zero_grad();
  StepBreakdown step;

  // ---------------- source forward ----------------
  ForwardPass src;
  forward_domain(source, /*want_instances=*/false, /*want_rcnn=*/false,
                 need_emap || need_ins_entropy, src);
  // The RCNN branch additionally trains on the ground-truth boxes themselves.
  const std::vector<datagen::BoxLabel>& truths = source.train_labels();
  src.proposals =
      with_truth_proposals(src.proposals, truths, cfg_.detector.width, cfg_.detector.height);
  src.pooled = model_.pool_proposals(src.feat, src.proposals, &src.pool);
  src.instances = model_.projection().forward(src.pooled, &src.proj);
  src.has_instances = true;
  src.rcnn = model_.rcnn().forward(src.instances, &src.rcnn_cache);
  src.has_rcnn = true;
  step.source_instances = static_cast<int>(src.proposals.size());

  DetectionLossGrads det_grads;
  step.detection = compute_detection_loss(src.pm, model_.anchors(), src.proposals, src.rcnn,
                                          truths, cfg_.train, eps, anchor_rng_, &det_grads);

  // ---------------- target forward ----------------
  ForwardPass tgt;
  if (uses_target_stream(mode)) {
    forward_domain(target, instance_align, need_det_entropy, need_emap || need_ins_entropy, tgt);
    step.target_instances = static_cast<int>(tgt.proposals.size());
  }

  // ---------------- adversarial heads ----------------
  adaptation::AdversarialTerms terms;
  adaptation::ImageDomainClassifier::Cache img_cache_s, img_cache_t;
  adaptation::InstanceDomainClassifier::Cache ins_cache_s, ins_cache_t;
  adaptation::PairGrads img_grads, ins_grads;
  if (image_align) {
    const adaptation::DomainPrediction img_s = image_cls_.forward(src.feat, &img_cache_s);
    const adaptation::DomainPrediction img_t = image_cls_.forward(tgt.feat, &img_cache_t);
    if (image_alignment_weighted(mode)) {
      terms.image_ua = adaptation::image_ua_loss(src.emap, img_s, tgt.emap, img_t, eps, &img_grads);
    } else {
      terms.image_al = adaptation::image_al_loss(img_s, img_t, eps, &img_grads);
    }
  }
  if (instance_align) {
    // Empty proposal sets contribute zero loss for that domain.
    const Eigen::MatrixXd empty(cfg_.detector.instance_dim, 0);
    const adaptation::DomainPrediction ins_s = instance_cls_.forward(
        src.has_instances ? src.instances : empty, true, &dropout_rng_, &ins_cache_s);
    const adaptation::DomainPrediction ins_t = instance_cls_.forward(
        tgt.has_instances ? tgt.instances : empty, true, &dropout_rng_, &ins_cache_t);
    auto det_entropies = [&](const ForwardPass& fp) {
      Eigen::VectorXd e(fp.has_rcnn ? fp.rcnn.class_probs.cols() : 0);
      for (Eigen::Index i = 0; i < e.size(); ++i) {
        e(i) = uncertainty::categorical_entropy(fp.rcnn.class_probs.col(i), eps);
      }
      return e;
    };
    auto ins_entropies = [&](const ForwardPass& fp) {
      Eigen::VectorXd e(fp.has_instances ? static_cast<Eigen::Index>(fp.proposals.size()) : 0);
      for (Eigen::Index i = 0; i < e.size(); ++i) {
        e(i) = uncertainty::instance_proposal_entropy(
            fp.emap, fp.proposals[static_cast<std::size_t>(i)].box, cfg_.detector.roi_size,
            cfg_.detector.stride, cfg_.train.instance_entropy_reduction);
      }
      return e;
    };
    switch (ins_weighting) {
      case InstanceWeighting::plain:
        terms.instance_al = adaptation::instance_al_loss(ins_s, ins_t, eps, &ins_grads);
        break;
      case InstanceWeighting::entropy:
        terms.instance_ua = adaptation::instance_ua_loss(det_entropies(src), ins_s,
                                                         det_entropies(tgt), ins_t, eps, &ins_grads);
        break;
      case InstanceWeighting::gated: {
        src.det_entropy = det_entropies(src);
        tgt.det_entropy = det_entropies(tgt);
        src.ins_entropy = ins_entropies(src);
        tgt.ins_entropy = ins_entropies(tgt);
        const uncertainty::GateConfig gate{cfg_.train.xi};
        terms.instance_ug =
            adaptation::instance_ug_loss(src.det_entropy, src.ins_entropy, ins_s, tgt.det_entropy,
                                         tgt.ins_entropy, ins_t, gate, eps, &ins_grads);
        int open_s = 0;
        for (Eigen::Index i = 0; i < src.ins_entropy.size(); ++i) {
          if (src.ins_entropy(i) < cfg_.train.xi) ++open_s;
        }
        int open_t = 0;
        for (Eigen::Index i = 0; i < tgt.ins_entropy.size(); ++i) {
          if (tgt.ins_entropy(i) < cfg_.train.xi) ++open_t;
        }
        step.gate_open_source =
            src.ins_entropy.size() > 0 ? static_cast<double>(open_s) / src.ins_entropy.size() : 0.0;
        step.gate_open_target =
            tgt.ins_entropy.size() > 0 ? static_cast<double>(open_t) / tgt.ins_entropy.size() : 0.0;
        break;
      }
      case InstanceWeighting::none:
        break;
    }
  }

  step.loss = adaptation::total_loss(mode, step.detection.total, terms);
  if (!std::isfinite(step.loss.total)) {
    throw TrainingDiverged("training diverged: non-finite loss at iteration " +
                           std::to_string(iteration_));
  }

  // ---------------- backward ----------------
  // Source: detection loss descends; adversarial gradients reach the features
  // through gradient reversal while the classifiers take the plain gradient.
  {
    Eigen::MatrixXd dinst =
        model_.rcnn().backward(det_grads.rcnn_dlogits, det_grads.rcnn_ddeltas, src.rcnn_cache);
    if (instance_align && ins_grads.d_source.size() > 0) {
      const Eigen::MatrixXd dadv = instance_cls_.backward(ins_grads.d_source, ins_cache_s);
      dinst += adaptation::grl_backward(dadv, lambda);
    }
    const Eigen::MatrixXd dpooled = model_.projection().backward(dinst, src.proj);
    Tensor3 dfeat(cfg_.detector.feat_dim, cfg_.detector.feat_h(), cfg_.detector.feat_w());
    model_.pool_proposals_backward(dpooled, src.pool, dfeat);
    dfeat.data += model_.rpn().backward(det_grads.rpn_dlogits, det_grads.rpn_ddeltas, src.rpn).data;
    if (image_align) {
      const Tensor3 dadv = image_cls_.backward(img_grads.d_source, img_cache_s);
      dfeat.data += adaptation::grl_backward(dadv, lambda).data;
    }
    model_.backbone().backward(dfeat, src.backbone);
  }
  if (uses_target_stream(mode) && (image_align || (instance_align && tgt.has_instances))) {
    Tensor3 dfeat(cfg_.detector.feat_dim, cfg_.detector.feat_h(), cfg_.detector.feat_w());
    if (instance_align && tgt.has_instances && ins_grads.d_target.size() > 0) {
      const Eigen::MatrixXd dadv = instance_cls_.backward(ins_grads.d_target, ins_cache_t);
      const Eigen::MatrixXd dpooled =
          model_.projection().backward(adaptation::grl_backward(dadv, lambda), tgt.proj);
      model_.pool_proposals_backward(dpooled, tgt.pool, dfeat);
    }
    if (image_align) {
      const Tensor3 dadv = image_cls_.backward(img_grads.d_target, img_cache_t);
      dfeat.data += adaptation::grl_backward(dadv, lambda).data;
    }
    model_.backbone().backward(dfeat, tgt.backbone);
  }

  optimizer_->step(lr);
  return step;
}

double Trainer::evaluate_map() { return evaluate_full().map; }

evaluation::EvalResult Trainer::evaluate_full() {
  std::vector<evaluation::ImageEval> images;
  images.reserve(eval_target_.size());
  for (const datagen::DetectionSample& s : eval_target_) {
    evaluation::ImageEval ie;
    ie.detections = model_.detect(s.image(), kApCollectionThreshold);
    ie.truths = s.eval_labels();
    images.push_back(std::move(ie));
  }
  return evaluation::evaluate(images, cfg_.detector.classes, 0.5);
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.iteration = iteration_;
  ck.config = cfg_.to_json();
  ck.config_hash = cfg_.hash();
  ck.best_map = best_map_;
  ck.best_iteration = best_iteration_;
  for (const nn::Param* p : optimizer_->params()) ck.tensors[p->name] = p->value;
  const auto& velocity = optimizer_->velocity();
  const auto& params = optimizer_->params();
  for (std::size_t i = 0; i < params.size(); ++i) ck.velocity[params[i]->name] = velocity[i];
  ck.rng_streams["anchors"] = anchor_rng_.state();
  ck.rng_streams["dropout"] = dropout_rng_.state();
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.config_hash != cfg_.hash()) {
    throw std::invalid_argument("restore: checkpoint was produced by a different config");
  }
  std::vector<Eigen::MatrixXd> velocity;
  for (nn::Param* p : optimizer_->params()) {
    const auto it = ck.tensors.find(p->name);
    if (it == ck.tensors.end()) {
      throw std::invalid_argument("restore: missing tensor " + p->name);
    }
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw std::invalid_argument("restore: shape mismatch for " + p->name);
    }
    p->value = it->second;
    const auto vit = ck.velocity.find(p->name);
    if (vit == ck.velocity.end()) {
      throw std::invalid_argument("restore: missing velocity for " + p->name);
    }
    velocity.push_back(vit->second);
  }
  optimizer_->set_velocity(std::move(velocity));
  anchor_rng_.set_state(ck.rng_streams.at("anchors"));
  dropout_rng_.set_state(ck.rng_streams.at("dropout"));
  iteration_ = ck.iteration;
  best_map_ = ck.best_map;
  best_iteration_ = ck.best_iteration;
  replay_data_order(iteration_);
}

namespace {

/** Keep only the history lines at or before the checkpointed iteration. */
void trim_history(const std::filesystem::path& path, int iteration) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("iteration")) continue;
    if (j["iteration"].get<int>() <= iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const std::string& l : keep) out << l << "\n";
}

}  // namespace

TrainResult Trainer::train(const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  const std::filesystem::path last_path = run_dir / "checkpoint_last.json";
  const std::filesystem::path best_path = run_dir / "checkpoint_best.json";
  const std::filesystem::path history_path = run_dir / "history.ndjson";

  TrainResult result;
  if (std::filesystem::exists(last_path)) {
    restore(load_checkpoint(last_path));
    result.resumed = true;
    trim_history(history_path, iteration_);
  } else {
    std::ofstream(history_path, std::ios::trunc);
  }
  std::ofstream history(history_path, std::ios::app);
  if (!history) throw std::runtime_error("train: cannot write history in " + run_dir.string());

  const int total = cfg_.train.optim.total_iters();
  const std::uint64_t reads_start = datagen::DetectionSample::target_eval_label_reads();
  std::uint64_t reads_eval = 0;

  auto run_eval = [&]() {
    const std::uint64_t before = datagen::DetectionSample::target_eval_label_reads();
    const double map = evaluate_map();
    reads_eval += datagen::DetectionSample::target_eval_label_reads() - before;
    return map;
  };

  while (iteration_ < total) {
    const datagen::DetectionSample& src =
        train_source_[static_cast<std::size_t>(next_index(source_perm_, source_cursor_, source_order_rng_))];
    const datagen::DetectionSample& tgt =
        train_target_[static_cast<std::size_t>(next_index(target_perm_, target_cursor_, target_order_rng_))];
    const double lr = cfg_.train.optim.lr_at(iteration_);
    const StepBreakdown step = train_step(src, tgt, lr);
    ++iteration_;

    const bool eval_now = iteration_ % cfg_.train.eval_every == 0 || iteration_ == total;
    const bool log_now = iteration_ % cfg_.train.history_every == 0 || eval_now || iteration_ == 1;
    double map = -1.0;
    if (eval_now) {
      map = run_eval();
      result.evals.push_back(EvalPoint{iteration_, map});
      if (map > best_map_) {
        best_map_ = map;
        best_iteration_ = iteration_;
        save_checkpoint(best_path, snapshot());
      }
      save_checkpoint(last_path, snapshot());
    }
    if (log_now) {
      nlohmann::json rec{{"iteration", iteration_},
                         {"lr", lr},
                         {"loss_total", step.loss.total},
                         {"loss_detection", step.loss.detection},
                         {"loss_image", step.loss.image},
                         {"loss_instance", step.loss.instance},
                         {"source_instances", step.source_instances},
                         {"target_instances", step.target_instances},
                         {"gate_open_source", step.gate_open_source},
                         {"gate_open_target", step.gate_open_target}};
      if (map >= 0.0) rec["map"] = map;
      history << rec.dump() << "\n";
    }
  }
  history.flush();

  result.iterations = iteration_;
  result.best_map = best_map_ < 0.0 ? 0.0 : best_map_;
  result.best_iteration = best_iteration_;
  result.final_map = result.evals.empty() ? run_eval() : result.evals.back().map;
  const std::uint64_t reads_total = datagen::DetectionSample::target_eval_label_reads() - reads_start;
  result.label_reads_in_training_path = reads_total - reads_eval;
  return result;
}

}  // namespace uadan::training
