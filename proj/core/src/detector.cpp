#include "uadan/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace uadan::detector {

void DetectorConfig::validate() const {
  if (in_channels <= 0 || height <= 0 || width <= 0) {
    throw std::invalid_argument("detector: invalid image shape");
  }
  if (stride != 4) {
    throw std::invalid_argument("detector: backbone downsampling is fixed at stride 4");
  }
  if (height % stride != 0 || width % stride != 0) {
    throw std::invalid_argument("detector: image size must be divisible by the stride");
  }
  if (feat_dim <= 0 || rpn_hidden <= 0 || roi_size <= 0 || instance_dim <= 0) {
    throw std::invalid_argument("detector: invalid layer widths");
  }
  if (classes < 1) throw std::invalid_argument("detector: need at least one foreground class");
  if (anchor_sides.empty()) throw std::invalid_argument("detector: no anchor sides");
  for (int s : anchor_sides) {
    if (s <= 0) throw std::invalid_argument("detector: anchor sides must be positive");
  }
  if (proposals < 1) throw std::invalid_argument("detector: proposal budget must be positive");
  if (proposal_nms_iou <= 0.0 || proposal_nms_iou > 1.0 || detect_nms_iou <= 0.0 ||
      detect_nms_iou > 1.0) {
    throw std::invalid_argument("detector: NMS IoU must be in (0,1]");
  }
  if (score_threshold < 0.0 || score_threshold > 1.0) {
    throw std::invalid_argument("detector: score threshold must be in [0,1]");
  }
  if (eps <= 0.0 || eps >= 0.1) throw std::invalid_argument("detector: eps out of range");
}

// ---------------------------------------------------------------------------
// Backbone

Backbone::Backbone(int in_channels, int feat_dim)
    : conv1_("backbone.conv1", in_channels, 16, 3, 2, 1),
      conv2_("backbone.conv2", 16, 24, 3, 1, 1),
      conv3_("backbone.conv3", 24, 40, 3, 2, 1),
      conv4_("backbone.conv4", 40, feat_dim, 3, 1, 1) {}

void Backbone::init(util::Rng& rng) {
  nn::init_he(conv1_.weight(), conv1_.fan_in(), rng);
  nn::init_he(conv2_.weight(), conv2_.fan_in(), rng);
  nn::init_he(conv3_.weight(), conv3_.fan_in(), rng);
  nn::init_he(conv4_.weight(), conv4_.fan_in(), rng);
}

Tensor3 Backbone::forward(const Tensor3& image, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  Tensor3 x = nn::relu(conv1_.forward(image, &c->c1), &c->r1);
  c->h1 = x.h;
  c->w1 = x.w;
  x = nn::relu(conv2_.forward(x, &c->c2), &c->r2);
  x = nn::relu(conv3_.forward(x, &c->c3), &c->r3);
  c->h3 = x.h;
  c->w3 = x.w;
  return nn::relu(conv4_.forward(x, &c->c4), &c->r4);
}

Tensor3 Backbone::backward(const Tensor3& dfeat, const Cache& cache) {
  Tensor3 d = conv4_.backward(nn::relu_backward(dfeat, cache.r4), cache.c4);
  d = conv3_.backward(nn::relu_backward(d, cache.r3), cache.c3);
  d = conv2_.backward(nn::relu_backward(d, cache.r2), cache.c2);
  return conv1_.backward(nn::relu_backward(d, cache.r1), cache.c1);
}

std::vector<nn::Param*> Backbone::params() {
  std::vector<nn::Param*> out;
  for (nn::Conv2d* c : {&conv1_, &conv2_, &conv3_, &conv4_}) {
    for (nn::Param* p : c->params()) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// RPN

RpnHead::RpnHead(int feat_dim, int hidden, int anchors_per_cell)
    : trunk_("rpn.trunk", feat_dim, hidden, 3, 1, 1),
      obj_("rpn.obj", hidden, anchors_per_cell, 1, 1, 0),
      box_("rpn.box", hidden, 4 * anchors_per_cell, 1, 1, 0),
      anchors_per_cell_(anchors_per_cell) {}

void RpnHead::init(util::Rng& rng) {
  nn::init_gaussian(trunk_.weight(), 0.01, rng);
  nn::init_gaussian(obj_.weight(), 0.01, rng);
  nn::init_gaussian(box_.weight(), 0.01, rng);
}

ProposalMap RpnHead::forward(const Tensor3& feat, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  const Tensor3 t = nn::relu(trunk_.forward(feat, &c->trunk), &c->relu);
  const Tensor3 obj = obj_.forward(t, &c->obj);
  const Tensor3 box = box_.forward(t, &c->box);
  ProposalMap pm;
  pm.u = feat.h;
  pm.v = feat.w;
  pm.r = anchors_per_cell_;
  pm.logits = obj.data;
  pm.objectness = obj.data.unaryExpr([](double z) { return nn::sigmoid(z); });
  pm.deltas = box.data;
  return pm;
}

Tensor3 RpnHead::backward(const Eigen::MatrixXd& dlogits, const Eigen::MatrixXd& ddeltas,
                          const Cache& cache) {
  // The 1x1 heads only consume dy as a (channels, locations) matrix, so the
  // true (u, v) extent is recovered from the cached trunk geometry.
  Tensor3 dobj(static_cast<int>(dlogits.rows()), cache.obj.in_h, cache.obj.in_w);
  dobj.data = dlogits;
  Tensor3 dbox(static_cast<int>(ddeltas.rows()), cache.box.in_h, cache.box.in_w);
  dbox.data = ddeltas;
  Tensor3 dtrunk = obj_.backward(dobj, cache.obj);
  dtrunk.data += box_.backward(dbox, cache.box).data;
  return trunk_.backward(nn::relu_backward(dtrunk, cache.relu), cache.trunk);
}

std::vector<nn::Param*> RpnHead::params() {
  std::vector<nn::Param*> out;
  for (nn::Conv2d* c : {&trunk_, &obj_, &box_}) {
    for (nn::Param* p : c->params()) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ROI pooling

Tensor3 roi_pool(const Tensor3& grid, const Box& box_pixels, int out_size, int stride,
                 RoiPoolCache* cache) {
  if (!box_pixels.valid()) throw std::invalid_argument("roi_pool: degenerate roi");
  const int x_begin = std::clamp(static_cast<int>(std::floor(box_pixels.x1 / stride)), 0, grid.w);
  const int x_end = std::clamp(static_cast<int>(std::ceil(box_pixels.x2 / stride)), 0, grid.w);
  const int y_begin = std::clamp(static_cast<int>(std::floor(box_pixels.y1 / stride)), 0, grid.h);
  const int y_end = std::clamp(static_cast<int>(std::ceil(box_pixels.y2 / stride)), 0, grid.h);
  const int nx = x_end - x_begin;
  const int ny = y_end - y_begin;
  if (nx <= 0 || ny <= 0) {
    throw std::invalid_argument("roi_pool: roi projects to zero feature cells");
  }
  Tensor3 out(grid.ch, out_size, out_size);
  if (cache != nullptr) cache->argmax.assign(static_cast<std::size_t>(grid.ch) * out_size * out_size, -1);
  for (int by = 0; by < out_size; ++by) {
    int ys = (by * ny) / out_size;
    int ye = ((by + 1) * ny + out_size - 1) / out_size;
    // An undersized footprint leaves some bins empty; replicate the nearest
    // cell instead so the pooled grid is always fully populated.
    ye = std::min(std::max(ye, ys + 1), ny);
    if (ys >= ny) ys = ny - 1;
    for (int bx = 0; bx < out_size; ++bx) {
      int xs = (bx * nx) / out_size;
      int xe = ((bx + 1) * nx + out_size - 1) / out_size;
      xe = std::min(std::max(xe, xs + 1), nx);
      if (xs >= nx) xs = nx - 1;
      for (int c = 0; c < grid.ch; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int best_col = -1;
        for (int y = y_begin + ys; y < y_begin + ye; ++y) {
          for (int x = x_begin + xs; x < x_begin + xe; ++x) {
            const double v = grid.data(c, y * grid.w + x);
            if (v > best) {
              best = v;
              best_col = y * grid.w + x;
            }
          }
        }
        out.at(c, by, bx) = best;
        if (cache != nullptr) {
          cache->argmax[(static_cast<std::size_t>(c) * out_size + by) * out_size + bx] = best_col;
        }
      }
    }
  }
  return out;
}

void roi_pool_backward(const Tensor3& dpooled, const RoiPoolCache& cache, Tensor3& dgrid) {
  const int m = dpooled.h;
  if (cache.argmax.size() != static_cast<std::size_t>(dpooled.ch) * m * m) {
    throw std::logic_error("roi_pool_backward: cache does not match pooled shape");
  }
  for (int c = 0; c < dpooled.ch; ++c) {
    for (int by = 0; by < m; ++by) {
      for (int bx = 0; bx < m; ++bx) {
        const int col = cache.argmax[(static_cast<std::size_t>(c) * m + by) * m + bx];
        dgrid.data(c, col) += dpooled.at(c, by, bx);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Instance embedding and RCNN heads

RoiProjection::RoiProjection(int in_dim, int out_dim) : fc_("proj.fc", in_dim, out_dim) {}

void RoiProjection::init(util::Rng& rng) { nn::init_he(fc_.weight(), fc_.in_dim(), rng); }

Eigen::MatrixXd RoiProjection::forward(const Eigen::MatrixXd& pooled, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  return nn::relu(fc_.forward(pooled, &c->fc), &c->relu);
}

Eigen::MatrixXd RoiProjection::backward(const Eigen::MatrixXd& dinst, const Cache& cache) {
  return fc_.backward(nn::relu_backward(dinst, cache.relu), cache.fc);
}

std::vector<nn::Param*> RoiProjection::params() { return fc_.params(); }

RcnnHead::RcnnHead(int instance_dim, int classes)
    : cls_("rcnn.cls", instance_dim, classes + 1), box_("rcnn.box", instance_dim, 4) {}

void RcnnHead::init(util::Rng& rng) {
  nn::init_gaussian(cls_.weight(), 0.01, rng);
  nn::init_gaussian(box_.weight(), 0.01, rng);
}

RcnnOutputs RcnnHead::forward(const Eigen::MatrixXd& instances, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  RcnnOutputs out;
  out.class_logits = cls_.forward(instances, &c->cls);
  out.class_probs = nn::softmax_cols(out.class_logits);
  out.deltas = box_.forward(instances, &c->box);
  return out;
}

Eigen::MatrixXd RcnnHead::backward(const Eigen::MatrixXd& dlogits, const Eigen::MatrixXd& ddeltas,
                                   const Cache& cache) {
  return cls_.backward(dlogits, cache.cls) + box_.backward(ddeltas, cache.box);
}

std::vector<nn::Param*> RcnnHead::params() {
  std::vector<nn::Param*> out = cls_.params();
  for (nn::Param* p : box_.params()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Proposal selection

std::vector<Proposal> select_proposals(const ProposalMap& pm, const AnchorGrid& anchors,
                                       int img_w, int img_h, int top_k, double nms_iou) {
  if (pm.u != anchors.u || pm.v != anchors.v || pm.r != anchors.r) {
    throw std::invalid_argument("select_proposals: proposal map does not match the anchor grid");
  }
  struct Cand {
    double score;
    int idx;
    Box box;
  };
  std::vector<Cand> cands;
  cands.reserve(static_cast<std::size_t>(anchors.size()));
  for (int a = 0; a < anchors.size(); ++a) {
    const int loc = a / anchors.r;
    const int ri = a % anchors.r;
    const double score = pm.objectness(ri, loc);
    const Box decoded =
        decode_box(anchors.boxes[static_cast<std::size_t>(a)], pm.deltas(ri * 4 + 0, loc),
                   pm.deltas(ri * 4 + 1, loc), pm.deltas(ri * 4 + 2, loc), pm.deltas(ri * 4 + 3, loc));
    const Box clipped = clip_box(decoded, img_w, img_h);
    if (clipped.width() < 1e-3 || clipped.height() < 1e-3) continue;
    cands.push_back(Cand{score, a, clipped});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.idx < b.idx;
  });
  std::vector<Proposal> kept;
  for (const Cand& c : cands) {
    if (static_cast<int>(kept.size()) >= top_k) break;
    bool suppressed = false;
    for (const Proposal& k : kept) {
      if (iou(c.box, k.box) > nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(Proposal{c.box, c.score, c.idx});
  }
  return kept;
}

// ---------------------------------------------------------------------------
// TwoStageDetector

TwoStageDetector::TwoStageDetector(DetectorConfig cfg, std::uint64_t init_seed)
    : cfg_([&cfg] {
        cfg.validate();
        return cfg;
      }()),
      backbone_(cfg_.in_channels, cfg_.feat_dim),
      rpn_(cfg_.feat_dim, cfg_.rpn_hidden, static_cast<int>(cfg_.anchor_sides.size())),
      projection_(cfg_.roi_size * cfg_.roi_size * cfg_.feat_dim, cfg_.instance_dim),
      rcnn_(cfg_.instance_dim, cfg_.classes),
      anchors_(make_anchors(cfg_.feat_h(), cfg_.feat_w(), cfg_.stride, cfg_.anchor_sides)) {
  util::Rng rng_backbone = util::Rng::stream(init_seed, "init.backbone");
  backbone_.init(rng_backbone);
  util::Rng rng_proj = util::Rng::stream(init_seed, "init.projection");
  projection_.init(rng_proj);
  util::Rng rng_heads = util::Rng::stream(init_seed, "init.heads");
  rpn_.init(rng_heads);
  rcnn_.init(rng_heads);
}

std::vector<Proposal> TwoStageDetector::propose(const ProposalMap& pm) const {
  return select_proposals(pm, anchors_, cfg_.width, cfg_.height, cfg_.proposals,
                          cfg_.proposal_nms_iou);
}

Eigen::MatrixXd TwoStageDetector::pool_proposals(const Tensor3& feat,
                                                 const std::vector<Proposal>& proposals,
                                                 std::vector<RoiPoolCache>* caches) const {
  const int m = cfg_.roi_size;
  const int dim = m * m * cfg_.feat_dim;
  Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(proposals.size()));
  if (caches != nullptr) caches->assign(proposals.size(), RoiPoolCache{});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    RoiPoolCache* cache = caches != nullptr ? &(*caches)[i] : nullptr;
    const Tensor3 pooled = roi_pool(feat, proposals[i].box, m, cfg_.stride, cache);
    out.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(pooled.data.data(), dim);
  }
  return out;
}

void TwoStageDetector::pool_proposals_backward(const Eigen::MatrixXd& dpooled,
                                               const std::vector<RoiPoolCache>& caches,
                                               Tensor3& dfeat) const {
  const int m = cfg_.roi_size;
  for (std::size_t i = 0; i < caches.size(); ++i) {
    Tensor3 dp(cfg_.feat_dim, m, m);
    dp.data = Eigen::Map<const Eigen::MatrixXd>(dpooled.col(static_cast<Eigen::Index>(i)).data(),
                                                cfg_.feat_dim, m * m);
    roi_pool_backward(dp, caches[i], dfeat);
  }
}

std::vector<InstancePrediction> TwoStageDetector::instance_predictions(
    const RcnnOutputs& out, const std::vector<Proposal>& proposals) const {
  std::vector<InstancePrediction> preds;
  preds.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Eigen::Index j = static_cast<Eigen::Index>(i);
    InstancePrediction p;
    p.class_probs = out.class_probs.col(j);
    p.refined_box = clip_box(decode_box(proposals[i].box, out.deltas(0, j), out.deltas(1, j),
                                        out.deltas(2, j), out.deltas(3, j)),
                             cfg_.width, cfg_.height);
    p.proposal_index = static_cast<int>(i);
    preds.push_back(std::move(p));
  }
  return preds;
}

std::vector<DetectionResult> TwoStageDetector::detect(const Tensor3& image) const {
  return detect(image, cfg_.score_threshold);
}

std::vector<DetectionResult> TwoStageDetector::detect(const Tensor3& image,
                                                      double score_threshold) const {
  const Tensor3 feat = backbone_.forward(image);
  const ProposalMap pm = rpn_.forward(feat);
  const std::vector<Proposal> proposals = propose(pm);
  if (proposals.empty()) return {};
  const Eigen::MatrixXd pooled = pool_proposals(feat, proposals);
  const Eigen::MatrixXd inst = projection_.forward(pooled);
  const RcnnOutputs out = rcnn_.forward(inst);
  const std::vector<InstancePrediction> preds = instance_predictions(out, proposals);

  struct Cand {
    int class_id;
    double score;
    Box box;
    int order;
  };
  std::vector<Cand> cands;
  for (const InstancePrediction& p : preds) {
    Eigen::Index best = 0;
    p.class_probs.maxCoeff(&best);
    if (best == 0) continue;  // background wins
    const double score = p.class_probs(best);
    if (score < score_threshold) continue;
    if (p.refined_box.width() < 1e-3 || p.refined_box.height() < 1e-3) continue;
    cands.push_back(Cand{static_cast<int>(best), score, p.refined_box, p.proposal_index});
  }
  // Deterministic rank: score desc, larger box first, then input order.
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
    return a.order < b.order;
  });
  std::vector<DetectionResult> results;
  for (const Cand& c : cands) {
    bool suppressed = false;
    for (const DetectionResult& k : results) {
      if (k.class_id == c.class_id && iou(c.box, k.box) > cfg_.detect_nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) results.push_back(DetectionResult{c.class_id, c.score, c.box});
  }
  return results;
}

std::vector<nn::Param*> TwoStageDetector::params() {
  std::vector<nn::Param*> out = backbone_.params();
  for (nn::Param* p : rpn_.params()) out.push_back(p);
  for (nn::Param* p : projection_.params()) out.push_back(p);
  for (nn::Param* p : rcnn_.params()) out.push_back(p);
  return out;
}

}  // namespace uadan::detector
