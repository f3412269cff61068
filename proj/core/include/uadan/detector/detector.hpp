#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "uadan/detector/anchors.hpp"
#include "uadan/nn/layers.hpp"
#include "uadan/tensor.hpp"

namespace uadan::detector {

struct DetectorConfig {
  int in_channels = 3;
  int height = 64;
  int width = 64;
  int stride = 4;     // total backbone downsampling
  int feat_dim = 64;  // backbone output channels D
  std::vector<int> anchor_sides = {8, 16, 24};
  int rpn_hidden = 32;
  int roi_size = 4;        // pooled grid M (output is M x M per channel)
  int instance_dim = 256;  // instance embedding width K
  int classes = 3;         // foreground classes C; scores span C+1 with background
  // Proposal budget after objectness NMS; shared by training and inference so
  // instance-level statistics line up between the two phases.
  int proposals = 32;
  double proposal_nms_iou = 0.7;
  double detect_nms_iou = 0.5;     // per-class NMS among final detections
  double score_threshold = 0.5;    // default reporting confidence
  double eps = 1e-7;               // probability floor inside logarithms

  int feat_h() const { return height / stride; }
  int feat_w() const { return width / stride; }
  void validate() const;
};

/** Raw RPN outputs over the feature grid (r anchors per location). */
struct ProposalMap {
  int u = 0;
  int v = 0;
  int r = 0;
  Eigen::MatrixXd logits;      // (r, u*v) objectness logits
  Eigen::MatrixXd objectness;  // (r, u*v) sigmoid probabilities (unclamped)
  Eigen::MatrixXd deltas;      // (4r, u*v), rows ri*4 + {tx,ty,tw,th}
};

/** A region proposal surviving score ranking and NMS. */
struct Proposal {
  Box box;             // decoded, clipped to the image
  double objectness = 0.0;
  int anchor_index = -1;  // provenance: flat index into the anchor grid
};

/** Per-proposal second-stage prediction. */
struct InstancePrediction {
  Eigen::VectorXd class_probs;  // length C+1, background first
  Box refined_box;
  int proposal_index = -1;
};

/** Final thresholded detection for evaluation and interchange. */
struct DetectionResult {
  int class_id = 0;  // 1-based foreground class
  double score = 0.0;
  Box box;
};

/** Four 3x3 conv + ReLU blocks; two have stride 2 for a total stride of 4. */
class Backbone {
 public:
  struct Cache {
    nn::Conv2d::Cache c1, c2, c3, c4;
    nn::ReluCache r1, r2, r3, r4;
    int h1 = 0, w1 = 0, h3 = 0, w3 = 0;  // intermediate spatial sizes
  };

  Backbone(int in_channels, int feat_dim);

  Tensor3 forward(const Tensor3& image, Cache* cache = nullptr) const;
  Tensor3 backward(const Tensor3& dfeat, const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Conv2d conv1_, conv2_, conv3_, conv4_;
};

/** 3x3 conv trunk with 1x1 objectness and box-delta heads. */
class RpnHead {
 public:
  struct Cache {
    nn::Conv2d::Cache trunk, obj, box;
    nn::ReluCache relu;
  };

  RpnHead(int feat_dim, int hidden, int anchors_per_cell);

  ProposalMap forward(const Tensor3& feat, Cache* cache = nullptr) const;
  /** dlogits: (r, u*v) w.r.t. objectness logits; ddeltas: (4r, u*v). */
  Tensor3 backward(const Eigen::MatrixXd& dlogits, const Eigen::MatrixXd& ddeltas,
                   const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Conv2d trunk_, obj_, box_;
  int anchors_per_cell_;
};

/** Max pooling of a proposal's feature-map footprint onto a fixed M x M grid. */
struct RoiPoolCache {
  std::vector<int> argmax;  // per (channel, bin): source column in the feature grid
};

Tensor3 roi_pool(const Tensor3& grid, const Box& box_pixels, int out_size, int stride,
                 RoiPoolCache* cache = nullptr);
void roi_pool_backward(const Tensor3& dpooled, const RoiPoolCache& cache, Tensor3& dgrid);

/** Flattened pooled features -> K-dim instance embedding (linear + ReLU). */
class RoiProjection {
 public:
  struct Cache {
    nn::Linear::Cache fc;
    nn::ReluCache relu;
  };

  RoiProjection(int in_dim, int out_dim);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& pooled, Cache* cache = nullptr) const;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dinst, const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Linear fc_;
};

struct RcnnOutputs {
  Eigen::MatrixXd class_logits;  // (C+1, n)
  Eigen::MatrixXd class_probs;   // (C+1, n) softmax columns
  Eigen::MatrixXd deltas;        // (4, n) class-agnostic refinement
};

/** Classification and box-refinement heads over instance embeddings. */
class RcnnHead {
 public:
  struct Cache {
    nn::Linear::Cache cls, box;
  };

  RcnnHead(int instance_dim, int classes);

  RcnnOutputs forward(const Eigen::MatrixXd& instances, Cache* cache = nullptr) const;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dlogits, const Eigen::MatrixXd& ddeltas,
                           const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Linear cls_, box_;
};

/**
 * Rank proposals by objectness, decode and clip their boxes, and apply greedy
 * NMS. Ordering ties break on the lower anchor index so the selection is a
 * pure function of the inputs.
 */
std::vector<Proposal> select_proposals(const ProposalMap& pm, const AnchorGrid& anchors,
                                       int img_w, int img_h, int top_k, double nms_iou);

/**
 * The detection network: backbone -> RPN -> ROI pooling -> instance embedding
 * -> classification/regression heads. Stage-level forward/backward methods are
 * public so the training loop can interleave the adversarial branches.
 */
class TwoStageDetector {
 public:
  TwoStageDetector(DetectorConfig cfg, std::uint64_t init_seed);

  const DetectorConfig& config() const { return cfg_; }
  const AnchorGrid& anchors() const { return anchors_; }

  Backbone& backbone() { return backbone_; }
  RpnHead& rpn() { return rpn_; }
  RoiProjection& projection() { return projection_; }
  RcnnHead& rcnn() { return rcnn_; }

  std::vector<Proposal> propose(const ProposalMap& pm) const;

  /** Pool + flatten all proposals: returns (roi_size^2 * feat_dim, n). */
  Eigen::MatrixXd pool_proposals(const Tensor3& feat, const std::vector<Proposal>& proposals,
                                 std::vector<RoiPoolCache>* caches = nullptr) const;
  void pool_proposals_backward(const Eigen::MatrixXd& dpooled,
                               const std::vector<RoiPoolCache>& caches, Tensor3& dfeat) const;

  /** Per-proposal second-stage predictions with decoded refined boxes. */
  std::vector<InstancePrediction> instance_predictions(const RcnnOutputs& out,
                                                       const std::vector<Proposal>& proposals) const;

  /** Full inference: threshold on foreground confidence, then per-class NMS. */
  std::vector<DetectionResult> detect(const Tensor3& image) const;
  std::vector<DetectionResult> detect(const Tensor3& image, double score_threshold) const;

  std::vector<nn::Param*> params();

 private:
  DetectorConfig cfg_;
  Backbone backbone_;
  RpnHead rpn_;
  RoiProjection projection_;
  RcnnHead rcnn_;
  AnchorGrid anchors_;
};

}  // namespace uadan::detector
