#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "uadan/ablation_mode.hpp"
#include "uadan/adaptation/grl.hpp"
#include "uadan/adaptation/losses.hpp"
#include "uadan/util/rng.hpp"

using namespace uadan;
using namespace uadan::adaptation;
using testutil::same_bits;
using util::Rng;

namespace {

const double kEps = 1e-7;

DomainPrediction prediction(const Eigen::VectorXd& logits) {
  DomainPrediction p;
  p.logits = logits;
  p.probs = logits.unaryExpr([](double z) { return nn::sigmoid(z); });
  return p;
}

DomainPrediction random_prediction(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd logits(n);
  for (Eigen::Index i = 0; i < n; ++i) logits(i) = rng.normal() * 2.0;
  return prediction(logits);
}

Eigen::VectorXd random_weights(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = rng.uniform(0.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("weighted domain bce matches the hand formula and its gradient") {
  Eigen::VectorXd logits(3);
  logits << 0.0, 2.0, -1.0;
  const DomainPrediction p = prediction(logits);
  Eigen::VectorXd w(3);
  w << 1.0, 0.5, 2.0;

  // Label 1 (target): loss_i = -w_i * log(p_i), averaged.
  const double expect = -(1.0 * std::log(0.5) + 0.5 * std::log(nn::sigmoid(2.0)) +
                          2.0 * std::log(nn::sigmoid(-1.0))) /
                        3.0;
  Eigen::VectorXd dlogits;
  const double loss = weighted_domain_bce(p.probs, 1.0, w, kEps, &dlogits);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  // dLoss/dlogit_i = w_i * (p_i - label) / n, checked against differences.
  REQUIRE(dlogits.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(dlogits(i) == doctest::Approx(w(i) * (p.probs(i) - 1.0) / 3.0).epsilon(1e-12));
    const double h = 1e-6;
    Eigen::VectorXd up = logits, down = logits;
    up(i) += h;
    down(i) -= h;
    const double fd = (weighted_domain_bce(prediction(up).probs, 1.0, w, kEps) -
                       weighted_domain_bce(prediction(down).probs, 1.0, w, kEps)) /
                      (2.0 * h);
    CHECK(dlogits(i) == doctest::Approx(fd).epsilon(1e-5));
  }

  // Empty inputs contribute nothing.
  Eigen::VectorXd none;
  CHECK(weighted_domain_bce(none, 0.0, none, kEps, &dlogits) == 0.0);
  CHECK(dlogits.size() == 0);

  // Extreme probabilities stay finite thanks to the eps floor.
  Eigen::VectorXd sure(1);
  sure << 1.0;
  CHECK(std::isfinite(weighted_domain_bce(sure, 0.0, Eigen::VectorXd::Ones(1), kEps)));

  Eigen::VectorXd short_w(2);
  short_w << 1.0, 1.0;
  CHECK_THROWS_AS((void)weighted_domain_bce(p.probs, 1.0, short_w, kEps), std::invalid_argument);
}

TEST_CASE("plain image loss equals uncertainty-aware loss with unit weights") {
  Rng rng(808);
  const DomainPrediction src = random_prediction(12, rng);
  const DomainPrediction tgt = random_prediction(12, rng);

  uncertainty::EntropyMap ones;
  ones.u = 3;
  ones.v = 4;
  ones.values = Eigen::VectorXd::Ones(12);

  PairGrads g_al, g_ua;
  const double al = image_al_loss(src, tgt, kEps, &g_al);
  const double ua = image_ua_loss(ones, src, ones, tgt, kEps, &g_ua);
  CHECK(al == doctest::Approx(ua).epsilon(1e-12));
  CHECK(same_bits(g_al.d_source, g_ua.d_source));
  CHECK(same_bits(g_al.d_target, g_ua.d_target));

  // Source locations are pushed toward label 0, target toward label 1.
  for (Eigen::Index i = 0; i < 12; ++i) {
    CHECK(g_al.d_source(i) == doctest::Approx(src.probs(i) / 12.0));
    CHECK(g_al.d_target(i) == doctest::Approx((tgt.probs(i) - 1.0) / 12.0));
  }

  // Scaling the entropy map scales loss and gradients linearly.
  uncertainty::EntropyMap twos = ones;
  twos.values *= 2.0;
  PairGrads g2;
  const double ua2 = image_ua_loss(twos, src, twos, tgt, kEps, &g2);
  CHECK(ua2 == doctest::Approx(2.0 * ua).epsilon(1e-12));
  CHECK(g2.d_source.isApprox(2.0 * g_ua.d_source, 1e-12));
  CHECK(g2.d_target.isApprox(2.0 * g_ua.d_target, 1e-12));

  // A zero-entropy location contributes neither loss nor gradient.
  uncertainty::EntropyMap gap = ones;
  gap.values(5) = 0.0;
  PairGrads g_gap;
  (void)image_ua_loss(gap, src, gap, tgt, kEps, &g_gap);
  CHECK(g_gap.d_source(5) == 0.0);
  CHECK(g_gap.d_target(5) == 0.0);
}

TEST_CASE("gated instance loss reduces to its neighbours at the xi extremes") {
  Rng rng(809);
  uncertainty::GateConfig open;
  open.xi = 1.0;  // instance proposal entropies top out at ln 2 < 1
  uncertainty::GateConfig shut;
  shut.xi = 0.0;

  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index ns = rng.uniform_int(1, 6);
    const Eigen::Index nt = rng.uniform_int(1, 6);
    const DomainPrediction src = random_prediction(ns, rng);
    const DomainPrediction tgt = random_prediction(nt, rng);
    const Eigen::VectorXd det_s = random_weights(ns, rng);
    const Eigen::VectorXd det_t = random_weights(nt, rng);
    Eigen::VectorXd ins_s = random_weights(ns, rng) * std::log(2.0);
    Eigen::VectorXd ins_t = random_weights(nt, rng) * std::log(2.0);

    PairGrads g_ua, g_ug;
    const double ua = instance_ua_loss(det_s, src, det_t, tgt, kEps, &g_ua);
    const double ug = instance_ug_loss(det_s, ins_s, src, det_t, ins_t, tgt, open, kEps, &g_ug);
    // Always-open gate: bit-for-bit identical to the ungated weighted loss.
    CHECK(ug == ua);
    CHECK(same_bits(g_ug.d_source, g_ua.d_source));
    CHECK(same_bits(g_ug.d_target, g_ua.d_target));

    PairGrads g_zero;
    const double closed =
        instance_ug_loss(det_s, ins_s, src, det_t, ins_t, tgt, shut, kEps, &g_zero);
    CHECK(closed == 0.0);
    CHECK(g_zero.d_source.isZero(0.0));
    CHECK(g_zero.d_target.isZero(0.0));
  }
}

TEST_CASE("gate boundary is strict inside the instance loss") {
  uncertainty::GateConfig gate;
  gate.xi = 0.5;
  Eigen::VectorXd logits(2);
  logits << 0.3, -0.7;
  const DomainPrediction src = prediction(logits);
  const DomainPrediction tgt = prediction(logits);
  Eigen::VectorXd det(2), ins(2);
  det << 0.8, 0.6;
  ins << 0.5, 0.49999;  // first sits exactly on the threshold: excluded

  PairGrads grads;
  const double loss = instance_ug_loss(det, ins, src, det, ins, tgt, gate, kEps, &grads);
  CHECK(grads.d_source(0) == 0.0);
  CHECK(grads.d_source(1) != 0.0);
  CHECK(grads.d_target(0) == 0.0);

  // Only proposal 1 participates on each side.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(2);
  w(1) = det(1);
  const double expect = weighted_domain_bce(src.probs, kSourceLabel, w, kEps) +
                        weighted_domain_bce(tgt.probs, kTargetLabel, w, kEps);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zero instance weight silences loss and gradient entirely") {
  Rng rng(810);
  const DomainPrediction src = random_prediction(5, rng);
  const DomainPrediction tgt = random_prediction(5, rng);
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(5);

  PairGrads grads;
  CHECK(instance_ua_loss(zeros, src, zeros, tgt, kEps, &grads) == 0.0);
  CHECK(grads.d_source.isZero(0.0));
  CHECK(grads.d_target.isZero(0.0));

  // Doubling a weight vector doubles loss and gradient exactly (linearity).
  const Eigen::VectorXd w = random_weights(5, rng);
  PairGrads g1, g2;
  const double l1 = instance_ua_loss(w, src, w, tgt, kEps, &g1);
  const double l2 = instance_ua_loss(2.0 * w, src, 2.0 * w, tgt, kEps, &g2);
  CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(g2.d_source(i) == doctest::Approx(2.0 * g1.d_source(i)).epsilon(1e-12));
  }
}

TEST_CASE("total loss assembles exactly the terms each mode uses") {
  AdversarialTerms terms;
  terms.image_al = 0.11;
  terms.image_ua = 0.22;
  terms.instance_al = 0.33;
  terms.instance_ua = 0.44;
  terms.instance_ug = 0.55;
  const double det = 1.0;

  auto check = [&](AblationMode mode, double image, double instance) {
    const LossBreakdown b = total_loss(mode, det, terms);
    CHECK(b.detection == det);
    CHECK(b.image == image);
    CHECK(b.instance == instance);
    CHECK(b.total == doctest::Approx(det + image + instance).epsilon(1e-12));
  };

  check(AblationMode::Baseline, 0.0, 0.0);
  check(AblationMode::ImageAL, terms.image_al, 0.0);
  check(AblationMode::ImageUaAL, terms.image_ua, 0.0);
  check(AblationMode::InstanceAL, 0.0, terms.instance_al);
  check(AblationMode::InstanceUaAL, 0.0, terms.instance_ua);
  check(AblationMode::UaDAN_noUgCL, terms.image_ua, terms.instance_ua);
  check(AblationMode::UaDAN, terms.image_ua, terms.instance_ug);
}

TEST_CASE("gradient reversal flips and scales without touching the forward pass") {
  Eigen::MatrixXd dy(2, 2);
  dy << 1.0, -2.0, 0.5, 0.0;
  const Eigen::MatrixXd dx = grl_backward(dy, 0.5);
  CHECK(dx(0, 0) == -0.5);
  CHECK(dx(0, 1) == 1.0);
  CHECK(dx(1, 1) == 0.0);

  Tensor3 t(1, 2, 2);
  t.data = dy;
  CHECK(same_bits(grl_backward(t, 1.0).data, (-dy).eval()));
}

TEST_CASE("ablation modes expose the right capability flags") {
  using enum AblationMode;
  CHECK(!uses_target_stream(Baseline));
  for (AblationMode m : {ImageAL, ImageUaAL, InstanceAL, InstanceUaAL, UaDAN_noUgCL, UaDAN}) {
    CHECK(uses_target_stream(m));
  }

  CHECK(!uses_image_alignment(Baseline));
  CHECK(uses_image_alignment(ImageAL));
  CHECK(!image_alignment_weighted(ImageAL));
  CHECK(image_alignment_weighted(ImageUaAL));
  CHECK(!uses_image_alignment(InstanceAL));
  CHECK(uses_image_alignment(UaDAN));
  CHECK(image_alignment_weighted(UaDAN));

  CHECK(!uses_instance_alignment(ImageUaAL));
  CHECK(uses_instance_alignment(InstanceAL));
  CHECK(instance_weighting(InstanceAL) == InstanceWeighting::plain);
  CHECK(instance_weighting(InstanceUaAL) == InstanceWeighting::entropy);
  CHECK(instance_weighting(UaDAN_noUgCL) == InstanceWeighting::entropy);
  CHECK(instance_weighting(UaDAN) == InstanceWeighting::gated);
  CHECK(instance_weighting(Baseline) == InstanceWeighting::none);

  for (AblationMode m :
       {Baseline, ImageAL, ImageUaAL, InstanceAL, InstanceUaAL, UaDAN_noUgCL, UaDAN}) {
    CHECK(ablation_mode_from_string(to_string(m)) == m);
  }
  CHECK(to_string(UaDAN) == "uadan");
  CHECK(to_string(UaDAN_noUgCL) == "uadan_no_ugcl");
  CHECK_THROWS_AS((void)ablation_mode_from_string("hybrid"), std::invalid_argument);
}
