// Microbenchmarks for the hot paths: backbone convolutions, ROI pooling,
// full inference, the proposal entropy map, and one complete optimization
// step in the cheapest and the most expensive ablation mode.

#include <benchmark/benchmark.h>

#include "uadan/datagen/datagen.hpp"
#include "uadan/training/trainer.hpp"
#include "uadan/uncertainty/entropy.hpp"

namespace {

using namespace uadan;

training::ExperimentConfig bench_config(AblationMode mode) {
  training::ExperimentConfig cfg = training::ExperimentConfig::defaults();
  cfg.train.mode = mode;
  return cfg;
}

std::vector<datagen::DetectionSample> bench_samples(datagen::Domain domain, int n) {
  const training::ExperimentConfig cfg = training::ExperimentConfig::defaults();
  const datagen::ShiftConfig shift =
      domain == datagen::Domain::target ? cfg.data.shift : datagen::ShiftConfig{};
  std::vector<datagen::DetectionSample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(datagen::generate_sample(cfg.data.dataset, shift, domain, 4242, i));
  }
  return out;
}

void BM_BackboneForward(benchmark::State& state) {
  const training::ExperimentConfig cfg = bench_config(AblationMode::Baseline);
  detector::TwoStageDetector model(cfg.detector, 1);
  const auto samples = bench_samples(datagen::Domain::source, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.backbone().forward(samples[0].image()));
  }
}
BENCHMARK(BM_BackboneForward);

void BM_RoiPool(benchmark::State& state) {
  const training::ExperimentConfig cfg = bench_config(AblationMode::Baseline);
  detector::TwoStageDetector model(cfg.detector, 1);
  const auto samples = bench_samples(datagen::Domain::source, 1);
  const Tensor3 feat = model.backbone().forward(samples[0].image());
  const Box box{8.0, 8.0, 40.0, 40.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        detector::roi_pool(feat, box, cfg.detector.roi_size, cfg.detector.stride));
  }
}
BENCHMARK(BM_RoiPool);

void BM_EntropyMap(benchmark::State& state) {
  const training::ExperimentConfig cfg = bench_config(AblationMode::Baseline);
  detector::TwoStageDetector model(cfg.detector, 1);
  const auto samples = bench_samples(datagen::Domain::source, 1);
  const detector::ProposalMap pm = model.rpn().forward(model.backbone().forward(samples[0].image()));
  for (auto _ : state) {
    benchmark::DoNotOptimize(uncertainty::proposal_entropy_map(pm));
  }
}
BENCHMARK(BM_EntropyMap);

void BM_Detect(benchmark::State& state) {
  const training::ExperimentConfig cfg = bench_config(AblationMode::Baseline);
  detector::TwoStageDetector model(cfg.detector, 1);
  const auto samples = bench_samples(datagen::Domain::target, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.detect(samples[0].image(), 0.05));
  }
}
BENCHMARK(BM_Detect);

void bench_train_step(benchmark::State& state, AblationMode mode) {
  training::Trainer trainer(bench_config(mode), bench_samples(datagen::Domain::source, 4),
                            bench_samples(datagen::Domain::target, 4),
                            bench_samples(datagen::Domain::target, 2));
  const auto src = bench_samples(datagen::Domain::source, 1);
  const auto tgt = bench_samples(datagen::Domain::target, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.train_step(src[0], tgt[0], 1e-3));
  }
}

void BM_TrainStepBaseline(benchmark::State& state) {
  bench_train_step(state, AblationMode::Baseline);
}
BENCHMARK(BM_TrainStepBaseline);

void BM_TrainStepUaDAN(benchmark::State& state) { bench_train_step(state, AblationMode::UaDAN); }
BENCHMARK(BM_TrainStepUaDAN);

}  // namespace

BENCHMARK_MAIN();
