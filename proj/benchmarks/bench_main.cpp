#include <benchmark/benchmark.h>

#include <random>

#include "protofuse/fusion.hpp"
#include "protofuse/model.hpp"
#include "protofuse/prototyping.hpp"

using namespace protofuse;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return Matrix::NullaryExpr(r, c, [&] { return normal(rng); });
}

void BM_RefinePrototypes(benchmark::State& state) {
  const Eigen::Index d = 64, n_patches = state.range(0);
  PrototypeSet protos{randn(6, d, 1), {"a", "b", "c", "d", "e", "f"}, std::nullopt};
  SlideBag slide{"s", randn(n_patches, d, 2), {}};
  AttentionParams params{randn(d, d, 3) * 0.1, randn(d, d, 4) * 0.1, randn(d, d, 5) * 0.1, 2};
  for (auto _ : state) benchmark::DoNotOptimize(refine_histology_prototypes(protos, slide, params));
  state.SetItemsProcessed(state.iterations() * n_patches);
}
BENCHMARK(BM_RefinePrototypes)->Arg(64)->Arg(512)->Arg(4096);

void BM_AffinityTopK(benchmark::State& state) {
  const Matrix p = randn(6, 64, 6), g = randn(6, 64, 7);
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(select_top_k(affinity_matrix(p, g), k));
}
BENCHMARK(BM_AffinityTopK)->DenseRange(0, 6, 3);

void BM_ModelForward(benchmark::State& state) {
  const Cohort cohort = generate_synthetic(8, 64, 120, 11);
  TrainConfig cfg;
  cfg.top_k = static_cast<int>(state.range(0));
  const ModelState model = init_model(cohort, cfg);
  const auto& patient = cohort.patients.front();
  const GroupSummary summary = summarize_groups(*patient.genomic);
  for (auto _ : state) {
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, model);
    benchmark::DoNotOptimize(
        forward(tape, model, vars, patient.slides.front(), {GenomicView::Kind::real, &summary}).outputs.scalar());
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
