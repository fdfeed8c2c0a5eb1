#include <benchmark/benchmark.h>

#include "stylemark/geometry.hpp"
#include "stylemark/metrics.hpp"
#include "stylemark/random.hpp"
#include "stylemark/style.hpp"

using namespace stylemark;

namespace {

LandmarkSet random_shape(Rng& rng, int n, double extent) {
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(0, extent), rng.uniform(0, extent)});
  return LandmarkSet::from_points(pts);
}

Image noise(Rng& rng, int side) {
  Image img(side, side, 3);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

void BM_Nme(benchmark::State& state) {
  Rng rng(1);
  const auto gt = random_shape(rng, 48, 128);
  const auto pred = random_shape(rng, 48, 128);
  for (auto _ : state) benchmark::DoNotOptimize(nme(pred, gt));
}
BENCHMARK(BM_Nme);

void BM_HullMask(benchmark::State& state) {
  Rng rng(2);
  const int side = static_cast<int>(state.range(0));
  const auto lm = random_shape(rng, 48, side - 1);
  for (auto _ : state) benchmark::DoNotOptimize(hull_mask(lm, side, side));
}
BENCHMARK(BM_HullMask)->Arg(128)->Arg(512);

void BM_ColorStatTransfer(benchmark::State& state) {
  Rng rng(3);
  const int side = static_cast<int>(state.range(0));
  const Image content = noise(rng, side);
  const Image style = noise(rng, side);
  for (auto _ : state) benchmark::DoNotOptimize(color_stat_transfer(content, style));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ColorStatTransfer)->Arg(128)->Arg(256);

void BM_HistogramMatch(benchmark::State& state) {
  Rng rng(4);
  const int side = static_cast<int>(state.range(0));
  const Image content = noise(rng, side);
  const Image style = noise(rng, side);
  for (auto _ : state) benchmark::DoNotOptimize(histogram_match(content, style));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_HistogramMatch)->Arg(128)->Arg(256);

void BM_RotateImage(benchmark::State& state) {
  Rng rng(5);
  const int side = static_cast<int>(state.range(0));
  const Image img = noise(rng, side);
  for (auto _ : state) benchmark::DoNotOptimize(rotate_image(img, 17.5));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_RotateImage)->Arg(128)->Arg(256);

}  // namespace
BENCHMARK_MAIN();
