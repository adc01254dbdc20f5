#include <benchmark/benchmark.h>

#include "n3dmm/ops.hpp"
#include "n3dmm/pipeline.hpp"

using namespace n3dmm;

namespace {

const Mesh& sphere() {
  static const Mesh m = make_icosphere(3, 100.0);
  return m;
}

nn::Tensor batch_input(std::size_t batch, std::size_t m, std::size_t channels, bool grad) {
  Rng rng(1);
  std::vector<double> v(batch * m * channels);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return nn::Tensor({batch, m, channels}, std::move(v), grad);
}

void BM_SpiralTable(benchmark::State& state) {
  const Topology t = build_topology(sphere());
  SpiralConfig c;
  c.hops = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_spiral_table(sphere(), t, c));
}
BENCHMARK(BM_SpiralTable)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Decimate(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(decimate(sphere(), 4));
}
BENCHMARK(BM_Decimate)->Unit(benchmark::kMillisecond);

void BM_SpiralConv(benchmark::State& state) {
  Rng rng(2);
  auto table = std::make_shared<const SpiralTable>(build_spiral_table(sphere(), build_topology(sphere()), {}));
  nn::SpiralConv conv(table, 16, 16, rng);
  const bool backward = state.range(0) != 0;
  nn::Tensor x = batch_input(16, 642, 16, backward);
  for (auto _ : state) {
    nn::Tensor y = conv.forward(x);
    if (backward) nn::backward(nn::sum(y));
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_SpiralConv)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ChebConv(benchmark::State& state) {
  Rng rng(3);
  auto lap = std::make_shared<const CsrMatrix>(nn::scaled_laplacian(sphere()));
  nn::ChebConv conv(lap, 6, 16, 16, rng);
  const bool backward = state.range(0) != 0;
  nn::Tensor x = batch_input(16, 642, 16, backward);
  for (auto _ : state) {
    nn::Tensor y = conv.forward(x);
    if (backward) nn::backward(nn::sum(y));
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_ChebConv)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ModelStep(benchmark::State& state) {
  ModelSpec spec;
  spec.conv = state.range(0) == 0 ? ConvOperator::spiral : ConvOperator::chebyshev;
  spec.factors = {4, 4, 4, 1};
  Bundle b = preprocess(sphere(), spec, SpiralConfig{});
  Neural3DMM model(spec, b.hierarchy, b.tables, 1);
  nn::Adam adam(model.parameters(), nn::AdamOptions{});
  nn::Tensor x = batch_input(16, 642, 3, false);
  for (auto _ : state) {
    adam.zero_grad();
    nn::backward(nn::l1_loss(model.decode(model.encode(x)), x));
    adam.step();
  }
  state.SetLabel(to_string(spec.conv));
}
BENCHMARK(BM_ModelStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
