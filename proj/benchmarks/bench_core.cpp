#include <benchmark/benchmark.h>

#include "mlsr/image.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/model.hpp"
#include "mlsr/ops.hpp"
#include "mlsr/ssm.hpp"
#include "mlsr/train.hpp"

using namespace mlsr;

namespace {

Tensor<float> rand_f32(Shape shape, Rng& rng) {
    return Tensor<float>::uniform(std::move(shape), rng, -1.0f, 1.0f);
}

void BM_matmul(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    Rng rng(1);
    auto a = rand_f32({n, n}, rng);
    auto b = rand_f32({n, n}, rng);
    for (auto _ : state) {
        auto y = matmul(a, b);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_conv2d(benchmark::State& state) {
    const std::int64_t c = state.range(0);
    Rng rng(2);
    auto input = rand_f32({c, 64, 64}, rng);
    auto weight = rand_f32({c, c, 3, 3}, rng);
    auto bias = rand_f32({c}, rng);
    for (auto _ : state) {
        auto y = conv2d(input, weight, bias, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * c * c * 9 * 64 * 64);
}
BENCHMARK(BM_conv2d)->Arg(16)->Arg(32)->Arg(60);

void BM_selective_scan(benchmark::State& state) {
    const std::int64_t l = state.range(0);
    Rng rng(3);
    SsmParams<float> p;
    p.u = rand_f32({l, 64}, rng);
    p.delta = Tensor<float>::uniform({l, 64}, rng, 0.01f, 0.5f);
    p.b = rand_f32({l, 16}, rng);
    p.c = rand_f32({l, 16}, rng);
    p.a = Tensor<float>::uniform({64, 16}, rng, -2.0f, -0.1f);
    p.d = rand_f32({64}, rng);
    for (auto _ : state) {
        auto y = selective_scan(p);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 6 * l * 64 * 16);
}
BENCHMARK(BM_selective_scan)->Arg(256)->Arg(1024)->Arg(4096);

void BM_mixer_forward(benchmark::State& state) {
    MixerConfig cfg;
    cfg.d_model = 32;
    cfg.rank = 16;
    ParamRegistry<float> reg;
    LayerBook book;
    MambaMixer<float> mixer(cfg, reg, book, "mixer", 7);
    Rng rng(4);
    auto x = rand_f32({state.range(0), 32}, rng);
    for (auto _ : state) {
        auto y = mixer.forward(x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_mixer_forward)->Arg(256)->Arg(1024)->Arg(4096);

void BM_student_forward(benchmark::State& state) {
    SrModel<float> model(ModelConfig::student(), 11);
    Rng rng(5);
    auto lr = Tensor<float>::uniform({3, state.range(0), state.range(0)}, rng, 0.0f, 1.0f);
    for (auto _ : state) {
        auto y = model.forward(lr);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_student_forward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_train_step(benchmark::State& state) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_rmmb = 2;
    cfg.blocks_per_rmmb = 2;
    cfg.rank = 8;
    SrModel<float> model(cfg, 13);
    AdamState adam;
    adam_init(adam, model.params());
    TrainConfig tc;
    Rng rng(6);
    auto lr = Tensor<float>::uniform({3, 32, 32}, rng, 0.0f, 1.0f);
    auto hr = Tensor<float>::uniform({3, 128, 128}, rng, 0.0f, 1.0f);
    for (auto _ : state) {
        for (auto& e : model.params().entries()) e.tensor.impl()->grad.clear();
        Tape<float> tape;
        Tape<float>::Scope scope(tape);
        auto loss = l1_loss(model.forward(lr), hr);
        tape.backward(loss, true);
        adam_step(model.params(), adam, 2e-4, tc);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

void BM_bicubic(benchmark::State& state) {
    Rng rng(7);
    Image img = Image::sized(256, 256);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    for (auto _ : state) {
        Image out = bicubic_resize(img, 64, 64);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_bicubic);

void BM_ssim(benchmark::State& state) {
    Rng rng(8);
    Image a = Image::sized(256, 256);
    Image b = Image::sized(256, 256);
    for (auto& v : a.data) v = static_cast<float>(rng.uniform());
    for (auto& v : b.data) v = static_cast<float>(rng.uniform());
    for (auto _ : state) {
        benchmark::DoNotOptimize(ssim_y(a, b, 4));
    }
}
BENCHMARK(BM_ssim);

}  // namespace

BENCHMARK_MAIN();
