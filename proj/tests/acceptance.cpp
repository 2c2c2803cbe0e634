// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code = number of failures.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "mlsr/infer.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/png_io.hpp"
#include "mlsr/train.hpp"
#include "oracles.hpp"

using namespace mlsr;
namespace fs = std::filesystem;

#ifndef MLSR_CLI_PATH
#define MLSR_CLI_PATH "mlsr"
#endif

namespace {

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
    }
};

fs::path work_root() {
    static const fs::path dir = [] {
        auto p = fs::temp_directory_path() / "mlsr_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return "<unreadable:" + p.string() + ">";
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

Image random_image(std::int64_t h, std::int64_t w, Rng& rng) {
    Image img = Image::sized(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

Image smooth_image(std::int64_t h, std::int64_t w, Rng& rng) {
    Image seed = random_image(std::max<std::int64_t>(4, h / 12), std::max<std::int64_t>(4, w / 12),
                              rng);
    return bicubic_resize(seed, h, w);
}

fs::path make_png_dataset(const std::string& tag, int n, std::int64_t hw, Rng& rng) {
    const fs::path dir = work_root() / tag;
    fs::create_directories(dir);
    for (int i = 0; i < n; ++i) {
        save_png(smooth_image(hw, hw, rng), (dir / ("img" + std::to_string(i) + ".png")).string());
    }
    return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(MLSR_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    return std::system(cmd.c_str());
}

// --------------------------------------------------------------------------
// Criterion 1: gradient correctness (ops + full student model), f64, <2 min
// --------------------------------------------------------------------------
Check criterion1() {
    Check c;
    Rng rng(1);
    const double tol = 1e-4;

    {  // every differentiable op
        auto a = Tensor<double>::uniform(Shape{3, 4}, rng, -1, 1);
        auto b = Tensor<double>::uniform(Shape{3, 4}, rng, -1, 1);
        auto m1 = Tensor<double>::uniform(Shape{3, 5}, rng, -1, 1);
        auto m2 = Tensor<double>::uniform(Shape{5, 4}, rng, -1, 1);
        auto img = Tensor<double>::uniform(Shape{2, 5, 5}, rng, -1, 1);
        auto cw = Tensor<double>::uniform(Shape{3, 2, 3, 3}, rng, -1, 1);
        auto cb = Tensor<double>::uniform(Shape{3}, rng, -1, 1);
        auto dw = Tensor<double>::uniform(Shape{4, 3}, rng, -1, 1);
        auto db = Tensor<double>::uniform(Shape{4}, rng, -1, 1);
        auto seq = Tensor<double>::uniform(Shape{6, 4}, rng, -1, 1);
        auto gamma = Tensor<double>::uniform(Shape{4}, rng, 0.5, 1.5);
        auto beta = Tensor<double>::uniform(Shape{4}, rng, -0.5, 0.5);
        auto ps = Tensor<double>::uniform(Shape{4, 3, 3}, rng, -1, 1);

        const struct {
            const char* name;
            double err;
        } checks[] = {
            {"add", oracle::fd_check({a, b}, [&] { return mean_all(add(a, b)); }).max_rel_err},
            {"sub", oracle::fd_check({a, b}, [&] { return mean_all(sub(a, b)); }).max_rel_err},
            {"mul", oracle::fd_check({a, b}, [&] { return mean_all(mul(a, b)); }).max_rel_err},
            {"scale", oracle::fd_check({a}, [&] { return mean_all(scale(a, 0.7)); }).max_rel_err},
            {"silu", oracle::fd_check({a}, [&] { return mean_all(silu(a)); }).max_rel_err},
            {"softplus",
             oracle::fd_check({a}, [&] { return mean_all(softplus(a)); }).max_rel_err},
            {"exp", oracle::fd_check({a}, [&] { return mean_all(exp_t(a)); }).max_rel_err},
            {"abs", oracle::fd_check({a}, [&] { return mean_all(mul(abs_t(a), abs_t(a))); })
                        .max_rel_err},
            {"mean", oracle::fd_check({a}, [&] { return mean_all(mul(a, a)); }).max_rel_err},
            {"sum", oracle::fd_check({a}, [&] { return sum_all(mul(a, a)); }).max_rel_err},
            {"l1_loss", oracle::fd_check({a, b}, [&] { return l1_loss(a, b); }).max_rel_err},
            {"matmul",
             oracle::fd_check({m1, m2}, [&] { return sum_all(matmul(m1, m2)); }).max_rel_err},
            {"layer_norm", oracle::fd_check({seq, gamma, beta},
                                            [&] {
                                                auto y = layer_norm(seq, gamma, beta);
                                                return mean_all(mul(y, y));
                                            })
                               .max_rel_err},
            {"conv2d",
             oracle::fd_check({img, cw, cb}, [&] { return mean_all(conv2d(img, cw, cb, 1)); })
                 .max_rel_err},
            {"dwconv1d", oracle::fd_check({seq, dw, db},
                                          [&] { return mean_all(dwconv1d_causal(seq, dw, db)); })
                             .max_rel_err},
            {"pixel_shuffle", oracle::fd_check({ps},
                                               [&] {
                                                   auto y = pixel_shuffle(ps, 2);
                                                   return mean_all(mul(y, y));
                                               })
                                  .max_rel_err},
        };
        for (const auto& chk : checks) {
            c.expect(chk.err <= tol, std::string(chk.name) + " rel err " + std::to_string(chk.err));
        }

        SsmParams<double> p;
        p.u = Tensor<double>::uniform(Shape{5, 3}, rng, -1, 1);
        p.delta = Tensor<double>::uniform(Shape{5, 3}, rng, 0.01, 1.0);
        p.b = Tensor<double>::uniform(Shape{5, 4}, rng, -1, 1);
        p.c = Tensor<double>::uniform(Shape{5, 4}, rng, -1, 1);
        p.a = Tensor<double>::uniform(Shape{3, 4}, rng, -2.0, -0.1);
        p.d = Tensor<double>::uniform(Shape{3}, rng, -1, 1);
        const double scan_err = oracle::fd_check({p.u, p.delta, p.b, p.c, p.a, p.d},
                                                 [&] {
                                                     auto y = selective_scan(p);
                                                     return mean_all(mul(y, y));
                                                 })
                                    .max_rel_err;
        c.expect(scan_err <= tol, "selective_scan rel err " + std::to_string(scan_err));
    }

    {  // full student model on an 8x8 patch, >= 20 sampled parameters.
        // The loss is scaled by 1e-5 before differencing: it exercises the
        // identical gradient chain while keeping h=1e-6 central-difference
        // cancellation noise (~4e-15 * |loss| / h) below the 1e-4 budget for
        // parameters whose gradients sit near the 1e-8 denominator floor.
        ModelConfig cfg;
        cfg.d_model = 8;
        cfg.n_rmmb = 2;
        cfg.blocks_per_rmmb = 2;
        cfg.rank = 4;
        cfg.scale = 4;
        SrModel<double> model(cfg, 2024);
        auto lr = Tensor<double>::uniform(Shape{3, 8, 8}, rng, 0.0, 1.0);
        auto hr = Tensor<double>::uniform(Shape{3, 32, 32}, rng, 0.0, 1.0);
        Rng pick(77);
        const auto rep = oracle::fd_check_params(
            model.params(), [&] { return scale(l1_loss(model.forward(lr), hr), 1e-5); }, 24, pick);
        c.expect(rep.checked >= 20, "sampled fewer than 20 parameters");
        c.expect(rep.max_rel_err <= tol,
                 "full-model rel err " + std::to_string(rep.max_rel_err));
        c.detail << "full-model max rel err " << rep.max_rel_err << " over " << rep.checked
                 << " parameters";
    }
    return c;
}

// --------------------------------------------------------------------------
// Criterion 2: scan equals the naive per-step oracle on 100 random instances
// --------------------------------------------------------------------------
Check criterion2() {
    Check c;
    Rng rng(2);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t l = 1 + rng.uniform_int(16);
        const std::int64_t ch = 1 + rng.uniform_int(8);
        const std::int64_t n = 1 + rng.uniform_int(8);
        SsmParams<double> p;
        p.u = Tensor<double>::uniform(Shape{l, ch}, rng, -1, 1);
        p.delta = Tensor<double>::uniform(Shape{l, ch}, rng, 0.01, 1.0);
        p.b = Tensor<double>::uniform(Shape{l, n}, rng, -1, 1);
        p.c = Tensor<double>::uniform(Shape{l, n}, rng, -1, 1);
        p.a = Tensor<double>::uniform(Shape{ch, n}, rng, -2.0, -0.1);
        p.d = Tensor<double>::uniform(Shape{ch}, rng, -1, 1);
        auto y = selective_scan(p);
        const auto ref = oracle::naive_scan(
            {p.u.data().begin(), p.u.data().end()}, {p.delta.data().begin(), p.delta.data().end()},
            {p.b.data().begin(), p.b.data().end()}, {p.c.data().begin(), p.c.data().end()},
            {p.a.data().begin(), p.a.data().end()}, {p.d.data().begin(), p.d.data().end()}, l, ch,
            n);
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            worst = std::max(worst, std::abs(y.data()[i] - ref[static_cast<std::size_t>(i)]));
        }
    }
    c.expect(worst < 1e-6, "max deviation " + std::to_string(worst));
    c.detail << "max |scan - oracle| = " << worst;
    return c;
}

// --------------------------------------------------------------------------
// Criterion 3: low-rank correctness (SVD reconstruction + Eckart-Young)
// --------------------------------------------------------------------------
Check criterion3() {
    Check c;
    Rng rng(3);

    {  // (a) rank-min factorization reproduces dense products in f32
        const std::int64_t m = 9, n = 6;
        std::vector<double> w(static_cast<std::size_t>(m * n));
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        const auto svd = oracle::jacobi_svd(w, m, n);
        LowRankLinear<float> layer;
        layer.u = Tensor<float>(Shape{m, n});
        layer.v = Tensor<float>(Shape{n, n});
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                layer.u.at(i, j) = static_cast<float>(svd.u[i * n + j] * svd.s[j]);
            }
        }
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                layer.v.at(i, j) = static_cast<float>(svd.v[i * n + j]);
            }
        }
        Tensor<float> dense(Shape{m, n});
        for (std::int64_t i = 0; i < m * n; ++i) dense.data()[i] = static_cast<float>(w[i]);
        auto x = Tensor<float>::uniform(Shape{4, m}, rng, -1.0f, 1.0f);
        auto got = layer.forward(x);
        auto want = matmul(x, dense);
        double worst = 0;
        for (std::int64_t i = 0; i < got.numel(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got.data()[i]) - want.data()[i]));
        }
        c.expect(worst < 1e-5, "rank-min reconstruction error " + std::to_string(worst));
        c.detail << "rank-min f32 err " << worst;
    }

    {  // (b) truncated-rank Frobenius error equals the singular tail
        const std::int64_t m = 10, n = 7;
        std::vector<double> w(static_cast<std::size_t>(m * n));
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        const auto svd = oracle::jacobi_svd(w, m, n);
        double worst = 0;
        for (const std::int64_t r : {1, 2, 3, 5}) {
            double err2 = 0;
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t j = 0; j < n; ++j) {
                    double rec = 0;
                    for (std::int64_t k = 0; k < r; ++k) {
                        rec += svd.u[i * n + k] * svd.s[k] * svd.v[j * n + k];
                    }
                    err2 += (rec - w[i * n + j]) * (rec - w[i * n + j]);
                }
            }
            double tail = 0;
            for (std::int64_t k = r; k < n; ++k) tail += svd.s[k] * svd.s[k];
            worst = std::max(worst, std::abs(std::sqrt(err2) - std::sqrt(tail)));
        }
        c.expect(worst < 1e-6, "Eckart-Young deviation " + std::to_string(worst));
        c.detail << "; Eckart-Young dev " << worst;
    }
    return c;
}

// --------------------------------------------------------------------------
// Criterion 4: parameter accounting, exact
// --------------------------------------------------------------------------
Check criterion4() {
    Check c;
    for (const auto& cfg : {ModelConfig::teacher(), ModelConfig::student()}) {
        SrModel<float> model(cfg, 4);
        const auto rep = count_params(model);
        c.expect(rep.total_analytic == rep.total_enumerated,
                 "preset d_model=" + std::to_string(cfg.d_model) + " totals differ");
        for (const auto& row : rep.rows) {
            c.expect(row.analytic == row.enumerated, "layer " + row.name + " mismatch");
        }
    }
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig cfg;
        cfg.d_model = 2 + rng.uniform_int(14);
        cfg.n_rmmb = 1 + rng.uniform_int(3);
        cfg.blocks_per_rmmb = 1 + rng.uniform_int(2);
        cfg.rank = 1 + rng.uniform_int(cfg.d_model);
        cfg.scale = 2 + rng.uniform_int(3);
        cfg.d_state = 1 + rng.uniform_int(8);
        cfg.expand = 1 + rng.uniform_int(2);
        SrModel<float> model(cfg, 100 + trial);
        const auto rep = count_params(model);
        c.expect(rep.total_analytic == rep.total_enumerated,
                 "random config " + std::to_string(trial) + " totals differ");
        for (const auto& row : rep.rows) {
            c.expect(row.analytic == row.enumerated,
                     "random config " + std::to_string(trial) + " layer " + row.name);
        }
    }
    const auto ratio = embed_reduction_ratio(60, 192);
    c.expect(ratio.num == 3600 && ratio.den == 36864, "embed ratio rational parts");
    c.expect(ratio.value == 3600.0 / 36864.0, "embed ratio value");
    c.expect(std::abs(ratio.value - 0.0977) < 1e-3, "embed ratio vs 0.0977");
    c.detail << "embed_reduction_ratio(60,192) = " << ratio.num << "/" << ratio.den << " = "
             << ratio.value;
    return c;
}

// --------------------------------------------------------------------------
// Criterion 5: FLOP/rank analogue + desk-scale rank-2 vs rank-30 teacher runs
// --------------------------------------------------------------------------
Check criterion5() {
    Check c;

    auto low_rank_flops = [](std::int64_t rank) {
        auto cfg = ModelConfig::teacher();
        cfg.rank = rank;
        SrModel<float> m(cfg, 5);
        const auto rep = estimate_flops(m, 64, 64);
        std::int64_t total = 0;
        for (const auto& row : rep.rows) {
            if (row.kind == std::string("low_rank")) total += row.flops;
        }
        return std::pair<std::int64_t, std::int64_t>(total, rep.total);
    };
    const auto [lr2, total2] = low_rank_flops(2);
    const auto [lr30, total30] = low_rank_flops(30);
    c.expect(lr30 == 15 * lr2, "mixer low-rank FLOP ratio not exactly 1/15");
    c.expect(total2 < total30, "total FLOPs not strictly lower at rank 2");
    c.detail << "low-rank FLOPs " << lr2 << " vs " << lr30 << " (1/15 exact)";

    // two 50-iteration desk-scale teacher runs, same seed, ranks 2 and 30
    Rng rng(5);
    const auto data_dir = make_png_dataset("rank_runs", 2, 96, rng);
    const Dataset data = Dataset::load(data_dir.string(), std::nullopt, 4);
    auto run = [&](std::int64_t rank) {
        ModelConfig cfg = ModelConfig::teacher();
        cfg.n_rmmb = 1;  // desk-scale depth; d_model stays 60 so rank 30 is valid
        cfg.rank = rank;
        TrainConfig tc;
        tc.batch_size = 2;
        tc.total_iterations = 50;
        tc.lr_milestones = {};
        tc.seed = 11;
        tc.val_cadence = 50;
        tc.patch_size = 16;
        tc.patches_per_image = 2;
        const auto out = (work_root() / ("rank_run_" + std::to_string(rank))).string();
        return train_teacher(cfg, tc, data, nullptr, out);
    };
    const auto r2 = run(2);
    const auto r30 = run(30);
    const double hi = std::max(r2.final_loss, r30.final_loss);
    const double lo = std::min(r2.final_loss, r30.final_loss);
    c.expect(lo > 0 && hi / lo <= 1.15,
             "final L1 " + std::to_string(r2.final_loss) + " vs " + std::to_string(r30.final_loss) +
                 " differ by more than 15%");
    c.detail << "; final L1 rank2=" << r2.final_loss << " rank30=" << r30.final_loss << " (ratio "
             << hi / lo << ")";
    return c;
}

// --------------------------------------------------------------------------
// Criterion 6: distillation contract
// --------------------------------------------------------------------------
Check criterion6() {
    Check c;
    Rng rng(6);

    auto y_s = Tensor<float>::uniform(Shape{4, 4}, rng, -1, 1);
    auto y_t = Tensor<float>::uniform(Shape{4, 4}, rng, -1, 1);
    auto y_gt = Tensor<float>::uniform(Shape{4, 4}, rng, -1, 1);

    const float at1 = kd_loss(y_s, y_t, y_gt, 1.0).total.item();
    auto y_gt_perturbed = Tensor<float>::uniform(Shape{4, 4}, rng, -9, 9);
    c.expect(kd_loss(y_s, y_t, y_gt_perturbed, 1.0).total.item() == at1,
             "alpha=1 loss depends on ground truth");

    const float at0 = kd_loss(y_s, y_t, y_gt, 0.0).total.item();
    auto y_t_perturbed = Tensor<float>::uniform(Shape{4, 4}, rng, -9, 9);
    c.expect(kd_loss(y_s, y_t_perturbed, y_gt, 0.0).total.item() == at0,
             "alpha=0 loss depends on teacher");

    {
        Tensor<float> s(Shape{2}, {0, 0});
        Tensor<float> t(Shape{2}, {1, 1});
        Tensor<float> g(Shape{2}, {2, 2});
        const auto loss = kd_loss(s, t, g, 0.8);
        c.expect(loss.l_kd.item() == 1.0f && loss.l_gt.item() == 2.0f, "component L1 values");
        c.expect(loss.total.item() == 1.2f, "kd_loss(0.8, 1, 2) != 1.2");
    }

    {  // dL/dalpha = L_KD - L_GT by finite differences (f64)
        auto s = Tensor<double>::uniform(Shape{5, 5}, rng, -1, 1);
        auto t = Tensor<double>::uniform(Shape{5, 5}, rng, -1, 1);
        auto g = Tensor<double>::uniform(Shape{5, 5}, rng, -1, 1);
        const double h = 1e-6;
        double worst = 0;
        for (const double alpha : {0.25, 0.5, 0.8}) {
            const double fd = (kd_loss(s, t, g, alpha + h).total.item() -
                               kd_loss(s, t, g, alpha - h).total.item()) /
                              (2 * h);
            const auto loss = kd_loss(s, t, g, alpha);
            worst = std::max(worst, std::abs(fd - (loss.l_kd.item() - loss.l_gt.item())));
        }
        c.expect(worst < 1e-6, "d(loss)/d(alpha) deviation " + std::to_string(worst));
        c.detail << "dL/dalpha dev " << worst;
    }

    {  // alpha=0 run is bit-identical to direct training under the same seed
        Rng drng(66);
        const auto data_dir = make_png_dataset("alpha0", 1, 64, drng);
        const Dataset data = Dataset::load(data_dir.string(), std::nullopt, 4);
        ModelConfig mc;
        mc.d_model = 4;
        mc.n_rmmb = 1;
        mc.blocks_per_rmmb = 1;
        mc.rank = 2;
        mc.d_state = 4;
        TrainConfig tc;
        tc.batch_size = 2;
        tc.total_iterations = 6;
        tc.lr_milestones = {};
        tc.seed = 9;
        tc.val_cadence = 3;
        tc.patch_size = 8;
        tc.patches_per_image = 2;

        const auto teacher_out = (work_root() / "alpha0_teacher").string();
        train_teacher(mc, tc, data, nullptr, teacher_out);
        const std::string teacher_ckpt = teacher_out + "/ckpt_final";

        tc.alpha = 0.0;
        const auto via_distill = (work_root() / "alpha0_distill").string();
        distill_student(teacher_ckpt, mc, tc, data, nullptr, via_distill);
        const auto direct = (work_root() / "alpha0_direct").string();
        train_teacher(mc, tc, data, nullptr, direct);
        c.expect(read_bytes(fs::path(via_distill) / "ckpt_final" / "weights.bin") ==
                     read_bytes(fs::path(direct) / "ckpt_final" / "weights.bin"),
                 "alpha=0 weights differ from direct training");
        c.expect(read_bytes(fs::path(via_distill) / "metrics.csv") ==
                     read_bytes(fs::path(direct) / "metrics.csv"),
                 "alpha=0 metrics differ from direct training");
    }
    return c;
}

// --------------------------------------------------------------------------
// Criterion 7: overfit smoke on a single 64x64/256x256 pair
// --------------------------------------------------------------------------
Check criterion7() {
    Check c;
    Rng rng(7);
    // Smooth base plus a 4px-periodic texture: the texture sits above the LR
    // Nyquist rate, so bicubic upscaling cannot reconstruct it while the
    // reconstruction head (pixel-shuffle period 4) can.
    Image hr = smooth_image(256, 256, rng);
    float pattern[4][4];
    for (auto& row : pattern) {
        for (auto& v : row) v = rng.coin() ? 0.15f : -0.15f;
    }
    for (std::int64_t ch = 0; ch < 3; ++ch) {
        for (std::int64_t y = 0; y < 256; ++y) {
            for (std::int64_t x = 0; x < 256; ++x) {
                hr.at(ch, y, x) = std::clamp(0.25f + 0.5f * hr.at(ch, y, x) +
                                                 pattern[y % 4][x % 4],
                                             0.02f, 0.98f);
            }
        }
    }
    const Image lr = bicubic_resize(hr, 64, 64);
    const fs::path hr_dir = work_root() / "overfit_hr";
    const fs::path lr_dir = work_root() / "overfit_lr";
    fs::create_directories(hr_dir);
    fs::create_directories(lr_dir);
    save_png(hr, (hr_dir / "pair.png").string());
    save_png(lr, (lr_dir / "pair.png").string());
    const Dataset data = Dataset::load(hr_dir.string(), lr_dir.string(), 4);

    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_rmmb = 2;
    cfg.blocks_per_rmmb = 2;
    cfg.rank = 8;
    cfg.scale = 4;

    TrainConfig tc;
    tc.batch_size = 1;
    tc.total_iterations = 200;
    tc.base_lr = 2e-3;  // desk-scale overfit: 200 Adam steps must travel far enough
    tc.lr_milestones = TrainConfig::milestones_for(200);
    tc.seed = 13;
    tc.val_cadence = 50;
    tc.patch_size = 64;
    tc.patches_per_image = 1;
    tc.augment = false;  // the single fixed pair is the whole dataset

    const auto out = (work_root() / "overfit").string();
    const auto result = train_teacher(cfg, tc, data, nullptr, out);
    c.expect(result.final_loss < 0.5 * result.initial_loss,
             "final L1 " + std::to_string(result.final_loss) + " not below half of initial " +
                 std::to_string(result.initial_loss));

    SrModel<float> model(cfg, tc.seed);
    load_checkpoint(out + "/ckpt_final", model.params());
    const Image pair_lr = data.items()[0].lr;
    const Image pair_hr = data.items()[0].hr;
    const Image sr = Image::from_tensor(model.forward(pair_lr.to_tensor()), true);
    const Image bicubic_up = bicubic_resize(pair_lr, 256, 256);
    const double model_psnr = psnr_y(sr, pair_hr, 4);
    const double bicubic_psnr = psnr_y(bicubic_up, pair_hr, 4);
    c.expect(model_psnr > bicubic_psnr,
             "model PSNR " + std::to_string(model_psnr) + " does not beat bicubic " +
                 std::to_string(bicubic_psnr));
    c.detail << "L1 " << result.initial_loss << " -> " << result.final_loss << "; PSNR model "
             << model_psnr << " vs bicubic " << bicubic_psnr;
    return c;
}

// --------------------------------------------------------------------------
// Criterion 8: metric oracles
// --------------------------------------------------------------------------
Check criterion8() {
    Check c;
    {
        Image a = Image::sized(16, 16);
        Image b = Image::sized(16, 16);
        const float delta = 1.0f / (65.481f + 128.553f + 24.966f);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = 0.4f;
            b.data[i] = 0.4f + delta;
        }
        const double p = psnr_y(a, b, 0);
        c.expect(std::abs(p - 48.1308) <= 1e-3, "unit-offset PSNR " + std::to_string(p));
        c.detail << "unit-offset PSNR " << p;
    }
    Rng rng(8);
    {
        Image a = random_image(20, 20, rng);
        c.expect(ssim_y(a, a, 0) == 1.0, "SSIM(a,a) != 1 exactly");
    }

    auto psnr_oracle = [](const Image& a, const Image& b, std::int64_t crop) {
        const std::int64_t plane = a.height * a.width;
        double mse = 0;
        std::int64_t count = 0;
        for (std::int64_t y = crop; y < a.height - crop; ++y) {
            for (std::int64_t x = crop; x < a.width - crop; ++x) {
                const std::int64_t i = y * a.width + x;
                const double ya = 16.0 + 65.481 * a.data[i] + 128.553 * a.data[plane + i] +
                                  24.966 * a.data[2 * plane + i];
                const double yb = 16.0 + 65.481 * b.data[i] + 128.553 * b.data[plane + i] +
                                  24.966 * b.data[2 * plane + i];
                mse += (ya - yb) * (ya - yb);
                ++count;
            }
        }
        return 10.0 * std::log10(255.0 * 255.0 * count / mse);
    };
    // direct 2-d windowed SSIM, written from the definition
    auto ssim_oracle = [](const Image& a, const Image& b, std::int64_t crop) {
        const std::int64_t h = a.height - 2 * crop, w = a.width - 2 * crop;
        const std::int64_t plane = a.height * a.width;
        auto yof = [&](const Image& img, std::int64_t y, std::int64_t x) {
            const std::int64_t i = (y + crop) * img.width + (x + crop);
            return 16.0 + 65.481 * img.data[i] + 128.553 * img.data[plane + i] +
                   24.966 * img.data[2 * plane + i];
        };
        double win[11][11], wsum = 0;
        for (int i = 0; i < 11; ++i) {
            for (int j = 0; j < 11; ++j) {
                win[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / 4.5);
                wsum += win[i][j];
            }
        }
        for (auto& row : win) {
            for (auto& v : row) v /= wsum;
        }
        double total = 0;
        std::int64_t count = 0;
        for (std::int64_t y = 0; y + 11 <= h; ++y) {
            for (std::int64_t x = 0; x + 11 <= w; ++x) {
                double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (int i = 0; i < 11; ++i) {
                    for (int j = 0; j < 11; ++j) {
                        const double va = yof(a, y + i, x + j);
                        const double vb = yof(b, y + i, x + j);
                        ma += win[i][j] * va;
                        mb += win[i][j] * vb;
                        aa += win[i][j] * va * va;
                        bb += win[i][j] * vb * vb;
                        ab += win[i][j] * va * vb;
                    }
                }
                const double num = (2 * ma * mb + 6.5025) * (2 * (ab - ma * mb) + 58.5225);
                const double den = (ma * ma + mb * mb + 6.5025) *
                                   ((aa - ma * ma) + (bb - mb * mb) + 58.5225);
                total += num / den;
                ++count;
            }
        }
        return total / static_cast<double>(count);
    };

    double worst_psnr = 0, worst_ssim = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Image a = random_image(20, 24, rng);
        Image b = random_image(20, 24, rng);
        const std::int64_t crop = trial % 2 == 0 ? 0 : 2;
        worst_psnr = std::max(worst_psnr, std::abs(psnr_y(a, b, crop) - psnr_oracle(a, b, crop)));
        worst_ssim = std::max(worst_ssim, std::abs(ssim_y(a, b, crop) - ssim_oracle(a, b, crop)));
    }
    c.expect(worst_psnr < 1e-6, "PSNR oracle deviation " + std::to_string(worst_psnr));
    c.expect(worst_ssim < 1e-6, "SSIM oracle deviation " + std::to_string(worst_ssim));
    c.detail << "; oracle dev psnr " << worst_psnr << ", ssim " << worst_ssim;
    return c;
}

// --------------------------------------------------------------------------
// Criterion 9: stitching identity with a nearest-x4 stub
// --------------------------------------------------------------------------
Check criterion9() {
    Check c;
    auto nearest4 = [](const Image& in) {
        Image out = Image::sized(4 * in.height, 4 * in.width);
        for (std::int64_t ch = 0; ch < 3; ++ch) {
            for (std::int64_t y = 0; y < out.height; ++y) {
                for (std::int64_t x = 0; x < out.width; ++x) {
                    out.at(ch, y, x) = in.at(ch, y / 4, x / 4);
                }
            }
        }
        return out;
    };
    Rng rng(9);
    const std::pair<int, int> dims[] = {{96, 96}, {100, 70}, {64, 130}};
    for (const auto& [h, w] : dims) {
        const Image lr = random_image(h, w, rng);
        const Image whole = nearest4(lr);
        for (const std::int64_t tile : {32, 64}) {
            TileGrid grid;
            grid.tile = tile;
            const Image stitched = super_resolve(nearest4, 4, lr, grid);
            bool equal = stitched.data.size() == whole.data.size();
            for (std::size_t i = 0; equal && i < whole.data.size(); ++i) {
                equal = stitched.data[i] == whole.data[i];
            }
            c.expect(equal, "tile " + std::to_string(tile) + " on " + std::to_string(w) + "x" +
                                std::to_string(h) + " not bit-exact");
        }
    }
    return c;
}

// --------------------------------------------------------------------------
// Criterion 10: CLI reproducibility + the alpha sweep grid
// --------------------------------------------------------------------------
Check criterion10() {
    Check c;
#ifdef _WIN32
    c.expect(false, "CLI subprocess checks require a POSIX shell");
    return c;
#endif
    unsetenv("MLSR_OUT");
    Rng rng(10);
    const auto data_dir = make_png_dataset("cli_data", 2, 64, rng);
    const fs::path root = work_root() / "cli";
    fs::create_directories(root);

    const std::string model_args =
        " --preset student --set model.d_model=8 --set model.n_rmmb=1 --set model.rank=4"
        " --set model.d_state=4";
    const std::string train_args =
        " --data " + data_dir.string() + " --iters 20 --batch-size 2 --patch-size 8"
        " --cadence 10 --seed 21";

    // identical invocations produce byte-identical metrics CSVs
    const auto out_a = root / "train_a";
    const auto out_b = root / "train_b";
    int rc = run_cli("train-teacher" + model_args + train_args + " --out " + out_a.string(),
                     root / "train_a.log");
    c.expect(rc == 0, "train run A failed (see train_a.log)");
    rc = run_cli("train-teacher" + model_args + train_args + " --out " + out_b.string(),
                 root / "train_b.log");
    c.expect(rc == 0, "train run B failed");
    c.expect(read_bytes(out_a / "metrics.csv") == read_bytes(out_b / "metrics.csv"),
             "metrics.csv differs between identical runs");
    c.expect(read_bytes(out_a / "ckpt_final" / "weights.bin") ==
                 read_bytes(out_b / "ckpt_final" / "weights.bin"),
             "weights differ between identical runs");

    // alpha sweep: exactly 4 data rows over the default grid, deterministic
    const std::string teacher_ckpt = (out_a / "ckpt_final").string();
    const std::string sweep_args = "sweep-alpha" + model_args + " --teacher " + teacher_ckpt +
                                   " --data " + data_dir.string() +
                                   " --alphas 0.2,0.4,0.6,0.8 --iters 50 --batch-size 2"
                                   " --patch-size 8 --cadence 25 --seed 7";
    const auto sweep_a = root / "sweep_a";
    const auto sweep_b = root / "sweep_b";
    rc = run_cli(sweep_args + " --out " + sweep_a.string(), root / "sweep_a.log");
    c.expect(rc == 0, "sweep run A failed (see sweep_a.log)");
    rc = run_cli(sweep_args + " --out " + sweep_b.string(), root / "sweep_b.log");
    c.expect(rc == 0, "sweep run B failed");

    const std::string csv = read_bytes(sweep_a / "alpha_sweep.csv");
    const std::int64_t rows = std::count(csv.begin(), csv.end(), '\n') - 1;
    c.expect(rows == 4, "alpha sweep has " + std::to_string(rows) + " rows, want 4");
    c.expect(csv.rfind("alpha,psnr\n", 0) == 0, "alpha sweep header");
    c.expect(csv == read_bytes(sweep_b / "alpha_sweep.csv"), "alpha sweep not deterministic");
    c.detail << "alpha sweep rows = " << rows;
    return c;
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // 0 = no budget
    std::function<Check()> fn;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness (ops + full student model, f64 finite differences)", 120,
         criterion1},
        {2, "selective scan equals the naive per-step oracle (100 instances, 1e-6)", 0, criterion2},
        {3, "low-rank correctness (SVD reconstruction 1e-5, Eckart-Young 1e-6)", 0, criterion3},
        {4, "parameter accounting exact (presets + 20 random configs, embed ratio)", 0, criterion4},
        {5, "FLOP/rank analogue (1/15 exact, rank-2 vs rank-30 runs within 15%)", 600, criterion5},
        {6, "distillation contract (boundaries exact, 1.2 exact, dL/dalpha, alpha=0 bit-identity)",
         0, criterion6},
        {7, "overfit smoke (halved L1 and beats bicubic PSNR)", 900, criterion7},
        {8, "metric oracles (48.131 dB, SSIM identity, 50 random pairs vs oracles)", 0, criterion8},
        {9, "stitching identity (nearest-x4 stub, tiles 32/64, 3 images)", 0, criterion9},
        {10, "CLI reproducibility (byte-identical CSVs, 4-row alpha sweep)", 1200, criterion10},
    };

    int failures = 0;
    for (const auto& crit : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Check result;
        try {
            result = crit.fn();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail << "exception: " << e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (crit.budget_seconds > 0 && seconds > crit.budget_seconds) {
            result.ok = false;
            result.detail << "; exceeded " << crit.budget_seconds << "s budget";
        }
        std::printf("[%s] criterion %2d: %s (%.1fs%s%s)\n", result.ok ? "PASS" : "FAIL", crit.id,
                    crit.name, seconds, result.detail.str().empty() ? "" : " — ",
                    result.detail.str().c_str());
        std::fflush(stdout);
        if (!result.ok) ++failures;
    }
    if (failures == 0) {
        std::printf("acceptance: all %zu criteria passed\n", criteria.size());
    } else {
        std::printf("acceptance: %d criteria FAILED\n", failures);
    }
    return failures;
}
