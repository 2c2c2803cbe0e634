#include "mlsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <unordered_map>

#include "mlsr/infer.hpp"
#include "mlsr/metrics.hpp"

namespace mlsr {

namespace fs = std::filesystem;

void adam_init(AdamState& state, const ParamRegistry<float>& reg) {
    state.m.clear();
    state.v.clear();
    state.step = 0;
    for (const auto& e : reg.entries()) {
        state.m.emplace_back(e.tensor.data().size(), 0.0f);
        state.v.emplace_back(e.tensor.data().size(), 0.0f);
    }
}

void adam_step(ParamRegistry<float>& reg, AdamState& state, double lr, const TrainConfig& cfg) {
    if (state.m.size() != reg.entries().size()) {
        throw UsageError("adam_step: state does not match registry; call adam_init first");
    }
    ++state.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < reg.entries().size(); ++p) {
        auto& tensor = reg.entries()[p].tensor;
        auto data = tensor.data();
        const auto grad = tensor.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

std::string train_log_to_csv(const std::vector<TrainLogRow>& rows) {
    std::ostringstream os;
    os << "iteration,loss,lr,val_psnr\n";
    char buf[128];
    for (const auto& r : rows) {
        if (std::isnan(r.val_psnr)) {
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,nan\n",
                          static_cast<long long>(r.iteration), r.loss, r.lr);
        } else {
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n",
                          static_cast<long long>(r.iteration), r.loss, r.lr, r.val_psnr);
        }
        os << buf;
    }
    return os.str();
}

namespace {

void zero_grads(ParamRegistry<float>& reg) {
    for (auto& e : reg.entries()) e.tensor.impl()->grad.clear();
}

// Deterministic batch for one iteration: images and offsets are a pure
// function of (seed, iteration).
std::vector<PatchPair> draw_batch(const Dataset& data, const TrainConfig& cfg,
                                  std::int64_t iteration) {
    Rng rng(mix_seed(cfg.seed, 0x9A7C0000ULL + static_cast<std::uint64_t>(iteration)));
    std::vector<PatchPair> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    int dry_spins = 0;
    while (static_cast<std::int64_t>(batch.size()) < cfg.batch_size) {
        const auto& item = data.items()[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(data.size())))];
        const std::int64_t want = std::min<std::int64_t>(
            cfg.patches_per_image, cfg.batch_size - static_cast<std::int64_t>(batch.size()));
        auto pairs = sample_patches(item.hr, item.lr, want, cfg.patch_size, 4, rng,
                                    cfg.strict_patches, item.name, cfg.augment);
        if (pairs.empty()) {
            if (++dry_spins > 4 * static_cast<int>(data.size()) + 16) {
                throw UsageError("training data: no image is at least " +
                                 std::to_string(cfg.patch_size) + "x" +
                                 std::to_string(cfg.patch_size) + " in LR space");
            }
            continue;
        }
        for (auto& p : pairs) batch.push_back(std::move(p));
    }
    return batch;
}

double validation_psnr(const SrModel<float>& model, const Dataset* val, std::int64_t tile) {
    if (val == nullptr || val->empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = std::min<std::size_t>(val->size(), 3);
    TileGrid grid;
    grid.tile = tile;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& item = val->items()[i];
        const Image sr = super_resolve(model, item.lr, grid);
        total += psnr_y(sr, item.hr, model.config().scale);
    }
    return total / static_cast<double>(n);
}

struct LoopContext {
    const char* stage;
    const ModelConfig& model_cfg;
    const TrainConfig& cfg;
    const Dataset& train;
    const Dataset* val;
    std::string out_dir;
    SrModel<float>* teacher = nullptr;  // null for direct training
};

TrainResult run_training(const LoopContext& ctx,
                         const std::optional<std::string>& resume_from) {
    ctx.cfg.validate();
    ctx.model_cfg.validate();
    if (ctx.train.empty()) {
        throw UsageError(std::string(ctx.stage) + ": training dataset is empty");
    }
    fs::create_directories(ctx.out_dir);

    SrModel<float> model(ctx.model_cfg, ctx.cfg.seed);
    AdamState adam;
    adam_init(adam, model.params());
    std::int64_t start_iter = 0;

    if (resume_from) {
        load_checkpoint(*resume_from, model.params());
        auto state = load_trainer_state(*resume_from);
        if (!state) {
            throw IoError(std::string(ctx.stage) + ": " + *resume_from +
                          " has no trainer_state.json to resume from");
        }
        start_iter = state->iteration;
        adam.step = state->adam_step;
        adam.m = std::move(state->m);
        adam.v = std::move(state->v);
    }

    const bool use_teacher = ctx.teacher != nullptr && ctx.cfg.alpha > 0.0;
    const std::uint64_t teacher_hash_before =
        ctx.teacher ? ctx.teacher->params().content_hash() : 0;

    auto save_all = [&](const std::string& name, std::int64_t iteration) {
        const std::string dir = (fs::path(ctx.out_dir) / name).string();
        save_checkpoint(dir, model.params(), ctx.model_cfg);
        TrainerState st;
        st.iteration = iteration;
        st.seed = ctx.cfg.seed;
        st.adam_step = adam.step;
        st.m = adam.m;
        st.v = adam.v;
        save_trainer_state(dir, st);
        return dir;
    };

    TrainResult result;
    double last_loss = 0;
    std::unordered_map<std::string, Tensor<float>> teacher_cache;
    const std::int64_t iters = ctx.cfg.total_iterations;
    for (std::int64_t it = start_iter; it < iters; ++it) {
        const auto batch = draw_batch(ctx.train, ctx.cfg, it);
        const double inv_batch = 1.0 / static_cast<double>(batch.size());

        zero_grads(model.params());
        double batch_loss = 0;
        for (const auto& pair : batch) {
            const Tensor<float> lr_in = pair.lr.to_tensor();
            const Tensor<float> hr_ref = pair.hr.to_tensor();
            Tensor<float> y_teacher;
            if (use_teacher) {
                if (ctx.cfg.cache_teacher) {
                    const std::string key = pair.source + ":" + std::to_string(pair.lr_x) + ":" +
                                            std::to_string(pair.lr_y) + ":" +
                                            std::to_string(pair.aug_code);
                    auto hit = teacher_cache.find(key);
                    if (hit == teacher_cache.end()) {
                        hit = teacher_cache.emplace(key, ctx.teacher->forward(lr_in)).first;
                    }
                    y_teacher = hit->second;
                } else {
                    y_teacher = ctx.teacher->forward(lr_in);
                }
            }

            Tape<float> tape;
            Tape<float>::Scope scope(tape);
            const Tensor<float> y = model.forward(lr_in);
            Tensor<float> loss;
            if (use_teacher) {
                loss = kd_loss(y, y_teacher, hr_ref, ctx.cfg.alpha).total;
            } else {
                loss = l1_loss(y, hr_ref);
            }
            batch_loss += static_cast<double>(loss.item()) * inv_batch;
            tape.backward(scale(loss, inv_batch), /*accumulate=*/true);
        }

        if (!std::isfinite(batch_loss)) {
            throw std::runtime_error(std::string(ctx.stage) + ": non-finite loss at iteration " +
                                     std::to_string(it) + "; aborting");
        }
        if (it == start_iter) result.initial_loss = batch_loss;
        last_loss = batch_loss;

        if (it % ctx.cfg.val_cadence == 0) {
            result.rows.push_back(TrainLogRow{it, batch_loss, lr_at(it, ctx.cfg),
                                              validation_psnr(model, ctx.val, ctx.cfg.patch_size)});
        }

        adam_step(model.params(), adam, lr_at(it, ctx.cfg), ctx.cfg);

        for (const auto milestone : ctx.cfg.lr_milestones) {
            if (it + 1 == milestone) {
                save_all("ckpt_iter" + std::to_string(milestone), milestone);
            }
        }
    }

    if (iters % ctx.cfg.val_cadence == 0) {
        result.rows.push_back(TrainLogRow{iters, last_loss, lr_at(iters - 1, ctx.cfg),
                                          validation_psnr(model, ctx.val, ctx.cfg.patch_size)});
    }
    result.final_loss = last_loss;
    result.final_val_psnr =
        result.rows.empty() ? std::numeric_limits<double>::quiet_NaN() : result.rows.back().val_psnr;
    result.final_checkpoint = save_all("ckpt_final", iters);

    if (ctx.teacher != nullptr) {
        const std::uint64_t teacher_hash_after = ctx.teacher->params().content_hash();
        if (teacher_hash_after != teacher_hash_before) {
            throw std::logic_error("distill: teacher parameters changed during distillation");
        }
    }

    std::ofstream csv(fs::path(ctx.out_dir) / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + ctx.out_dir + "/metrics.csv");
    csv << train_log_to_csv(result.rows);
    return result;
}

}  // namespace

TrainResult train_teacher(const ModelConfig& model_cfg, const TrainConfig& cfg,
                          const Dataset& train, const Dataset* val, const std::string& out_dir,
                          const std::optional<std::string>& resume_from) {
    LoopContext ctx{"train-teacher", model_cfg, cfg, train, val, out_dir, nullptr};
    return run_training(ctx, resume_from);
}

TrainResult distill_student(const std::string& teacher_ckpt, const ModelConfig& student_cfg,
                            const TrainConfig& cfg, const Dataset& train, const Dataset* val,
                            const std::string& out_dir) {
    const ModelConfig teacher_cfg = checkpoint_config(teacher_ckpt);
    SrModel<float> teacher(teacher_cfg, cfg.seed);
    load_checkpoint(teacher_ckpt, teacher.params());
    for (auto& e : teacher.params().entries()) e.tensor.set_requires_grad(false);

    LoopContext ctx{"distill", student_cfg, cfg, train, val, out_dir, &teacher};
    return run_training(ctx, std::nullopt);
}

}  // namespace mlsr
