#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlsr/checkpoint.hpp"
#include "mlsr/data.hpp"
#include "mlsr/model.hpp"
#include "mlsr/ops.hpp"

namespace mlsr {

struct TrainConfig {
    std::int64_t batch_size = 128;
    std::int64_t total_iterations = 2500;
    double base_lr = 2e-4;
    std::vector<std::int64_t> lr_milestones = {1250, 1875, 2250};
    double alpha = 0.8;
    std::uint64_t seed = 0;
    std::int64_t val_cadence = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t patch_size = 64;
    std::int64_t patches_per_image = 8;
    bool strict_patches = false;
    bool augment = true;
    bool cache_teacher = false;  // memoize teacher outputs per (source, offset, aug)

    // The milestone convention: halve at 50%, 75%, and 90% of the run. The
    // defaults above are this convention at 2500 iterations.
    static std::vector<std::int64_t> milestones_for(std::int64_t total_iterations) {
        std::vector<std::int64_t> out;
        for (const std::int64_t m : {total_iterations / 2, 3 * total_iterations / 4,
                                     9 * total_iterations / 10}) {
            if (m > 0 && (out.empty() || m > out.back()) && m < total_iterations) out.push_back(m);
        }
        return out;
    }

    void validate() const {
        if (batch_size < 1 || total_iterations < 1 || val_cadence < 1 || patch_size < 1 ||
            patches_per_image < 1) {
            throw ConfigError("train config: non-positive sizes");
        }
        if (alpha < 0.0 || alpha > 1.0) {
            throw UsageError("train config: alpha " + std::to_string(alpha) + " outside [0, 1]");
        }
        std::int64_t prev = -1;
        for (const auto m : lr_milestones) {
            if (m <= prev || m >= total_iterations) {
                throw ConfigError("train config: milestones must be strictly increasing and below "
                                  "total_iterations");
            }
            prev = m;
        }
    }
};

// base_lr halved once per milestone that the iteration has reached.
inline double lr_at(std::int64_t iteration, const TrainConfig& cfg) {
    int halvings = 0;
    for (const auto m : cfg.lr_milestones) {
        if (m <= iteration) ++halvings;
    }
    return cfg.base_lr * std::pow(0.5, halvings);
}

// Combined distillation objective L = alpha * L1(y_s, y_t) + (1-alpha) * L1(y_s, y_gt).
// Teacher output and ground truth are detached; at the alpha boundaries the
// inactive term is dropped so the identities hold exactly.
template <typename T>
struct DistillLossT {
    double alpha = 0;
    Tensor<T> l_kd;
    Tensor<T> l_gt;
    Tensor<T> total;
};

using DistillLoss = DistillLossT<float>;

template <typename T>
DistillLossT<T> kd_loss(const Tensor<T>& y_student, const Tensor<T>& y_teacher,
                        const Tensor<T>& y_gt, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw UsageError("kd_loss: alpha " + std::to_string(alpha) + " outside [0, 1]");
    }
    if (y_student.shape() != y_teacher.shape() || y_student.shape() != y_gt.shape()) {
        throw DimError("kd_loss: shapes differ, student " + shape_str(y_student.shape()) +
                       ", teacher " + shape_str(y_teacher.shape()) + ", gt " +
                       shape_str(y_gt.shape()));
    }
    DistillLossT<T> out;
    out.alpha = alpha;
    out.l_kd = l1_loss(y_student, y_teacher.detach());
    out.l_gt = l1_loss(y_student, y_gt.detach());
    if (alpha == 0.0) {
        out.total = out.l_gt;
    } else if (alpha == 1.0) {
        out.total = out.l_kd;
    } else {
        out.total = add(scale(out.l_kd, alpha), scale(out.l_gt, 1.0 - alpha));
    }
    return out;
}

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::int64_t step = 0;
};

void adam_init(AdamState& state, const ParamRegistry<float>& reg);

// Bias-corrected Adam update over every registry parameter; parameters with
// no gradient this step are treated as zero-gradient.
void adam_step(ParamRegistry<float>& reg, AdamState& state, double lr, const TrainConfig& cfg);

struct TrainLogRow {
    std::int64_t iteration = 0;
    double loss = 0;
    double lr = 0;
    double val_psnr = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> rows;
    double initial_loss = 0;
    double final_loss = 0;
    double final_val_psnr = 0;
    std::string final_checkpoint;
};

std::string train_log_to_csv(const std::vector<TrainLogRow>& rows);

// Teacher training: sample batch -> forward -> L1 vs HR -> backward -> Adam.
// Writes metrics.csv plus milestone/final checkpoints under out_dir. Aborts
// with a diagnostic naming the iteration if the loss goes non-finite.
TrainResult train_teacher(const ModelConfig& model_cfg, const TrainConfig& cfg,
                          const Dataset& train, const Dataset* val, const std::string& out_dir,
                          const std::optional<std::string>& resume_from = std::nullopt);

// Knowledge distillation: the frozen teacher (loaded from teacher_ckpt)
// produces targets on each LR batch; the student minimizes kd_loss. The
// teacher hash is asserted unchanged. alpha == 0 runs the exact train_teacher
// path on the student config.
TrainResult distill_student(const std::string& teacher_ckpt, const ModelConfig& student_cfg,
                            const TrainConfig& cfg, const Dataset& train, const Dataset* val,
                            const std::string& out_dir);

}  // namespace mlsr
