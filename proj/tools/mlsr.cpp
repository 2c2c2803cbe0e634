// mlsr — Mamba-style lightweight super-resolution: training, distillation,
// evaluation, inference, parameter/FLOP accounting, and sweep experiments.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mlsr/checkpoint.hpp"
#include "mlsr/infer.hpp"
#include "mlsr/metrics.hpp"
#include "mlsr/png_io.hpp"
#include "mlsr/train.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mlsr;

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

// ---------------------------------------------------------------------------
// Run specification: resolved config snapshot + dotted-key overrides
// ---------------------------------------------------------------------------

struct RunSpec {
    std::string subcommand;
    std::string config_path;   // model config JSON (or preset)
    std::string preset;        // "teacher" | "student" | ""
    std::string data_dir;
    std::string lr_dir;
    std::string val_dir;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;  // dotted key=value

    // train knobs (flag defaults mirror TrainConfig)
    TrainConfig train;
    bool no_augment = false;
    std::vector<CLI::Option*> milestone_opts;

    json resolved;  // filled by resolve()

    bool milestones_given() const {
        for (const auto* opt : milestone_opts) {
            if (opt->count() > 0) return true;
        }
        return false;
    }

    void add_common(CLI::App* cmd, bool with_data = true) {
        cmd->add_option("--config", config_path, "model config JSON path");
        cmd->add_option("--preset", preset, "model preset: teacher or student")
            ->check(CLI::IsMember({"teacher", "student"}));
        if (with_data) {
            cmd->add_option("--data", data_dir, "directory of HR PNGs")->required();
            cmd->add_option("--lr-dir", lr_dir, "optional parallel directory of x4 LR PNGs");
            cmd->add_option("--val", val_dir, "directory of validation HR PNGs");
        }
        cmd->add_option("--out", out_dir, "output directory (MLSR_OUT overrides)");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--set", overrides,
                        "dotted-key overrides, e.g. --set model.rank=2 --set train.alpha=0.5");
    }

    void add_train_flags(CLI::App* cmd) {
        cmd->add_option("--iters", train.total_iterations, "training iterations");
        cmd->add_option("--batch-size", train.batch_size, "patches per optimizer step");
        cmd->add_option("--base-lr", train.base_lr, "initial learning rate");
        milestone_opts.push_back(
            cmd->add_option("--milestones", train.lr_milestones,
                            "iterations where LR halves (default: 50/75/90% of --iters)")
                ->delimiter(','));
        cmd->add_option("--cadence", train.val_cadence, "validation/logging cadence");
        cmd->add_option("--patch-size", train.patch_size, "LR patch size");
        cmd->add_option("--patches-per-image", train.patches_per_image, "patches per drawn image");
        cmd->add_flag("--strict-patches", train.strict_patches,
                      "error (instead of skip) on undersized images");
        cmd->add_flag("--no-augment", no_augment, "disable flip/rotation augmentation");
        cmd->add_flag("--cache-teacher", train.cache_teacher,
                      "memoize teacher outputs (fixed small datasets)");
        cmd->add_option("--alpha", train.alpha, "distillation weight in [0,1]");
    }

    ModelConfig base_model_config() const {
        if (!config_path.empty()) return load_model_config(config_path);
        if (preset == "teacher") return ModelConfig::teacher();
        if (preset == "student") return ModelConfig::student();
        throw UsageError(subcommand + ": provide --config or --preset");
    }

    // Builds the resolved {run, model, train} snapshot, applies overrides, and
    // re-parses the structs from it so overrides take full effect. Subcommands
    // that read the model config from a checkpoint pass need_model = false.
    void resolve(const std::string& sub, bool need_model = true) {
        subcommand = sub;
        if (const char* env = std::getenv("MLSR_OUT")) out_dir = env;
        train.seed = seed;
        train.augment = !no_augment;
        if (!milestones_given()) {
            train.lr_milestones = TrainConfig::milestones_for(train.total_iterations);
        }

        const ModelConfig base = need_model ? base_model_config() : ModelConfig{};
        resolved["model"] = json::parse(model_config_to_json(base));
        resolved["train"] = {{"batch_size", train.batch_size},
                             {"total_iterations", train.total_iterations},
                             {"base_lr", train.base_lr},
                             {"lr_milestones", train.lr_milestones},
                             {"alpha", train.alpha},
                             {"seed", train.seed},
                             {"val_cadence", train.val_cadence},
                             {"beta1", train.beta1},
                             {"beta2", train.beta2},
                             {"eps", train.eps},
                             {"patch_size", train.patch_size},
                             {"patches_per_image", train.patches_per_image},
                             {"strict_patches", train.strict_patches},
                             {"augment", train.augment},
                             {"cache_teacher", train.cache_teacher}};
        resolved["run"] = {{"subcommand", subcommand}, {"seed", seed},
                           {"data", data_dir},         {"lr_dir", lr_dir},
                           {"val", val_dir},           {"out", out_dir},
                           {"overrides", overrides}};

        for (const auto& ov : overrides) {
            const auto eq = ov.find('=');
            if (eq == std::string::npos) {
                throw UsageError(subcommand + ": override '" + ov + "' is not key=value");
            }
            const std::string key = ov.substr(0, eq);
            const std::string value = ov.substr(eq + 1);
            json* node = &resolved;
            std::size_t start = 0;
            while (true) {
                const auto dot = key.find('.', start);
                const std::string part =
                    key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
                if (dot == std::string::npos) {
                    json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
                    (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
                    break;
                }
                node = &(*node)[part];
                start = dot + 1;
            }
        }

        // structs re-read from the snapshot
        model_cfg = model_config_from_json(resolved["model"].dump());
        const json& t = resolved["train"];
        train.batch_size = t.at("batch_size").get<std::int64_t>();
        train.total_iterations = t.at("total_iterations").get<std::int64_t>();
        train.base_lr = t.at("base_lr").get<double>();
        train.lr_milestones = t.at("lr_milestones").get<std::vector<std::int64_t>>();
        train.alpha = t.at("alpha").get<double>();
        train.seed = t.at("seed").get<std::uint64_t>();
        train.val_cadence = t.at("val_cadence").get<std::int64_t>();
        train.beta1 = t.at("beta1").get<double>();
        train.beta2 = t.at("beta2").get<double>();
        train.eps = t.at("eps").get<double>();
        train.patch_size = t.at("patch_size").get<std::int64_t>();
        train.patches_per_image = t.at("patches_per_image").get<std::int64_t>();
        train.strict_patches = t.at("strict_patches").get<bool>();
        train.augment = t.at("augment").get<bool>();
        train.cache_teacher = t.at("cache_teacher").get<bool>();
    }

    void snapshot() const {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "resolved_config.json", resolved.dump(2) + "\n");
    }

    Dataset load_train_data() const {
        return Dataset::load(data_dir,
                             lr_dir.empty() ? std::nullopt : std::optional<std::string>(lr_dir),
                             model_cfg.scale);
    }

    std::optional<Dataset> load_val_data() const {
        if (val_dir.empty()) return std::nullopt;
        return Dataset::load(val_dir, std::nullopt, model_cfg.scale);
    }

    ModelConfig model_cfg;
};

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_train_teacher(RunSpec& spec, const std::string& resume) {
    spec.snapshot();
    const Dataset data = spec.load_train_data();
    const auto val = spec.load_val_data();
    const Dataset* val_ptr = val ? &*val : &data;
    const auto result = train_teacher(spec.model_cfg, spec.train, data, val_ptr, spec.out_dir,
                                      resume.empty() ? std::nullopt
                                                     : std::optional<std::string>(resume));
    std::cout << "train-teacher: final loss " << fmt_g(result.final_loss) << ", val PSNR "
              << fmt_g(result.final_val_psnr) << " dB, checkpoint " << result.final_checkpoint
              << "\n";
    return 0;
}

int cmd_distill(RunSpec& spec, const std::string& teacher_ckpt) {
    spec.snapshot();
    const Dataset data = spec.load_train_data();
    const auto val = spec.load_val_data();
    const Dataset* val_ptr = val ? &*val : &data;
    const auto result =
        distill_student(teacher_ckpt, spec.model_cfg, spec.train, data, val_ptr, spec.out_dir);
    std::cout << "distill: alpha " << fmt_g(spec.train.alpha) << ", final loss "
              << fmt_g(result.final_loss) << ", val PSNR " << fmt_g(result.final_val_psnr)
              << " dB, checkpoint " << result.final_checkpoint << "\n";
    return 0;
}

int cmd_eval(RunSpec& spec, const std::string& ckpt, std::int64_t crop, std::int64_t tile,
             std::string name) {
    spec.model_cfg = checkpoint_config(ckpt);
    spec.resolved["model"] = json::parse(model_config_to_json(spec.model_cfg));
    spec.snapshot();
    SrModel<float> model(spec.model_cfg, spec.seed);
    load_checkpoint(ckpt, model.params());

    const Dataset data = spec.load_train_data();
    if (data.empty()) throw UsageError("eval: no PNGs under " + spec.data_dir);
    if (crop < 0) crop = spec.model_cfg.scale;
    if (name.empty()) name = fs::path(spec.data_dir).filename().string();

    MetricReport report;
    report.dataset = name;
    report.crop = crop;
    TileGrid grid;
    grid.tile = tile;
    for (const auto& item : data.items()) {
        const Image sr = super_resolve(model, item.lr, grid);
        report.add(item.name, psnr_y(sr, item.hr, crop), ssim_y(sr, item.hr, crop));
    }
    report.finalize();
    write_text(fs::path(spec.out_dir) / "eval.csv", report.to_csv());
    write_text(fs::path(spec.out_dir) / "summary.json", report.to_json());
    std::cout << "eval: " << name << " mean PSNR " << fmt_g(report.mean_psnr) << " dB, mean SSIM "
              << fmt_g(report.mean_ssim) << " (crop " << crop << ", " << report.rows.size()
              << " images)\n";
    return 0;
}

int cmd_infer(RunSpec& spec, const std::string& ckpt, const std::vector<std::string>& inputs,
              std::int64_t tile, std::int64_t overlap) {
    spec.model_cfg = checkpoint_config(ckpt);
    spec.resolved["model"] = json::parse(model_config_to_json(spec.model_cfg));
    spec.snapshot();
    SrModel<float> model(spec.model_cfg, spec.seed);
    load_checkpoint(ckpt, model.params());

    TileGrid grid;
    grid.tile = tile;
    grid.overlap = overlap;
    for (const auto& in_path : inputs) {
        const Image lr = load_png(in_path);
        const Image sr = super_resolve(model, lr, grid);
        const fs::path out_path = fs::path(spec.out_dir) / fs::path(in_path).filename();
        save_png(sr, out_path.string());
        std::cout << "infer: " << in_path << " -> " << out_path.string() << " (" << sr.width << "x"
                  << sr.height << ")\n";
    }
    return 0;
}

std::string param_table_csv(const ParamReport& rep) {
    std::string csv = "layer,kind,params_analytic,params_enumerated\n";
    for (const auto& row : rep.rows) {
        csv += row.name + "," + row.kind + "," + std::to_string(row.analytic) + "," +
               std::to_string(row.enumerated) + "\n";
    }
    return csv;
}

int cmd_count(RunSpec& spec, std::int64_t ratio_small, std::int64_t ratio_base) {
    spec.snapshot();
    SrModel<float> model(spec.model_cfg, spec.seed);
    const auto rep = count_params(model);
    write_text(fs::path(spec.out_dir) / "params.csv", param_table_csv(rep));

    json summary;
    summary["total_params"] = rep.total_enumerated;
    summary["total_params_analytic"] = rep.total_analytic;
    summary["mixer_layers"] = model.mixer_layer_count();
    std::cout << "count: " << rep.total_enumerated << " parameters ("
              << model.mixer_layer_count() << " mixer layers), analytic total "
              << rep.total_analytic << "\n";
    if (ratio_small > 0 && ratio_base > 0) {
        const auto r = embed_reduction_ratio(ratio_small, ratio_base);
        summary["embed_reduction"] = {{"d_small", ratio_small},
                                      {"d_base", ratio_base},
                                      {"num", r.num},
                                      {"den", r.den},
                                      {"value", r.value}};
        std::cout << "count: embed reduction " << ratio_small << "^2/" << ratio_base << "^2 = "
                  << r.num << "/" << r.den << " = " << fmt_g(r.value) << "\n";
    }
    write_text(fs::path(spec.out_dir) / "count_summary.json", summary.dump(2) + "\n");
    return 0;
}

int cmd_flops(RunSpec& spec, std::int64_t height, std::int64_t width) {
    spec.snapshot();
    SrModel<float> model(spec.model_cfg, spec.seed);
    const auto rep = estimate_flops(model, height, width);
    std::string csv = "layer,kind,flops\n";
    for (const auto& row : rep.rows) {
        csv += row.name + "," + row.kind + "," + std::to_string(row.flops) + "\n";
    }
    write_text(fs::path(spec.out_dir) / "flops.csv", csv);
    json summary;
    summary["input"] = {{"height", height}, {"width", width}};
    summary["total_flops"] = rep.total;
    write_text(fs::path(spec.out_dir) / "flops_summary.json", summary.dump(2) + "\n");
    std::cout << "flops: " << rep.total << " MACs*2 for a 3x" << height << "x" << width
              << " input\n";
    return 0;
}

int cmd_sweep_alpha(RunSpec& spec, const std::string& teacher_ckpt,
                    const std::vector<double>& alphas) {
    spec.snapshot();
    const Dataset data = spec.load_train_data();
    const auto val = spec.load_val_data();
    const Dataset* val_ptr = val ? &*val : &data;

    std::string csv = "alpha,psnr\n";
    svg::Series series;
    series.label = "validation PSNR (dB) vs alpha";
    for (const double alpha : alphas) {
        TrainConfig cfg = spec.train;
        cfg.alpha = alpha;
        const std::string sub_out =
            (fs::path(spec.out_dir) / ("alpha_" + fmt_g(alpha))).string();
        const auto result =
            distill_student(teacher_ckpt, spec.model_cfg, cfg, data, val_ptr, sub_out);
        csv += fmt_g(alpha) + "," + fmt_g(result.final_val_psnr) + "\n";
        series.x.push_back(alpha);
        series.y.push_back(result.final_val_psnr);
        std::cout << "sweep-alpha: alpha " << fmt_g(alpha) << " -> PSNR "
                  << fmt_g(result.final_val_psnr) << " dB\n";
    }
    write_text(fs::path(spec.out_dir) / "alpha_sweep.csv", csv);
    svg::write_chart((fs::path(spec.out_dir) / "alpha_sweep.svg").string(),
                     "student PSNR across distillation weights", "alpha", {series});
    return 0;
}

int cmd_sweep_rank(RunSpec& spec, const std::vector<std::int64_t>& ranks, std::int64_t height,
                   std::int64_t width) {
    spec.snapshot();
    const Dataset data = spec.load_train_data();
    const auto val = spec.load_val_data();
    const Dataset* val_ptr = val ? &*val : &data;

    std::string csv = "rank,params,flops,final_psnr\n";
    svg::Series psnr_series{"validation PSNR (dB) vs rank", {}, {}};
    svg::Series flop_series{"forward FLOPs vs rank", {}, {}};
    for (const auto rank : ranks) {
        ModelConfig cfg = spec.model_cfg;
        cfg.rank = rank;
        SrModel<float> probe(cfg, spec.seed);
        const auto params = count_params(probe);
        const auto flops = estimate_flops(probe, height, width);

        TrainConfig tcfg = spec.train;
        const std::string sub_out = (fs::path(spec.out_dir) / ("rank_" + std::to_string(rank))).string();
        fs::create_directories(sub_out);
        write_text(fs::path(sub_out) / "params.csv", param_table_csv(params));
        std::string point_csv = "layer,kind,flops\n";
        for (const auto& row : flops.rows) {
            point_csv += row.name + "," + row.kind + "," + std::to_string(row.flops) + "\n";
        }
        write_text(fs::path(sub_out) / "flops.csv", point_csv);
        const auto result = train_teacher(cfg, tcfg, data, val_ptr, sub_out);
        csv += std::to_string(rank) + "," + std::to_string(params.total_enumerated) + "," +
               std::to_string(flops.total) + "," + fmt_g(result.final_val_psnr) + "\n";
        psnr_series.x.push_back(static_cast<double>(rank));
        psnr_series.y.push_back(result.final_val_psnr);
        flop_series.x.push_back(static_cast<double>(rank));
        flop_series.y.push_back(static_cast<double>(flops.total));
        std::cout << "sweep-rank: rank " << rank << " -> params " << params.total_enumerated
                  << ", flops " << flops.total << ", PSNR " << fmt_g(result.final_val_psnr)
                  << " dB (final loss " << fmt_g(result.final_loss) << ")\n";
    }
    write_text(fs::path(spec.out_dir) / "rank_sweep.csv", csv);
    svg::write_chart((fs::path(spec.out_dir) / "rank_sweep.svg").string(),
                     "teacher training across mixer ranks", "rank", {psnr_series, flop_series});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mlsr: selective state-space image super-resolution at desk scale"};
    app.require_subcommand(1);

    RunSpec spec;
    std::string resume, teacher_ckpt, ckpt, eval_name;
    std::vector<std::string> infer_inputs;
    std::int64_t crop = -1, tile = 64, overlap = 0;
    std::int64_t ratio_small = 0, ratio_base = 0;
    std::int64_t flop_h = 64, flop_w = 64;
    std::vector<double> alphas{0.2, 0.4, 0.6, 0.8};
    std::vector<std::int64_t> ranks{2, 30};

    auto* train_cmd = app.add_subcommand("train-teacher", "train a model against ground truth");
    spec.add_common(train_cmd);
    spec.add_train_flags(train_cmd);
    train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");

    auto* distill_cmd = app.add_subcommand("distill", "distill a student from a frozen teacher");
    spec.add_common(distill_cmd);
    spec.add_train_flags(distill_cmd);
    distill_cmd->add_option("--teacher", teacher_ckpt, "teacher checkpoint directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a dataset");
    spec.add_common(eval_cmd);
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--crop", crop, "border crop in pixels (default: scale)");
    eval_cmd->add_option("--tile", tile, "inference tile size");
    eval_cmd->add_option("--name", eval_name, "dataset label in reports");

    auto* infer_cmd = app.add_subcommand("infer", "super-resolve PNGs patch-wise");
    spec.add_common(infer_cmd, /*with_data=*/false);
    infer_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    infer_cmd->add_option("--input", infer_inputs, "input PNG path(s)")->required();
    infer_cmd->add_option("--tile", tile, "tile size");
    infer_cmd->add_option("--overlap", overlap, "tile overlap (averaged)");

    auto* count_cmd = app.add_subcommand("count", "parameter accounting per layer");
    spec.add_common(count_cmd, /*with_data=*/false);
    count_cmd->add_option("--ratio-small", ratio_small, "embed-reduction numerator dim");
    count_cmd->add_option("--ratio-base", ratio_base, "embed-reduction denominator dim");

    auto* flops_cmd = app.add_subcommand("flops", "FLOP accounting per layer");
    spec.add_common(flops_cmd, /*with_data=*/false);
    flops_cmd->add_option("--height", flop_h, "input height");
    flops_cmd->add_option("--width", flop_w, "input width");

    auto* alpha_cmd = app.add_subcommand("sweep-alpha", "distill at each alpha; CSV + SVG");
    spec.add_common(alpha_cmd);
    spec.add_train_flags(alpha_cmd);
    alpha_cmd->add_option("--teacher", teacher_ckpt, "teacher checkpoint directory")->required();
    alpha_cmd->add_option("--alphas", alphas, "alpha grid")->delimiter(',');

    auto* rank_cmd = app.add_subcommand("sweep-rank", "train the teacher at each rank; CSV + SVG");
    spec.add_common(rank_cmd);
    spec.add_train_flags(rank_cmd);
    rank_cmd->add_option("--ranks", ranks, "rank grid")->delimiter(',');
    rank_cmd->add_option("--height", flop_h, "FLOP-accounting input height");
    rank_cmd->add_option("--width", flop_w, "FLOP-accounting input width");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // 0 covers --help/--version
    }
    const std::string sub = app.get_subcommands().front()->get_name();

    try {
        spec.resolve(sub, /*need_model=*/sub != "eval" && sub != "infer");
        if (sub == "train-teacher") return cmd_train_teacher(spec, resume);
        if (sub == "distill") return cmd_distill(spec, teacher_ckpt);
        if (sub == "eval") return cmd_eval(spec, ckpt, crop, tile, eval_name);
        if (sub == "infer") return cmd_infer(spec, ckpt, infer_inputs, tile, overlap);
        if (sub == "count") return cmd_count(spec, ratio_small, ratio_base);
        if (sub == "flops") return cmd_flops(spec, flop_h, flop_w);
        if (sub == "sweep-alpha") return cmd_sweep_alpha(spec, teacher_ckpt, alphas);
        if (sub == "sweep-rank") return cmd_sweep_rank(spec, ranks, flop_h, flop_w);
        std::cerr << "mlsr: unknown subcommand " << sub << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << sub << ": usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << sub << ": " << e.what() << "\n";
        return 1;
    }
}
