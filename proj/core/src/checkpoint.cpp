#include "mlsr/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mlsr {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte swapping not implemented");

namespace {

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

json config_to_json_obj(const ModelConfig& cfg) {
    return json{{"d_model", cfg.d_model},
                {"n_rmmb", cfg.n_rmmb},
                {"blocks_per_rmmb", cfg.blocks_per_rmmb},
                {"rank", cfg.rank},
                {"scale", cfg.scale},
                {"d_state", cfg.d_state},
                {"expand", cfg.expand},
                {"conv_kernel", cfg.conv_kernel}};
}

ModelConfig config_from_json_obj(const json& j) {
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<std::int64_t>();
    cfg.n_rmmb = j.at("n_rmmb").get<std::int64_t>();
    cfg.blocks_per_rmmb = j.at("blocks_per_rmmb").get<std::int64_t>();
    cfg.rank = j.at("rank").get<std::int64_t>();
    cfg.scale = j.at("scale").get<std::int64_t>();
    if (j.contains("d_state")) cfg.d_state = j.at("d_state").get<std::int64_t>();
    if (j.contains("expand")) cfg.expand = j.at("expand").get<std::int64_t>();
    if (j.contains("conv_kernel")) cfg.conv_kernel = j.at("conv_kernel").get<std::int64_t>();
    return cfg;
}

}  // namespace

// ModelConfig JSON surface declared in model.hpp.
ModelConfig model_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
    }
    return config_from_json_obj(j);
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return config_to_json_obj(cfg).dump(2) + "\n";
}

ModelConfig load_model_config(const std::string& path) {
    try {
        return model_config_from_json(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void save_model_config(const ModelConfig& cfg, const std::string& path) {
    write_file(path, model_config_to_json(cfg));
}

void save_checkpoint(const std::string& dir, const ParamRegistry<float>& reg,
                     const ModelConfig& cfg) {
    fs::create_directories(dir);
    json manifest = json::array();
    std::ofstream wf(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!wf) throw IoError("cannot open " + dir + "/weights.bin for writing");
    for (const auto& e : reg.entries()) {
        json item;
        item["name"] = e.name;
        item["shape"] = e.tensor.shape();
        item["dtype"] = "f32";
        manifest.push_back(std::move(item));
        wf.write(reinterpret_cast<const char*>(e.tensor.data().data()),
                 static_cast<std::streamsize>(e.tensor.data().size_bytes()));
    }
    if (!wf) throw IoError("write failed for " + dir + "/weights.bin");
    wf.close();
    write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
    write_file(fs::path(dir) / "config.json", model_config_to_json(cfg));
}

void load_checkpoint(const std::string& dir, ParamRegistry<float>& reg) {
    json manifest;
    try {
        manifest = json::parse(read_file(fs::path(dir) / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError(dir + "/manifest.json: " + e.what());
    }

    std::set<std::string> manifest_names, reg_names;
    for (const auto& item : manifest) manifest_names.insert(item.at("name").get<std::string>());
    for (const auto& e : reg.entries()) reg_names.insert(e.name);
    if (manifest_names != reg_names) {
        std::ostringstream os;
        os << "checkpoint " << dir << " does not match the model config.";
        os << " missing from checkpoint:";
        bool any = false;
        for (const auto& n : reg_names) {
            if (!manifest_names.count(n)) {
                os << ' ' << n;
                any = true;
            }
        }
        if (!any) os << " (none)";
        os << "; unexpected in checkpoint:";
        any = false;
        for (const auto& n : manifest_names) {
            if (!reg_names.count(n)) {
                os << ' ' << n;
                any = true;
            }
        }
        if (!any) os << " (none)";
        throw IoError(os.str());
    }

    std::ifstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wf) throw IoError("cannot open " + dir + "/weights.bin");
    for (const auto& item : manifest) {
        const std::string name = item.at("name").get<std::string>();
        const Shape shape = item.at("shape").get<Shape>();
        Tensor<float>* t = nullptr;
        for (auto& e : reg.entries()) {
            if (e.name == name) {
                t = &e.tensor;
                break;
            }
        }
        if (t->shape() != shape) {
            throw IoError("checkpoint " + dir + ": shape mismatch for " + name + ": file has " +
                          shape_str(shape) + ", model has " + shape_str(t->shape()));
        }
        wf.read(reinterpret_cast<char*>(t->data().data()),
                static_cast<std::streamsize>(t->data().size_bytes()));
        if (!wf) throw IoError("checkpoint " + dir + ": weights.bin truncated at " + name);
    }
}

ModelConfig checkpoint_config(const std::string& dir) {
    return load_model_config((fs::path(dir) / "config.json").string());
}

void save_trainer_state(const std::string& dir, const TrainerState& state) {
    fs::create_directories(dir);
    json j;
    j["iteration"] = state.iteration;
    j["seed"] = state.seed;
    j["adam_step"] = state.adam_step;
    j["moments"] = "moments.bin";
    write_file(fs::path(dir) / "trainer_state.json", j.dump(2) + "\n");

    std::ofstream mf(fs::path(dir) / "moments.bin", std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot open " + dir + "/moments.bin for writing");
    for (std::size_t i = 0; i < state.m.size(); ++i) {
        mf.write(reinterpret_cast<const char*>(state.m[i].data()),
                 static_cast<std::streamsize>(state.m[i].size() * sizeof(float)));
        mf.write(reinterpret_cast<const char*>(state.v[i].data()),
                 static_cast<std::streamsize>(state.v[i].size() * sizeof(float)));
    }
    if (!mf) throw IoError("write failed for " + dir + "/moments.bin");
}

std::optional<TrainerState> load_trainer_state(const std::string& dir) {
    const fs::path sp = fs::path(dir) / "trainer_state.json";
    if (!fs::exists(sp)) return std::nullopt;
    json j;
    try {
        j = json::parse(read_file(sp));
    } catch (const json::exception& e) {
        throw IoError(sp.string() + ": " + e.what());
    }
    TrainerState state;
    state.iteration = j.at("iteration").get<std::int64_t>();
    state.seed = j.at("seed").get<std::uint64_t>();
    state.adam_step = j.at("adam_step").get<std::int64_t>();

    // Moment vector sizes come from the manifest.
    json manifest;
    try {
        manifest = json::parse(read_file(fs::path(dir) / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError(dir + "/manifest.json: " + e.what());
    }
    std::ifstream mf(fs::path(dir) / "moments.bin", std::ios::binary);
    if (!mf) throw IoError("cannot open " + dir + "/moments.bin");
    for (const auto& item : manifest) {
        const Shape shape = item.at("shape").get<Shape>();
        const std::size_t n = static_cast<std::size_t>(numel_of(shape));
        std::vector<float> m(n), v(n);
        mf.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(float)));
        mf.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!mf) throw IoError(dir + "/moments.bin truncated");
        state.m.push_back(std::move(m));
        state.v.push_back(std::move(v));
    }
    return state;
}

}  // namespace mlsr
