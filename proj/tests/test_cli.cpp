#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mlsr/model.hpp"
#include "mlsr/png_io.hpp"

using namespace mlsr;
namespace fs = std::filesystem;

#ifndef MLSR_CLI_PATH
#define MLSR_CLI_PATH "mlsr"
#endif

namespace {

fs::path work() {
    static const fs::path dir = [] {
        auto p = fs::temp_directory_path() / "mlsr_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

int run_cli(const std::string& args, const fs::path& out_log) {
    unsetenv("MLSR_OUT");
    const std::string cmd =
        std::string(MLSR_CLI_PATH) + " " + args + " >" + out_log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("count delegates to the model accounting") {
    const auto out = work() / "count";
    const int rc = run_cli("count --preset student --out " + out.string() +
                               " --ratio-small 60 --ratio-base 192",
                           work() / "count.log");
    REQUIRE(rc == 0);

    SrModel<float> model(ModelConfig::student(), 0);
    const auto rep = count_params(model);
    const std::string log = slurp(work() / "count.log");
    CHECK(log.find(std::to_string(rep.total_enumerated)) != std::string::npos);
    CHECK(log.find("0.09765625") != std::string::npos);

    const std::string csv = slurp(out / "params.csv");
    CHECK(csv.rfind("layer,kind,params_analytic,params_enumerated\n", 0) == 0);
    std::int64_t csv_total = 0;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        const auto last = line.rfind(',');
        csv_total += std::stoll(line.substr(last + 1));
    }
    CHECK(csv_total == rep.total_enumerated);
    CHECK(fs::exists(out / "resolved_config.json"));
}

TEST_CASE("overrides land in the resolved snapshot verbatim") {
    const auto out = work() / "ov";
    const int rc = run_cli(
        "count --preset student --set model.d_model=16 --set model.rank=8 --out " + out.string(),
        work() / "ov.log");
    REQUIRE(rc == 0);
    const std::string snap = slurp(out / "resolved_config.json");
    CHECK(snap.find("\"d_model\": 16") != std::string::npos);
    CHECK(snap.find("\"rank\": 8") != std::string::npos);
    CHECK(snap.find("model.d_model=16") != std::string::npos);

    SrModel<float> model([&] {
        ModelConfig cfg = ModelConfig::student();
        cfg.d_model = 16;
        cfg.rank = 8;
        return cfg;
    }(), 0);
    CHECK(slurp(work() / "ov.log").find(std::to_string(count_params(model).total_enumerated)) !=
          std::string::npos);
}

TEST_CASE("exit codes: usage 2, runtime 1") {
    CHECK(run_cli("count --out " + (work() / "no_cfg").string(), work() / "e1.log") == 2);
    CHECK(run_cli("nope", work() / "e2.log") == 2);
    CHECK(run_cli("eval --ckpt /missing/ckpt --data /missing/data --out " +
                      (work() / "e3").string(),
                  work() / "e3.log") == 1);
    const std::string log = slurp(work() / "e3.log");
    CHECK(log.rfind("eval:", 0) == 0);  // error names the failing stage
}

TEST_CASE("flops table is written and totals match the library") {
    const auto out = work() / "flops";
    REQUIRE(run_cli("flops --preset student --height 32 --width 32 --out " + out.string(),
                    work() / "flops.log") == 0);
    SrModel<float> model(ModelConfig::student(), 0);
    const auto rep = estimate_flops(model, 32, 32);
    CHECK(slurp(work() / "flops.log").find(std::to_string(rep.total)) != std::string::npos);
    const std::string csv = slurp(out / "flops.csv");
    CHECK(csv.rfind("layer,kind,flops\n", 0) == 0);
}
