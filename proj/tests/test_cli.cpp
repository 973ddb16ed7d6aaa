#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "thermocast_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(THERMOCAST_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

nlohmann::json base_config(const std::string& out) {
    return {{"seed", 5},
            {"output_dir", out},
            {"simulation", {{"buildings", 2}, {"hours", 1400}, {"seed", 21}, {"overrides", {{"envelope_capacitance_factor", 4}}}}},
            {"train", {{"epochs", 10}, {"hidden", 6}, {"learning_rate", 0.003}}},
            {"evaluation", {{"test_instants", 4}, {"n_samples", 3}, {"uq_samples", 12}, {"uq_bins", 2}}},
            {"prior_sweep", {{"priors", {0.001, 0.0001}}, {"seeds", {1}}}}};
}

}  // namespace

TEST_CASE("simulate, train graybox, evaluate", "[cli]") {
    fs::remove_all(kRoot / "smoke");
    auto j = base_config("smoke");
    j["models"] = {"graybox"};
    const auto cfg = write_config("smoke.json", j);
    REQUIRE(run("simulate -c " + cfg.string()) == 0);
    REQUIRE(run("train -c " + cfg.string() + " -m graybox") == 0);
    REQUIRE(run("evaluate -c " + cfg.string()) == 0);
    const fs::path eval = kRoot / "smoke" / "eval";
    for (const char* f : {"rmse_K1.csv", "rmse_K6.csv", "rmse_K48.csv", "drift.csv", "scores.csv",
                          "weight_profiles.json", "run_manifest.json"})
        CHECK(fs::exists(eval / f));
    const auto manifest = nlohmann::json::parse(slurp(eval / "run_manifest.json"));
    CHECK(manifest.at("command") == "evaluate");
    CHECK(manifest.at("inputs").size() == 5);  // config, 2 datasets, 2 checkpoints
    CHECK(manifest.at("outputs").at(0).at("sha256").get<std::string>().size() == 64);
    CHECK(slurp(eval / "drift.csv").rfind("step,graybox\n1,", 0) == 0);

    SECTION("predict with H = 1 writes one row") {
        const fs::path data = kRoot / "smoke" / "data";
        const fs::path out = kRoot / "smoke" / "predict" / "forecast.csv";
        REQUIRE(run("predict --checkpoint " + (kRoot / "smoke" / "checkpoints" / "graybox" / "building_00.json").string() +
                    " --dataset " + (data / "building_00.csv").string() + " --site " + (data / "site.json").string() +
                    " --instant 2020-10-01T12:00:00Z --horizon 1 --out " + out.string()) == 0);
        const std::string text = slurp(out);
        CHECK(text.rfind("step,mean,step_std,cum_std\n1,", 0) == 0);
        CHECK(std::count(text.begin(), text.end(), '\n') == 2);
        CHECK(fs::exists(out.parent_path() / "run_manifest.json"));
    }
}

TEST_CASE("exit codes", "[cli]") {
    fs::create_directories(kRoot / "codes");
    const fs::path bad_csv = kRoot / "codes" / "bad.csv";
    std::ofstream(bad_csv) << "time,t_in\n2020-10-01T00:00:00Z,21\n";
    auto j = base_config("codes");
    j.erase("simulation");
    j["datasets"] = {{{"name", "bad"}, {"csv", bad_csv.string()}}};
    const auto cfg = write_config("codes.json", j);
    CHECK(run("train -c " + cfg.string() + " -m graybox") == 3);
    const std::string log = slurp(kRoot / "last.log");
    CHECK(log.find("line 1") != std::string::npos);

    CHECK(run("train -c " + write_config("unknown.json", {{"colour", "red"}}).string() + " -m graybox") == 2);
    CHECK(run("train -c " + cfg.string() + " -m arima") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("--help") == 0);

    auto diverge = base_config("codes_div");
    diverge["train"]["learning_rate"] = 1e300;
    diverge["models"] = {"lstm-mlp"};
    const auto div_cfg = write_config("diverge.json", diverge);
    REQUIRE(run("simulate -c " + div_cfg.string()) == 0);
    CHECK(run("train -c " + div_cfg.string() + " -m lstm-mlp") == 4);
}

TEST_CASE("seeded re-runs are byte-identical", "[cli]") {
    for (const char* name : {"rerun_a", "rerun_b"}) {
        fs::remove_all(kRoot / name);
        const auto cfg = write_config(std::string(name) + ".json", base_config(name));
        REQUIRE(run("simulate -c " + cfg.string()) == 0);
        for (const char* m : {"graybox", "lstm-mlp", "lstm-bnn"}) REQUIRE(run("train -c " + cfg.string() + " -m " + m) == 0);
        REQUIRE(run("evaluate -c " + cfg.string()) == 0);
        REQUIRE(run("prior-sweep -c " + cfg.string()) == 0);
    }
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(kRoot / "rerun_a")) {
        if (!entry.is_regular_file() || entry.path().filename() == "run_manifest.json") continue;
        const auto rel = fs::relative(entry.path(), kRoot / "rerun_a");
        INFO(rel.string());
        CHECK(slurp(entry.path()) == slurp(kRoot / "rerun_b" / rel));
        ++compared;
    }
    CHECK(compared >= 20);
}
