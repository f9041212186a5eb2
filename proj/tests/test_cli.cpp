// End-to-end checks of the zsrl binary: status lines, exit codes, artifact
// determinism. The binary path comes in through ZSRL_CLI_PATH.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#ifndef ZSRL_CLI_PATH
#error "ZSRL_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out_file = dir / "stdout.txt";
    const fs::path err_file = dir / "stderr.txt";
    const std::string cmd = std::string(ZSRL_CLI_PATH) + " " + args + " > " + out_file.string() +
                            " 2> " + err_file.string();
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(raw);
    std::ifstream in(out_file);
    std::ostringstream buf;
    buf << in.rdbuf();
    r.stdout_text = buf.str();
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("zsrl_cli_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_config(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2);
}

nlohmann::json tiny_config(const fs::path& output_dir) {
    nlohmann::json j;
    j["seed"] = 1234;
    j["output_dir"] = output_dir.string();
    j["data"]["synthetic"] = {
        {"num_classes", 6},     {"sketches_per_class", 10}, {"photos_per_class", 10},
        {"feature_dim", 8},     {"class_separation", 3.0},  {"sketch_transform_seed", 5},
        {"sparsify_fraction", 0.125}, {"noise_sigma", 0.4},
    };
    j["split"] = {{"protocol", "heldout_list"}, {"heldout", {4, 5}}};
    j["encoder"] = {{"hidden_dims", {8}}, {"embed_dim", 4}};
    j["optimizer"] = {{"lr0", 0.02}, {"max_epochs", 2}, {"batch_quads", 8}};
    j["distill"] = {{"hidden_width", 8}, {"max_epochs", 30}};
    j["eval"] = {{"k_values", {5, 10}}, {"map_k", 10}};
    return j;
}

// stdout must be exactly one JSON line.
nlohmann::json parse_status(const RunResult& r) {
    REQUIRE_FALSE(r.stdout_text.empty());
    const std::size_t newline = r.stdout_text.find('\n');
    REQUIRE(newline == r.stdout_text.size() - 1);
    return nlohmann::json::parse(r.stdout_text);
}

}  // namespace

TEST_CASE("full command chain with stable status lines") {
    TempDir dir("chain");
    const fs::path cfg_path = dir.path / "config.json";
    const fs::path out_dir = dir.path / "out";
    write_config(cfg_path, tiny_config(out_dir));

    const RunResult gen = run_cli("gen-data --config " + cfg_path.string(), dir.path);
    CHECK(gen.exit_code == 0);
    const nlohmann::json gen_status = parse_status(gen);
    CHECK(gen_status.at("command") == "gen-data");
    CHECK(gen_status.at("status") == "ok");
    CHECK(fs::exists(out_dir / "dataset.tsv"));
    CHECK(fs::exists(out_dir / "split.json"));

    const RunResult soft = run_cli("soft-labels --config " + cfg_path.string(), dir.path);
    CHECK(soft.exit_code == 0);
    CHECK(parse_status(soft).at("rows") == 4);
    CHECK(fs::exists(out_dir / "soft_labels.tsv"));

    const RunResult train = run_cli("train --config " + cfg_path.string(), dir.path);
    CHECK(train.exit_code == 0);
    const nlohmann::json train_status = parse_status(train);
    CHECK(fs::exists(out_dir / "checkpoint.json"));
    CHECK(fs::exists(out_dir / "metrics.jsonl"));
    CHECK(train_status.at("best_val_metric").is_number());

    const RunResult eval = run_cli("eval --config " + cfg_path.string() + " --checkpoint " +
                                       (out_dir / "checkpoint.json").string(),
                                   dir.path);
    CHECK(eval.exit_code == 0);
    const nlohmann::json eval_status = parse_status(eval);
    CHECK(fs::exists(out_dir / "results.json"));
    CHECK(eval_status.at("gallery_modes").contains("zero_shot"));
}

TEST_CASE("reruns with one seed produce identical artifacts") {
    TempDir dir("determinism");
    const fs::path cfg_path = dir.path / "config.json";
    const fs::path out_dir = dir.path / "out";
    write_config(cfg_path, tiny_config(out_dir));

    REQUIRE(run_cli("gen-data --config " + cfg_path.string(), dir.path).exit_code == 0);
    const std::string dataset_a = read_file(out_dir / "dataset.tsv");
    REQUIRE(run_cli("gen-data --config " + cfg_path.string(), dir.path).exit_code == 0);
    CHECK(read_file(out_dir / "dataset.tsv") == dataset_a);

    REQUIRE(run_cli("soft-labels --config " + cfg_path.string(), dir.path).exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg_path.string(), dir.path).exit_code == 0);
    const std::string metrics_a = read_file(out_dir / "metrics.jsonl");
    REQUIRE(run_cli("train --config " + cfg_path.string(), dir.path).exit_code == 0);
    CHECK(read_file(out_dir / "metrics.jsonl") == metrics_a);
}

TEST_CASE("exit code 2 on config errors") {
    TempDir dir("badcfg");
    const fs::path cfg_path = dir.path / "config.json";
    nlohmann::json j = tiny_config(dir.path / "out");
    j["data"]["synthetic"]["sparsify_fraction"] = 1.5;
    write_config(cfg_path, j);
    const RunResult r = run_cli("gen-data --config " + cfg_path.string(), dir.path);
    CHECK(r.exit_code == 2);
    const nlohmann::json status = parse_status(r);
    CHECK(status.at("status") == "error");
    CHECK(status.at("exit_code") == 2);

    nlohmann::json unknown = tiny_config(dir.path / "out");
    unknown["surprise"] = true;
    write_config(cfg_path, unknown);
    CHECK(run_cli("gen-data --config " + cfg_path.string(), dir.path).exit_code == 2);
}

TEST_CASE("exit code 3 when the soft-label file is missing") {
    TempDir dir("missing");
    const fs::path cfg_path = dir.path / "config.json";
    write_config(cfg_path, tiny_config(dir.path / "out"));
    const RunResult r = run_cli("train --config " + cfg_path.string(), dir.path);
    CHECK(r.exit_code == 3);
    CHECK(parse_status(r).at("status") == "error");
}

TEST_CASE("exit code 5 on a checkpoint/dataset dimension mismatch") {
    TempDir dir("dim");
    const fs::path cfg_path = dir.path / "config.json";
    const fs::path out_dir = dir.path / "out";
    nlohmann::json j = tiny_config(out_dir);
    j["losses"]["enable_knowledge"] = false;
    write_config(cfg_path, j);
    REQUIRE(run_cli("train --config " + cfg_path.string(), dir.path).exit_code == 0);

    j["data"]["synthetic"]["feature_dim"] = 9;
    write_config(cfg_path, j);
    const RunResult r = run_cli("eval --config " + cfg_path.string() + " --checkpoint " +
                                    (out_dir / "checkpoint.json").string(),
                                dir.path);
    CHECK(r.exit_code == 5);
}

TEST_CASE("seed flag overrides the config document") {
    TempDir dir("seedflag");
    const fs::path cfg_path = dir.path / "config.json";
    const fs::path out_dir = dir.path / "out";
    write_config(cfg_path, tiny_config(out_dir));
    REQUIRE(run_cli("gen-data --config " + cfg_path.string(), dir.path).exit_code == 0);
    const std::string dataset_a = read_file(out_dir / "dataset.tsv");
    REQUIRE(run_cli("gen-data --config " + cfg_path.string() + " --seed 777", dir.path).exit_code ==
            0);
    CHECK(read_file(out_dir / "dataset.tsv") != dataset_a);
}
