#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "weaver/checkpoint.hpp"
#include "weaver/error.hpp"
#include "weaver/experiment.hpp"
#include "weaver/fs_util.hpp"

using namespace weaver;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& dir) {
    ExperimentConfig c;
    c.suite.num_corpora = 2;
    c.suite.sizes = {16, 12};
    c.suite.seed = 3;
    c.model.embed_dim = 4;
    c.model.num_layers = 1;
    c.model.hidden_dim = 4;
    c.hyper.epochs = 1;
    c.hyper.learning_rate = 0.01;
    c.hyper.batch_size = 8;
    c.strategies = {Strategy::finetune, Strategy::weaver, Strategy::mtl};
    c.orders = {{0, 1}};
    c.seeds = {1, 2};
    c.output_dir = (fs::temp_directory_path() / dir).string();
    c.save_checkpoints = false;
    fs::remove_all(c.output_dir);
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig parse(const std::string& text) { return experiment_config_from_json(nlohmann::json::parse(text)); }

}  // namespace

TEST_CASE("experiment config parsing and validation") {
    CHECK_NOTHROW(parse("{}"));
    CHECK_THROWS_AS(parse(R"({"strategies": ["weaver", "magic"]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"strategies": []})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"seeds": [-1]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"seeds": []})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"orders": [[0, 0, 1]]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"orders": [[0, 1]]})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"replay_fraction": 0})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"ewc_lambda": -1})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"unknown_key": 1})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"suite": {"num_corpora": 3, "sizes": [10, 10]}})"), ConfigError);
    CHECK_THROWS_AS(parse(R"({"model": {"num_layers": 2}, "freeze_layers": 3})"), ConfigError);
    CHECK_NOTHROW(parse(R"({"model": {"num_layers": 2}, "freeze_layers": 2})"));
    CHECK_THROWS_AS(parse(R"({"hyper": {"learning_rate": -0.1}})"), ConfigError);
    CHECK(parse(R"({"save_checkpoints": false})").save_checkpoints == false);

    const auto dir = fs::temp_directory_path() / "weaver-cfg-test";
    fs::create_directories(dir);
    {
        std::ofstream(dir / "bad.json") << "{ not json";
    }
    CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("config JSON round trip and hash") {
    ExperimentConfig c = tiny_config("weaver-hash");
    c.freeze_layers = 1;
    const ExperimentConfig back = experiment_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    ExperimentConfig moved = c;
    moved.output_dir = "/elsewhere";
    CHECK(config_hash(moved) == config_hash(c));
    ExperimentConfig changed = c;
    changed.hyper.epochs = 2;
    CHECK(config_hash(changed) != config_hash(c));
}

TEST_CASE("default orders are four permutations") {
    ExperimentConfig c;
    const auto orders = resolved_orders(c);
    CHECK(orders.size() == 4);
    for (auto o : orders) {
        std::sort(o.begin(), o.end());
        CHECK(o == std::vector<std::size_t>{0, 1, 2});
    }
    CHECK(resolved_orders(c) == orders);
}

TEST_CASE("zero epochs leave every row at the baseline") {
    ExperimentConfig c = tiny_config("weaver-zero");
    c.hyper.epochs = 0;
    const PreparedSuite p = prepare_suite(c);
    for (Strategy s : {Strategy::finetune, Strategy::weaver, Strategy::ewc, Strategy::replay}) {
        const RunResult r = execute_run(c, p, s, 0, 1);
        for (const auto& row : r.matrix.r) {
            CHECK(row == r.matrix.baseline);
        }
        CHECK(backward_transfer(r.matrix) == 0.0);
    }
}

TEST_CASE("run_experiment writes runs and tables; reruns are byte-identical") {
    ExperimentConfig c = tiny_config("weaver-run");
    c.save_checkpoints = true;
    REQUIRE(run_experiment(c) == 0);
    const fs::path out(c.output_dir);
    const fs::path run = out / "weaver" / "order-0" / "seed-1";
    CHECK(fs::exists(run / "manifest.json"));
    CHECK(fs::exists(run / "checkpoints" / "stage-1.wvr"));
    CHECK(fs::exists(out / "tables" / "table2.csv"));
    CHECK(fs::exists(out / "tables" / "table3.csv"));
    CHECK(fs::exists(out / "tables" / "aso.csv"));
    CHECK_FALSE(fs::exists(out / "FAILED"));

    const auto metrics = nlohmann::json::parse(slurp(run / "metrics.json"));
    CHECK(metrics.at("r").size() == 2);
    CHECK(metrics.at("forgetting_curve").size() == 3);
    const auto mtl = nlohmann::json::parse(slurp(out / "mtl" / "order-0" / "seed-1" / "metrics.json"));
    CHECK(mtl.at("bwt").is_null());
    CHECK(mtl.at("r").size() == 1);

    // Two seeds: the table carries a standard deviation.
    const auto results = nlohmann::json::parse(slurp(out / "tables" / "results.json"));
    for (const auto& row : results.at("table2")) {
        CHECK(row.at("runs").get<int>() == 2);
        const auto m1 = nlohmann::json::parse(
            slurp(out / row.at("strategy").get<std::string>() / "order-0" / "seed-1" / "metrics.json"));
        const auto m2 = nlohmann::json::parse(
            slurp(out / row.at("strategy").get<std::string>() / "order-0" / "seed-2" / "metrics.json"));
        const double a = m1.at("avg_final_f1").get<double>();
        const double b = m2.at("avg_final_f1").get<double>();
        CHECK(row.at("mean_f1").get<double>() == doctest::Approx((a + b) / 2));
        CHECK(row.at("sd_f1").get<double>() == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)));
    }

    const std::string first = slurp(run / "metrics.json");
    const std::string table = slurp(out / "tables" / "table2.csv");
    ExperimentConfig parallel = c;
    REQUIRE(run_experiment(parallel, RunOptions{2, std::nullopt}) == 0);
    CHECK(slurp(run / "metrics.json") == first);
    CHECK(slurp(out / "tables" / "table2.csv") == table);

    const Checkpoint ck = load_checkpoint_file((run / "checkpoints" / "stage-1.wvr").string());
    CHECK(ck.cumulative_examples == 28);
    fs::remove_all(out);
}

TEST_CASE("seed override runs a single seed") {
    ExperimentConfig c = tiny_config("weaver-override");
    c.strategies = {Strategy::weaver};
    REQUIRE(run_experiment(c, RunOptions{1, 7}) == 0);
    const fs::path out(c.output_dir);
    CHECK(fs::exists(out / "weaver" / "order-0" / "seed-7" / "metrics.json"));
    CHECK_FALSE(fs::exists(out / "weaver" / "order-0" / "seed-1"));
    fs::remove_all(out);
}

TEST_CASE("a failing run leaves a FAILED marker and returns 1") {
    ExperimentConfig c = tiny_config("weaver-fail");
    c.strategies = {Strategy::weaver};
    fs::create_directories(c.output_dir);
    // A regular file where the strategy directory should go.
    std::ofstream(fs::path(c.output_dir) / "weaver") << "x";
    CHECK(run_experiment(c) == 1);
    CHECK(fs::exists(fs::path(c.output_dir) / "FAILED"));
    fs::remove_all(c.output_dir);
}

TEST_CASE("cross-eval grid shape") {
    ExperimentConfig c = tiny_config("weaver-cross");
    const CrossEvalResult r = cross_eval(c);
    REQUIRE(r.grid.size() == 2);
    CHECK(r.grid[0].size() == 2);
    CHECK(r.per_seed.size() == 2);
    CHECK(r.grid[1][0] == doctest::Approx((r.per_seed[0][1][0] + r.per_seed[1][1][0]) / 2));
    CHECK(r.diagonal_mean() == doctest::Approx((r.grid[0][0] + r.grid[1][1]) / 2));
    CHECK(r.off_diagonal_mean() == doctest::Approx((r.grid[0][1] + r.grid[1][0]) / 2));
    CHECK(run_cross_eval(c) == 0);
    CHECK(fs::exists(fs::path(c.output_dir) / "cross_eval" / "grid.csv"));
    fs::remove_all(c.output_dir);
}

TEST_CASE("ablation") {
    ExperimentConfig c = tiny_config("weaver-abl");
    c.seeds = {1};
    c.freeze_layers = 0;
    const auto none = ablation(c);
    REQUIRE(none.size() == 1);
    CHECK(none[0].full == none[0].frozen);

    c.freeze_layers = 1;
    const auto one = ablation(c);
    CHECK(one[0].full == none[0].full);
    CHECK(one[0].frozen[0].size() == 2);

    c.freeze_layers.reset();
    CHECK_THROWS_AS(ablation(c), ConfigError);
    c.freeze_layers = 3;  // L + 2
    CHECK_THROWS_AS(ablation(c), ConfigError);
}

TEST_CASE("embedding projection") {
    ExperimentConfig c = tiny_config("weaver-emb");
    const EmbeddingProjection e = project_embeddings(c, 1, 20);
    std::size_t per_tag[3] = {0, 0, 0};
    for (const auto& r : e.records) {
        per_tag[r.model_tag == "independent" ? 0 : r.model_tag == "joint" ? 1 : 2]++;
    }
    CHECK(per_tag[0] > 0);
    CHECK(per_tag[0] == per_tag[1]);
    CHECK(per_tag[1] == per_tag[2]);
    CHECK(e.independent >= 0.0);
    ExperimentConfig one = c;
    one.suite.num_corpora = 1;
    one.suite.sizes = {10};
    one.orders = {{0}};
    CHECK_THROWS_AS(project_embeddings(one, 1), ConfigError);
}

TEST_CASE("aso file") {
    const auto dir = fs::temp_directory_path() / "weaver-aso";
    fs::create_directories(dir);
    std::ofstream(dir / "s.json") << R"({"a": [0.8, 0.82, 0.81], "b": [0.7, 0.71, 0.69], "bootstrap_n": 200})";
    CHECK(run_aso_file(dir / "s.json", dir / "out.json") == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "out.json"));
    CHECK(j.at("eps_min").get<double>() == 0.0);
    std::ofstream(dir / "bad.json") << R"({"a": [0.8]})";
    CHECK_THROWS_AS(run_aso_file(dir / "bad.json", dir / "o2.json"), ConfigError);
    fs::remove_all(dir);
}
