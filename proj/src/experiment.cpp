#include "weaver/experiment.hpp"

#include <algorithm>
#include <type_traits>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "weaver/checkpoint.hpp"
#include "weaver/error.hpp"
#include "weaver/fs_util.hpp"
#include "weaver/json_io.hpp"
#include "weaver/log.hpp"
#include "weaver/stats.hpp"

#ifndef WEAVER_VERSION
#define WEAVER_VERSION "0.0.0"
#endif
#ifndef WEAVER_GIT_REVISION
#define WEAVER_GIT_REVISION "unknown"
#endif

namespace weaver {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 5> kStrategyNames = {{
    {Strategy::finetune, "finetune"},
    {Strategy::ewc, "ewc"},
    {Strategy::weaver, "weaver"},
    {Strategy::replay, "replay"},
    {Strategy::mtl, "mtl"},
}};

template <class T>
struct unsigned_leaves : std::bool_constant<std::is_unsigned_v<T> && !std::is_same_v<T, bool>> {};
template <class T>
struct unsigned_leaves<std::vector<T>> : unsigned_leaves<T> {};

bool non_negative_integers(const json& j) {
    if (j.is_array()) {
        return std::all_of(j.begin(), j.end(), [](const json& e) { return non_negative_integers(e); });
    }
    return j.is_number_integer() && j.get<long long>() >= 0;
}

template <class T>
T get_field(const json& j, const char* key, const T& fallback, const char* where) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return fallback;
    }
    try {
        if constexpr (unsigned_leaves<T>::value) {
            if (!non_negative_integers(*it)) {
                throw ConfigError(fmt::format("{}.{}: expected a non-negative integer", where, key));
            }
        }
        return it->template get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
    }
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};

// Sample standard deviation; 0 for a single value.
MeanSd mean_sd(std::span<const double> v) {
    MeanSd out;
    out.n = v.size();
    if (v.empty()) {
        return out;
    }
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) {
            ss += (x - out.mean) * (x - out.mean);
        }
        out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

double row_mean(const std::vector<double>& row) {
    return row.empty() ? 0.0 : std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
}

std::string order_label(std::span<const std::size_t> order) {
    std::string s;
    for (std::size_t i = 0; i < order.size(); ++i) {
        s += (i ? "-" : "") + std::to_string(order[i]);
    }
    return s;
}

fs::path run_dir(const ExperimentConfig& config, Strategy s, std::size_t order_index, std::uint64_t seed) {
    return fs::path(config.output_dir) / strategy_name(s) / fmt::format("order-{}", order_index) /
           fmt::format("seed-{}", seed);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are the
// caller's business: fn must not throw.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                fn(i);
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
}

// Collects the first error message per index and rethrows nothing.
struct Failures {
    std::mutex mu;
    std::vector<std::string> messages;
    void add(std::string m) {
        std::lock_guard lock(mu);
        messages.push_back(std::move(m));
    }
};

std::string csv_number(double v) { return fmt::format("{:.6f}", v); }

std::string percent_cell(const MeanSd& m) { return fmt::format("{:.2f} ({:.2f})", 100.0 * m.mean, 100.0 * m.sd); }

void write_json_file(const fs::path& path, const json& j) { write_file_atomic(path.string(), j.dump(2) + "\n"); }

ExperimentConfig with_override(ExperimentConfig config, const RunOptions& options) {
    if (options.seed_override) {
        config.seeds = {*options.seed_override};
    }
    config.validate();
    return config;
}

void write_failed_marker(const fs::path& dir, std::span<const std::string> messages) {
    std::string body;
    for (const auto& m : messages) {
        body += m + "\n";
    }
    write_file_atomic((dir / "FAILED").string(), body);
}

}  // namespace

std::string_view strategy_name(Strategy s) {
    for (const auto& [k, name] : kStrategyNames) {
        if (k == s) {
            return name;
        }
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (const auto& [k, n] : kStrategyNames) {
        if (n == name) {
            return k;
        }
    }
    throw ConfigError(fmt::format("unknown strategy '{}' (expected finetune, ewc, weaver, replay or mtl)", name));
}

void ExperimentConfig::validate() const {
    try {
        suite.validate();
        hyper.validate();
        ModelConfig probe = model;
        probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 2);
        probe.num_labels = 3;
        probe.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (strategies.empty()) {
        throw ConfigError("strategies must not be empty");
    }
    if (std::set<Strategy>(strategies.begin(), strategies.end()).size() != strategies.size()) {
        throw ConfigError("strategies must not repeat");
    }
    const std::size_t k = suite.num_corpora;
    for (const auto& order : orders) {
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> expected(k);
        std::iota(expected.begin(), expected.end(), std::size_t{0});
        if (sorted != expected) {
            throw ConfigError(fmt::format("order [{}] is not a permutation of 0..{}", order_label(order), k - 1));
        }
    }
    if (seeds.empty()) {
        throw ConfigError("seeds must not be empty");
    }
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("seeds must not repeat");
    }
    if (freeze_layers && *freeze_layers > model.num_layers) {
        throw ConfigError(fmt::format("freeze_layers = {} exceeds the {} encoder layers", *freeze_layers,
                                      model.num_layers));
    }
    if (!(std::isfinite(ewc_lambda) && ewc_lambda >= 0.0)) {
        throw ConfigError("ewc_lambda must be a finite non-negative number");
    }
    if (!(replay_fraction > 0.0 && replay_fraction <= 1.0)) {
        throw ConfigError("replay_fraction must lie in (0, 1]");
    }
    if (max_vocab < 3) {
        throw ConfigError("max_vocab must be at least 3");
    }
    if (output_dir.empty()) {
        throw ConfigError("output_dir must not be empty");
    }
}

ExperimentConfig experiment_config_from_json(const json& j) {
    require_known_keys(j, {"suite", "model", "hyper", "strategies", "orders", "seeds", "freeze_layers", "ewc_lambda",
                           "ewc_fisher_samples", "replay_fraction", "output_dir", "task_label", "max_vocab",
                           "save_checkpoints"},
                       "experiment");
    ExperimentConfig c;
    if (j.contains("suite")) {
        c.suite = suite_config_from_json(j.at("suite"));
    }
    if (j.contains("model")) {
        c.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("hyper")) {
        c.hyper = hyperparams_from_json(j.at("hyper"));
    }
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& s : j.at("strategies")) {
            if (!s.is_string()) {
                throw ConfigError("strategies: expected a list of names");
            }
            c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
    }
    c.orders = get_field(j, "orders", c.orders, "experiment");
    c.seeds = get_field(j, "seeds", c.seeds, "experiment");
    if (j.contains("freeze_layers") && !j.at("freeze_layers").is_null()) {
        c.freeze_layers = get_field<std::size_t>(j, "freeze_layers", 0, "experiment");
    }
    c.ewc_lambda = get_field(j, "ewc_lambda", c.ewc_lambda, "experiment");
    c.ewc_fisher_samples = get_field(j, "ewc_fisher_samples", c.ewc_fisher_samples, "experiment");
    c.replay_fraction = get_field(j, "replay_fraction", c.replay_fraction, "experiment");
    c.output_dir = get_field(j, "output_dir", c.output_dir, "experiment");
    c.task_label = get_field(j, "task_label", c.task_label, "experiment");
    c.max_vocab = get_field(j, "max_vocab", c.max_vocab, "experiment");
    c.save_checkpoints = get_field(j, "save_checkpoints", c.save_checkpoints, "experiment");
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["suite"] = to_json(c.suite);
    j["model"] = to_json(c.model);
    j["hyper"] = to_json(c.hyper);
    json strategies = json::array();
    for (Strategy s : c.strategies) {
        strategies.push_back(std::string(strategy_name(s)));
    }
    j["strategies"] = strategies;
    j["orders"] = resolved_orders(c);
    j["seeds"] = c.seeds;
    j["freeze_layers"] = c.freeze_layers ? json(*c.freeze_layers) : json(nullptr);
    j["ewc_lambda"] = c.ewc_lambda;
    j["ewc_fisher_samples"] = c.ewc_fisher_samples;
    j["replay_fraction"] = c.replay_fraction;
    j["output_dir"] = c.output_dir;
    j["task_label"] = c.task_label;
    j["max_vocab"] = c.max_vocab;
    j["save_checkpoints"] = c.save_checkpoints;
    return j;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path.string());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
    }
    return experiment_config_from_json(j);
}

std::vector<std::vector<std::size_t>> resolved_orders(const ExperimentConfig& config) {
    if (!config.orders.empty()) {
        return config.orders;
    }
    std::vector<std::vector<std::size_t>> out;
    Rng rng(derive_seed(config.suite.seed, 0x0DE5));
    for (int i = 0; i < 4; ++i) {
        std::vector<std::size_t> order(config.suite.num_corpora);
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(std::span<std::size_t>(order), rng);
        out.push_back(std::move(order));
    }
    return out;
}

std::string config_hash(const ExperimentConfig& config) {
    json j = to_json(config);
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

std::string provenance_string() { return fmt::format("weaver {} ({})", WEAVER_VERSION, WEAVER_GIT_REVISION); }

PreparedSuite prepare_suite(const ExperimentConfig& config) {
    Suite suite = generate_suite(config.suite);
    // Fixed before any training: the first corpus of the suite plus the
    // master lexicon. Words unique to later corpora map to UNK.
    const std::array<Corpus, 2> sources = {suite.tasks.front().train, lexicon_corpus(suite.master_lexicon)};
    Vocabulary vocab = build_vocab(sources, config.max_vocab);
    LabelSet labels({config.suite.entity_type});
    std::vector<EncodedCorpus> train;
    for (const auto& t : suite.tasks) {
        train.push_back(encode_corpus(t.train, vocab, labels));
    }
    ModelConfig model = config.model;
    model.vocab_size = vocab.size();
    model.num_labels = labels.size();
    return PreparedSuite{std::move(suite), std::move(vocab), std::move(labels), std::move(train), model};
}

ModelConfig run_model_config(const PreparedSuite& prepared, std::uint64_t seed) {
    ModelConfig m = prepared.model;
    m.seed = derive_seed(seed, 0x1417);
    return m;
}

Hyperparams run_hyper(const ExperimentConfig& config, std::uint64_t seed) {
    Hyperparams h = config.hyper;
    h.seed = derive_seed(seed, 0x5EED);
    return h;
}

RunResult execute_run(const ExperimentConfig& config, const PreparedSuite& prepared, Strategy strategy,
                      std::size_t order_index, std::uint64_t seed, const FreezeMask& mask) {
    const auto orders = resolved_orders(config);
    RunResult run;
    run.strategy = strategy;
    run.order_index = order_index;
    run.order = orders.at(order_index);
    run.seed = seed;

    std::vector<EncodedCorpus> ordered;
    std::vector<Corpus> tests;
    for (std::size_t idx : run.order) {
        ordered.push_back(prepared.train.at(idx));
        tests.push_back(prepared.suite.tasks.at(idx).test);
    }
    const CorpusList stream(ordered);
    const Checkpoint base = Checkpoint::initial(run_model_config(prepared, seed));
    StrategyContext ctx;
    ctx.hyper = run_hyper(config, seed);
    ctx.mask = mask;

    switch (strategy) {
    case Strategy::finetune:
        run.checkpoints = finetune_run(stream, base, ctx);
        break;
    case Strategy::weaver:
        run.checkpoints = weaver_run(stream, base, ctx);
        break;
    case Strategy::ewc:
        run.checkpoints = ewc_run(stream, base, ctx, EwcOptions{config.ewc_lambda, config.ewc_fisher_samples});
        break;
    case Strategy::replay:
        run.checkpoints = replay_run(stream, base, ctx, ReplayOptions{config.replay_fraction, derive_seed(seed, 0xB0F)});
        break;
    case Strategy::mtl:
        run.checkpoints = {mtl_run(stream, base, ctx)};
        break;
    }

    const Evaluator evaluator(prepared.vocab, prepared.labels);
    if (strategy == Strategy::mtl) {
        ResultMatrix m;
        for (const auto& t : tests) {
            m.task_names.push_back(t.name);
            m.baseline.push_back(evaluator.f1(base, t));
        }
        std::vector<double> row;
        for (const auto& t : tests) {
            row.push_back(evaluator.f1(run.checkpoints.front(), t));
        }
        m.r = {row};
        run.matrix = std::move(m);
    } else {
        run.matrix = result_matrix(run.checkpoints, tests, base, evaluator);
        run.forgetting = forgetting_curve(run.checkpoints, tests.front(), base, evaluator);
    }
    return run;
}

json run_metrics_json(const RunResult& run) {
    json j;
    j["strategy"] = std::string(strategy_name(run.strategy));
    j["order_index"] = run.order_index;
    j["order"] = run.order;
    j["seed"] = run.seed;
    if (run.strategy == Strategy::mtl) {
        j["task_names"] = run.matrix.task_names;
        j["r"] = run.matrix.r;
        j["baseline"] = run.matrix.baseline;
        j["bwt"] = nullptr;
        j["fwt"] = nullptr;
        j["avg_final_f1"] = row_mean(run.matrix.r.back());
    } else {
        j.update(to_json(run.matrix));
    }
    j["final_f1"] = run.matrix.r.back();
    std::vector<double> per_stage;
    for (const auto& row : run.matrix.r) {
        per_stage.push_back(row_mean(row));
    }
    j["per_stage_avg_f1"] = per_stage;
    j["forgetting_curve"] = run.forgetting;
    return j;
}

namespace {

void persist_run(const ExperimentConfig& config, const RunResult& run) {
    const fs::path dir = run_dir(config, run.strategy, run.order_index, run.seed);
    if (config.save_checkpoints) {
        for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
            save_checkpoint_file(run.checkpoints[i],
                                 (dir / "checkpoints" / fmt::format("stage-{}{}", i, kCheckpointExtension)).string());
        }
    }
    json manifest;
    manifest["config_hash"] = config_hash(config);
    manifest["strategy"] = std::string(strategy_name(run.strategy));
    manifest["order_index"] = run.order_index;
    manifest["order"] = run.order;
    manifest["seed"] = run.seed;
    manifest["task_label"] = config.task_label;
    manifest["provenance"] = provenance_string();
    write_json_file(dir / "manifest.json", manifest);
    write_json_file(dir / "metrics.json", run_metrics_json(run));
}

struct RunKey {
    Strategy strategy;
    std::size_t order_index;
    std::uint64_t seed;
};

}  // namespace

int run_experiment(const ExperimentConfig& base_config, const RunOptions& options) {
    const ExperimentConfig config = with_override(base_config, options);
    const fs::path out(config.output_dir);
    fs::create_directories(out);
    fs::remove(out / "FAILED");
    write_json_file(out / "config.json", to_json(config));

    const PreparedSuite prepared = prepare_suite(config);
    const auto orders = resolved_orders(config);
    std::vector<RunKey> keys;
    for (Strategy s : config.strategies) {
        for (std::size_t o = 0; o < orders.size(); ++o) {
            for (std::uint64_t seed : config.seeds) {
                keys.push_back({s, o, seed});
            }
        }
    }
    Failures failures;
    parallel_for(keys.size(), options.jobs, [&](std::size_t i) {
        const RunKey& k = keys[i];
        const fs::path dir = run_dir(config, k.strategy, k.order_index, k.seed);
        try {
            fs::remove(dir / "FAILED");
            persist_run(config, execute_run(config, prepared, k.strategy, k.order_index, k.seed));
            log_info(fmt::format("finished {} order {} seed {}", strategy_name(k.strategy), k.order_index, k.seed));
        } catch (const std::exception& e) {
            const std::string msg = fmt::format("{} order {} seed {}: {}", strategy_name(k.strategy), k.order_index,
                                                k.seed, e.what());
            failures.add(msg);
            try {
                write_failed_marker(dir, std::span<const std::string>(&msg, 1));
            } catch (const std::exception&) {
            }
        }
    });
    write_tables(config);
    if (!failures.messages.empty()) {
        std::sort(failures.messages.begin(), failures.messages.end());
        write_failed_marker(out, failures.messages);
        return 1;
    }
    return 0;
}

void write_tables(const ExperimentConfig& config) {
    const fs::path tables = fs::path(config.output_dir) / "tables";
    const auto orders = resolved_orders(config);

    // (strategy, order) -> per-seed metrics, read back from disk.
    std::map<std::pair<std::size_t, std::size_t>, std::vector<json>> metrics;
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
        for (std::size_t o = 0; o < orders.size(); ++o) {
            for (std::uint64_t seed : config.seeds) {
                const fs::path p = run_dir(config, config.strategies[s], o, seed) / "metrics.json";
                if (fs::exists(p)) {
                    metrics[{s, o}].push_back(json::parse(read_file(p.string())));
                }
            }
        }
    }

    json results;
    results["config_hash"] = config_hash(config);
    results["orders"] = orders;
    results["seeds"] = config.seeds;

    std::string t2 = "strategy,order,runs,mean_f1,sd_f1,cell\n";
    std::string t3 = "strategy,order,runs,bwt_mean,bwt_sd,fwt_mean,fwt_sd\n";
    std::string fc = "strategy,order,step,runs,mean_f1,sd_f1\n";
    json j2 = json::array();
    json j3 = json::array();
    json jf = json::array();
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
        const std::string name(strategy_name(config.strategies[s]));
        for (std::size_t o = 0; o < orders.size(); ++o) {
            const auto& runs = metrics[{s, o}];
            if (runs.empty()) {
                continue;
            }
            std::vector<double> f1s;
            std::vector<double> bwts;
            std::vector<double> fwts;
            std::vector<std::vector<double>> curves;
            for (const auto& m : runs) {
                f1s.push_back(m.at("avg_final_f1").get<double>());
                if (!m.at("bwt").is_null()) {
                    bwts.push_back(m.at("bwt").get<double>());
                    fwts.push_back(m.at("fwt").get<double>());
                }
                curves.push_back(m.at("forgetting_curve").get<std::vector<double>>());
            }
            const MeanSd f = mean_sd(f1s);
            t2 += fmt::format("{},{},{},{},{},{}\n", name, o, f.n, csv_number(f.mean), csv_number(f.sd),
                              percent_cell(f));
            j2.push_back({{"strategy", name}, {"order", o}, {"runs", f.n}, {"mean_f1", f.mean}, {"sd_f1", f.sd}});
            if (!bwts.empty()) {
                const MeanSd b = mean_sd(bwts);
                const MeanSd w = mean_sd(fwts);
                t3 += fmt::format("{},{},{},{},{},{},{}\n", name, o, b.n, csv_number(b.mean), csv_number(b.sd),
                                  csv_number(w.mean), csv_number(w.sd));
                j3.push_back({{"strategy", name},
                              {"order", o},
                              {"runs", b.n},
                              {"bwt_mean", b.mean},
                              {"bwt_sd", b.sd},
                              {"fwt_mean", w.mean},
                              {"fwt_sd", w.sd}});
            }
            const std::size_t steps = curves.front().size();
            for (std::size_t step = 0; step < steps; ++step) {
                std::vector<double> col;
                for (const auto& c : curves) {
                    if (step < c.size()) {
                        col.push_back(c[step]);
                    }
                }
                const MeanSd m = mean_sd(col);
                fc += fmt::format("{},{},{},{},{},{}\n", name, o, step, m.n, csv_number(m.mean), csv_number(m.sd));
                jf.push_back({{"strategy", name}, {"order", o}, {"step", step}, {"mean_f1", m.mean}, {"sd_f1", m.sd}});
            }
        }
    }

    // WEAVER against every other strategy on the per-seed final scores.
    std::string ta = "order,strategy_a,strategy_b,runs_a,runs_b,eps_min,violation_ratio,dominant\n";
    json ja = json::array();
    const auto weaver_it = std::find(config.strategies.begin(), config.strategies.end(), Strategy::weaver);
    if (weaver_it != config.strategies.end()) {
        const std::size_t w = static_cast<std::size_t>(weaver_it - config.strategies.begin());
        for (std::size_t o = 0; o < orders.size(); ++o) {
            auto scores = [&](std::size_t s) {
                std::vector<double> v;
                for (const auto& m : metrics[{s, o}]) {
                    v.push_back(m.at("avg_final_f1").get<double>());
                }
                return v;
            };
            const auto a = scores(w);
            for (std::size_t s = 0; s < config.strategies.size(); ++s) {
                if (s == w) {
                    continue;
                }
                const auto b = scores(s);
                if (a.size() < 2 || b.size() < 2) {
                    continue;
                }
                const std::string other(strategy_name(config.strategies[s]));
                const AsoResult r = aso(a, b, 0.05, 0.2, 1000, derive_seed(o, 0xA50 + s));
                ta += fmt::format("{},weaver,{},{},{},{},{},{}\n", o, other, a.size(), b.size(), csv_number(r.eps_min),
                                  csv_number(r.violation_ratio), r.dominant ? "true" : "false");
                ja.push_back({{"order", o},
                              {"strategy_a", "weaver"},
                              {"strategy_b", other},
                              {"eps_min", r.eps_min},
                              {"violation_ratio", r.violation_ratio},
                              {"dominant", r.dominant}});
            }
        }
    }

    results["table2"] = j2;
    results["table3"] = j3;
    results["forgetting"] = jf;
    results["aso"] = ja;
    write_file_atomic((tables / "table2.csv").string(), t2);
    write_file_atomic((tables / "table3.csv").string(), t3);
    write_file_atomic((tables / "forgetting.csv").string(), fc);
    write_file_atomic((tables / "aso.csv").string(), ta);
    write_json_file(tables / "results.json", results);
}

double CrossEvalResult::diagonal_mean() const {
    double sum = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        sum += grid[i][i];
    }
    return sum / static_cast<double>(grid.size());
}

double CrossEvalResult::off_diagonal_mean() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = 0; j < grid.size(); ++j) {
            if (i != j) {
                sum += grid[i][j];
                ++n;
            }
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

CrossEvalResult cross_eval(const ExperimentConfig& base_config, const RunOptions& options) {
    const ExperimentConfig config = with_override(base_config, options);
    const PreparedSuite prepared = prepare_suite(config);
    const std::size_t k = prepared.train.size();
    std::vector<Corpus> tests;
    CrossEvalResult result;
    for (const auto& t : prepared.suite.tasks) {
        tests.push_back(t.test);
        result.corpora.push_back(t.test.name);
    }
    result.per_seed.resize(config.seeds.size());
    Failures failures;
    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t si) {
        try {
            const std::uint64_t seed = config.seeds[si];
            const Checkpoint base = Checkpoint::initial(run_model_config(prepared, seed));
            const Hyperparams h = stage_hyper(run_hyper(config, seed), 0);
            std::vector<Checkpoint> models;
            for (std::size_t i = 0; i < k; ++i) {
                Checkpoint c = base;
                c.params = train(base.model_config, base.params, prepared.train[i].sentences, h,
                                 TrainingObjective::plain(), {});
                models.push_back(std::move(c));
            }
            const Evaluator evaluator(prepared.vocab, prepared.labels);
            result.per_seed[si] = cross_eval_grid(models, tests, evaluator);
        } catch (const std::exception& e) {
            failures.add(e.what());
        }
    });
    if (!failures.messages.empty()) {
        throw Error("cross-eval failed: " + failures.messages.front());
    }
    result.grid.assign(k, std::vector<double>(k, 0.0));
    for (const auto& g : result.per_seed) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                result.grid[i][j] += g[i][j] / static_cast<double>(config.seeds.size());
            }
        }
    }
    return result;
}

int run_cross_eval(const ExperimentConfig& config, const RunOptions& options) {
    const fs::path dir = fs::path(config.output_dir) / "cross_eval";
    try {
        const CrossEvalResult r = cross_eval(config, options);
        std::string csv = "train";
        for (const auto& n : r.corpora) {
            csv += "," + n;
        }
        csv += "\n";
        for (std::size_t i = 0; i < r.grid.size(); ++i) {
            csv += r.corpora[i];
            for (double v : r.grid[i]) {
                csv += "," + csv_number(v);
            }
            csv += "\n";
        }
        write_file_atomic((dir / "grid.csv").string(), csv);
        json j;
        j["corpora"] = r.corpora;
        j["seeds"] = with_override(config, options).seeds;
        j["grid"] = r.grid;
        j["per_seed"] = r.per_seed;
        j["diagonal_mean"] = r.diagonal_mean();
        j["off_diagonal_mean"] = r.off_diagonal_mean();
        write_json_file(dir / "grid.json", j);
        return 0;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        write_failed_marker(dir, std::vector<std::string>{e.what()});
        throw;
    }
}

std::vector<AblationResult> ablation(const ExperimentConfig& base_config, const RunOptions& options) {
    const ExperimentConfig config = with_override(base_config, options);
    if (!config.freeze_layers) {
        throw ConfigError("ablation needs freeze_layers");
    }
    const PreparedSuite prepared = prepare_suite(config);
    const auto orders = resolved_orders(config);
    const FreezeMask frozen = FreezeMask::prefix(static_cast<int>(*config.freeze_layers));
    std::vector<AblationResult> out(orders.size());
    for (std::size_t o = 0; o < orders.size(); ++o) {
        out[o].order = orders[o];
        out[o].full.resize(config.seeds.size());
        out[o].frozen.resize(config.seeds.size());
    }
    const std::size_t n = orders.size() * config.seeds.size();
    Failures failures;
    parallel_for(2 * n, options.jobs, [&](std::size_t i) {
        const bool use_frozen = i >= n;
        const std::size_t o = (i % n) / config.seeds.size();
        const std::size_t si = (i % n) % config.seeds.size();
        try {
            const RunResult run = execute_run(config, prepared, Strategy::weaver, o, config.seeds[si],
                                              use_frozen ? frozen : FreezeMask{});
            std::vector<double> per_stage;
            for (const auto& row : run.matrix.r) {
                per_stage.push_back(row_mean(row));
            }
            (use_frozen ? out[o].frozen : out[o].full)[si] = std::move(per_stage);
        } catch (const std::exception& e) {
            failures.add(e.what());
        }
    });
    if (!failures.messages.empty()) {
        throw Error("ablation failed: " + failures.messages.front());
    }
    return out;
}

int run_ablation(const ExperimentConfig& config, const RunOptions& options) {
    const fs::path dir = fs::path(config.output_dir) / "ablation";
    std::vector<AblationResult> results;
    try {
        results = ablation(config, options);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        write_failed_marker(dir, std::vector<std::string>{e.what()});
        throw;
    }
    const std::size_t stages = results.front().order.size();
    const std::size_t frozen_layers = *config.freeze_layers;
    const std::string frozen_label = fmt::format("last-{}", config.model.num_layers - frozen_layers);
    std::string csv = "layers,order";
    for (std::size_t s = 1; s <= stages; ++s) {
        csv += fmt::format(",stage_{}", s);
    }
    csv += "\n";
    std::vector<std::vector<double>> avg_full(stages);
    std::vector<std::vector<double>> avg_frozen(stages);
    json j = json::array();
    auto emit = [&](const std::string& label, const std::string& order, const std::vector<std::vector<double>>& rows,
                    std::vector<std::vector<double>>* collect) {
        csv += label + "," + order;
        std::vector<double> means;
        for (std::size_t s = 0; s < stages; ++s) {
            std::vector<double> col;
            for (const auto& r : rows) {
                col.push_back(r[s]);
            }
            const MeanSd m = mean_sd(col);
            csv += "," + percent_cell(m);
            means.push_back(m.mean);
            if (collect) {
                (*collect)[s].push_back(m.mean);
            }
        }
        csv += "\n";
        j.push_back({{"layers", label}, {"order", order}, {"mean", means}, {"per_seed", rows}});
    };
    for (std::size_t o = 0; o < results.size(); ++o) {
        const std::string order = order_label(results[o].order);
        emit("all", order, results[o].full, &avg_full);
        emit(frozen_label, order, results[o].frozen, &avg_frozen);
    }
    auto emit_avg = [&](const std::string& label, const std::vector<std::vector<double>>& cols) {
        csv += label + ",avg";
        for (const auto& c : cols) {
            csv += fmt::format(",{:.2f}", 100.0 * row_mean(c));
        }
        csv += "\n";
    };
    emit_avg("all", avg_full);
    emit_avg(frozen_label, avg_frozen);
    write_file_atomic((dir / "table_a3.csv").string(), csv);
    write_json_file(dir / "ablation.json", j);
    return 0;
}

EmbeddingProjection project_embeddings(const ExperimentConfig& config, std::uint64_t seed,
                                       std::size_t max_tokens_per_corpus) {
    config.validate();
    if (config.suite.num_corpora < 2) {
        throw ConfigError("project-embeddings needs at least 2 corpora");
    }
    const PreparedSuite prepared = prepare_suite(config);
    const Checkpoint base = Checkpoint::initial(run_model_config(prepared, seed));
    const ModelConfig& mc = base.model_config;
    StrategyContext ctx;
    ctx.hyper = run_hyper(config, seed);
    const Hyperparams h0 = stage_hyper(ctx.hyper, 0);

    const std::array<EncodedCorpus, 2> pair = {prepared.train[0], prepared.train[1]};
    const CorpusList stream(pair);
    const ParameterSet independent_a =
        train(mc, base.params, pair[0].sentences, h0, TrainingObjective::plain(), {});
    const ParameterSet independent_b =
        train(mc, base.params, pair[1].sentences, h0, TrainingObjective::plain(), {});
    const ParameterSet joint = mtl_run(stream, base, ctx).params;
    const ParameterSet woven = weaver_run(stream, base, ctx).back().params;

    // O-tagged training tokens in corpus order: (corpus, sentence, position).
    // Entity tokens are left out; their label axis would take the leading
    // components and hide the corpus geometry.
    struct Site {
        std::size_t corpus;
        std::size_t sentence;
        std::size_t position;
    };
    std::vector<Site> sites;
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& corpus = prepared.suite.tasks[c].train;
        std::size_t taken = 0;
        for (std::size_t s = 0; s < corpus.sentences.size() && taken < max_tokens_per_corpus; ++s) {
            const auto& tags = corpus.sentences[s].tags;
            const std::size_t n = std::min(tags.size(), kMaxSequenceLength);
            for (std::size_t t = 0; t < n && taken < max_tokens_per_corpus; ++t) {
                if (tags[t] == "O") {
                    sites.push_back({c, s, t});
                    ++taken;
                }
            }
        }
    }

    EmbeddingProjection out;
    auto project = [&](const std::string& tag, const ParameterSet& for_a, const ParameterSet& for_b) {
        std::vector<std::vector<double>> vectors;
        std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<double>>> cache;
        for (const Site& site : sites) {
            auto key = std::make_pair(site.corpus, site.sentence);
            auto it = cache.find(key);
            if (it == cache.end()) {
                const auto& ids = pair[site.corpus].sentences[site.sentence].tokens;
                it = cache.emplace(key, embed_tokens(mc, site.corpus == 0 ? for_a : for_b, ids)).first;
            }
            vectors.push_back(it->second[site.position]);
        }
        const auto coords = pca_project(vectors);
        std::vector<Point2> pa;
        std::vector<Point2> pb;
        for (std::size_t i = 0; i < sites.size(); ++i) {
            const auto& site = sites[i];
            (site.corpus == 0 ? pa : pb).push_back(coords[i]);
            const auto& corpus = prepared.suite.tasks[site.corpus].train;
            out.records.push_back({corpus.sentences[site.sentence].tokens[site.position], corpus.name, tag,
                                   coords[i][0], coords[i][1]});
        }
        return centroid_distance(pa, pb);
    };
    out.independent = project("independent", independent_a, independent_b);
    out.joint = project("joint", joint, joint);
    out.weaver = project("weaver", woven, woven);
    return out;
}

int run_project_embeddings(const ExperimentConfig& base_config, const RunOptions& options) {
    const ExperimentConfig config = with_override(base_config, options);
    const fs::path dir = fs::path(config.output_dir) / "embeddings";
    std::vector<EmbeddingProjection> results(config.seeds.size());
    Failures failures;
    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
        try {
            results[i] = project_embeddings(config, config.seeds[i]);
        } catch (const std::exception& e) {
            failures.add(e.what());
        }
    });
    if (!failures.messages.empty()) {
        write_failed_marker(dir, failures.messages);
        throw Error("project-embeddings failed: " + failures.messages.front());
    }
    std::string summary = "seed,independent,joint,weaver\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        std::ostringstream csv;
        export_projection(results[i].records, csv);
        write_file_atomic((dir / fmt::format("seed-{}", config.seeds[i]) / "projection.csv").string(), csv.str());
        summary += fmt::format("{},{},{},{}\n", config.seeds[i], csv_number(results[i].independent),
                               csv_number(results[i].joint), csv_number(results[i].weaver));
    }
    write_file_atomic((dir / "centroid_distances.csv").string(), summary);
    return 0;
}

int run_aso_file(const fs::path& path, const fs::path& output) {
    json j;
    try {
        j = json::parse(read_file(path.string()));
        require_known_keys(j, {"a", "b", "alpha", "tau", "bootstrap_n", "seed"}, "aso");
        if (!j.contains("a") || !j.contains("b")) {
            throw ConfigError("aso: need score lists 'a' and 'b'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    const auto a = get_field<std::vector<double>>(j, "a", {}, "aso");
    const auto b = get_field<std::vector<double>>(j, "b", {}, "aso");
    const double alpha = get_field(j, "alpha", 0.05, "aso");
    const double tau = get_field(j, "tau", 0.2, "aso");
    const auto n = get_field<std::size_t>(j, "bootstrap_n", 1000, "aso");
    const auto seed = get_field<std::uint64_t>(j, "seed", 0, "aso");
    AsoResult r;
    try {
        r = aso(a, b, alpha, tau, n, seed);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    const json out{{"eps_min", r.eps_min},   {"violation_ratio", r.violation_ratio},
                   {"tau", r.tau},           {"alpha", r.alpha},
                   {"bootstrap_n", r.bootstrap_n}, {"seed", r.seed},
                   {"dominant", r.dominant}};
    if (output.empty()) {
        fmt::print("{}\n", out.dump(2));
    } else {
        write_json_file(output, out);
    }
    return 0;
}

}  // namespace weaver
