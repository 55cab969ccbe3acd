#include <doctest.h>

#include <set>
#include <tuple>

#include "test_support.hpp"
#include "weaver/error.hpp"
#include "weaver/eval.hpp"

using namespace weaver;

namespace {

using SpanKey = std::tuple<std::size_t, std::size_t, std::size_t, std::string>;

// Reference span reader written from the BIO definition: a span starts at B-T
// and extends over following I-T tags.
std::set<SpanKey> oracle_spans(const TagSequences& tags) {
    std::set<SpanKey> out;
    for (std::size_t s = 0; s < tags.size(); ++s) {
        const auto& t = tags[s];
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i].rfind("B-", 0) != 0) {
                continue;
            }
            const std::string type = t[i].substr(2);
            std::size_t j = i + 1;
            while (j < t.size() && t[j] == "I-" + type) {
                ++j;
            }
            out.insert({s, i, j, type});
        }
    }
    return out;
}

std::vector<std::string> random_bio(Rng& rng, std::size_t n) {
    const std::vector<std::string> types = {"A", "B"};
    std::vector<std::string> tags;
    std::string open;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = uniform01(rng);
        if (!open.empty() && u < 0.35) {
            tags.push_back("I-" + open);
        } else if (u < 0.65) {
            open = types[uniform_index(rng, 2)];
            tags.push_back("B-" + open);
        } else {
            open.clear();
            tags.push_back("O");
        }
    }
    return tags;
}

Corpus corpus_of(const TagSequences& tags) {
    Corpus c;
    c.split = Split::test;
    for (const auto& t : tags) {
        c.sentences.push_back(Sentence{std::vector<std::string>(t.size(), "w"), t});
    }
    return c;
}

ResultMatrix matrix(std::vector<std::vector<double>> r, std::vector<double> baseline) {
    ResultMatrix m;
    for (std::size_t i = 0; i < r.size(); ++i) {
        m.task_names.push_back("t" + std::to_string(i));
    }
    m.r = std::move(r);
    m.baseline = std::move(baseline);
    return m;
}

}  // namespace

TEST_CASE("span_f1 examples") {
    const TagSequences gold = {{"B-X", "I-X", "O", "B-X"}};
    const SpanScore same = span_f1(corpus_of(gold), gold);
    CHECK(same.f1 == 1.0);
    CHECK(same.precision == 1.0);
    CHECK(same.recall == 1.0);

    const TagSequences half = {{"B-X", "O", "O", "B-X"}};
    const SpanScore h = span_f1(corpus_of(gold), half);
    CHECK(h.counts == EvalCounts{1, 1, 1});
    CHECK(h.precision == 0.5);
    CHECK(h.recall == 0.5);
    CHECK(h.f1 == 0.5);

    const TagSequences none = {{"O", "O", "O", "O"}};
    const SpanScore z = span_f1(corpus_of(gold), none);
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f1 == 0.0);

    // Type mismatch at equal boundaries is not a match.
    const TagSequences typed = {{"B-Y", "I-Y", "O", "B-X"}};
    CHECK(span_f1(corpus_of(gold), typed).counts == EvalCounts{1, 1, 1});

    CHECK(score(EvalCounts{}).f1 == 0.0);
}

TEST_CASE("span_f1 alignment errors") {
    const TagSequences gold = {{"B-X", "O"}};
    CHECK_THROWS_AS(span_f1(corpus_of(gold), TagSequences{}), AlignmentError);
    CHECK_THROWS_AS(span_f1(corpus_of(gold), TagSequences{{"O"}}), AlignmentError);
}

TEST_CASE("span_f1 agrees with a set-intersection oracle (property)") {
    Rng rng(1000);
    for (int trial = 0; trial < 1000; ++trial) {
        TagSequences gold;
        TagSequences pred;
        const std::size_t sentences = 1 + uniform_index(rng, 3);
        for (std::size_t s = 0; s < sentences; ++s) {
            const std::size_t n = 1 + uniform_index(rng, 8);
            gold.push_back(random_bio(rng, n));
            pred.push_back(random_bio(rng, n));
        }
        const auto g = oracle_spans(gold);
        const auto p = oracle_spans(pred);
        std::size_t tp = 0;
        for (const auto& x : p) {
            tp += g.count(x);
        }
        const SpanScore sc = span_f1(corpus_of(gold), pred);
        REQUIRE(sc.counts == EvalCounts{tp, p.size() - tp, g.size() - tp});
        const double prec = p.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(p.size());
        const double rec = g.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(g.size());
        const double f1 = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
        CHECK(sc.f1 == doctest::Approx(f1).epsilon(1e-14));
    }
}

TEST_CASE("BWT and FWT examples") {
    const ResultMatrix m = matrix({{0.8, 0.1, 0.2}, {0.7, 0.7, 0.3}, {0.6, 0.7, 0.9}}, {0.0, 0.0, 0.0});
    CHECK(backward_transfer(m) == doctest::Approx(-0.1).epsilon(1e-12));
    // Superdiagonal mean with a zero baseline: (0.1 + 0.3) / 2.
    CHECK(forward_transfer(m) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(average_final_f1(m) == doctest::Approx((0.6 + 0.7 + 0.9) / 3.0));

    CHECK(forward_transfer(matrix({{0.9, 0.5}, {0.4, 0.8}}, {0.3, 0.0})) == doctest::Approx(0.5));

    const ResultMatrix diag_final = matrix({{0.5, 0.2}, {0.5, 0.9}}, {0.0, 0.2});
    CHECK(backward_transfer(diag_final) == 0.0);
    CHECK(forward_transfer(diag_final) == 0.0);

    const ResultMatrix uniform_m = matrix({{0.4, 0.4}, {0.4, 0.4}}, {0.1, 0.1});
    CHECK(backward_transfer(uniform_m) == 0.0);

    const ResultMatrix single = matrix({{0.5}}, {0.0});
    CHECK_THROWS_AS(backward_transfer(single), ArgumentError);
    CHECK_THROWS_AS(forward_transfer(single), ArgumentError);
}

TEST_CASE("BWT and FWT are linear in R (property)") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 2 + uniform_index(rng, 5);
        std::vector<std::vector<double>> r(t, std::vector<double>(t));
        std::vector<double> b(t);
        for (auto& row : r) {
            for (double& v : row) {
                v = uniform01(rng);
            }
        }
        for (double& v : b) {
            v = uniform01(rng);
        }
        const double c = uniform01(rng);
        auto scaled_r = r;
        auto scaled_b = b;
        for (auto& row : scaled_r) {
            for (double& v : row) {
                v *= c;
            }
        }
        for (double& v : scaled_b) {
            v *= c;
        }
        const ResultMatrix m = matrix(r, b);
        const ResultMatrix s = matrix(scaled_r, scaled_b);
        CHECK(backward_transfer(s) == doctest::Approx(c * backward_transfer(m)).epsilon(1e-12));
        CHECK(forward_transfer(s) == doctest::Approx(c * forward_transfer(m)).epsilon(1e-12));

        // Independent recomputation straight from the definitions.
        double bwt = 0.0;
        double fwt = 0.0;
        double last = 0.0;
        for (std::size_t i = 0; i + 1 < t; ++i) {
            bwt += r[t - 1][i] - r[i][i];
            fwt += r[i][i + 1] - b[i + 1];
        }
        for (std::size_t j = 0; j < t; ++j) {
            last += r[t - 1][j];
        }
        const double denom = static_cast<double>(t - 1);
        CHECK(backward_transfer(m) == doctest::Approx(bwt / denom).epsilon(1e-12));
        CHECK(forward_transfer(m) == doctest::Approx(fwt / denom).epsilon(1e-12));
        CHECK(average_final_f1(m) == doctest::Approx(last / static_cast<double>(t)).epsilon(1e-12));
    }
}

TEST_CASE("ResultMatrix validation and JSON") {
    CHECK_THROWS_AS(matrix({{0.5, 0.5}}, {0.0, 0.0}).validate(), ArgumentError);
    CHECK_THROWS_AS(matrix({{1.5}}, {0.0}).validate(), ArgumentError);

    const ResultMatrix m = matrix({{0.8, 0.1}, {0.6, 0.75}}, {0.05, 0.0});
    const nlohmann::json j = to_json(m);
    CHECK(j.at("bwt").get<double>() == doctest::Approx(-0.2));
    CHECK(j.at("fwt").get<double>() == doctest::Approx(0.1));
    CHECK(j.at("avg_final_f1").get<double>() == doctest::Approx(0.675));
    const ResultMatrix back = result_matrix_from_json(j);
    CHECK(back.r == m.r);
    CHECK(back.baseline == m.baseline);
    CHECK(back.task_names == m.task_names);
    CHECK(to_json(matrix({{0.5}}, {0.1})).at("bwt").is_null());
    CHECK_THROWS_AS(result_matrix_from_json(nlohmann::json{{"r", 3}}), InputError);
}

TEST_CASE("result matrix, forgetting curve and cross-eval grid against direct evaluation") {
    const Corpus toy = testing::separable_toy_corpus(30, 1);
    const std::array<Corpus, 1> cs = {toy};
    const Vocabulary vocab = build_vocab(cs, 100);
    const LabelSet labels({"DIS"});
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = 6;
    mc.num_layers = 1;
    mc.hidden_dim = 8;
    mc.num_labels = labels.size();
    mc.seed = 2;
    const Checkpoint base = Checkpoint::initial(mc);

    std::vector<EncodedCorpus> train_sets;
    std::vector<Corpus> tests;
    for (std::uint64_t k = 0; k < 3; ++k) {
        train_sets.push_back(encode_corpus(testing::separable_toy_corpus(10, 10 + k), vocab, labels));
        Corpus t = testing::separable_toy_corpus(8, 50 + k);
        t.split = Split::test;
        tests.push_back(t);
    }
    StrategyContext ctx;
    ctx.hyper.epochs = 1;
    ctx.hyper.learning_rate = 0.02;
    ctx.hyper.batch_size = 4;
    const auto stages = finetune_run(CorpusList(train_sets), base, ctx);
    const Evaluator ev(vocab, labels);

    const ResultMatrix m = result_matrix(stages, tests, base, ev);
    REQUIRE(m.tasks() == 3);
    Rng rng(3);
    const std::size_t i = uniform_index(rng, 3);
    const std::size_t j = uniform_index(rng, 3);
    CHECK(m.r[i][j] == span_f1(tests[j], ev.predict(mc, stages[i].params, tests[j])).f1);
    CHECK(m.baseline[1] == ev.f1(base, tests[1]));
    for (const auto& row : m.r) {
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    const auto curve = forgetting_curve(stages, tests[0], base, ev);
    REQUIRE(curve.size() == 4);
    CHECK(curve[0] == m.baseline[0]);
    CHECK(curve[1] == m.r[0][0]);
    CHECK(curve[3] == m.r[2][0]);

    const auto grid = cross_eval_grid(stages, tests, ev);
    CHECK(grid == m.r);
    CHECK_THROWS_AS(result_matrix(std::span(stages).first(2), tests, base, ev), ArgumentError);

    const std::array<Corpus, 1> one_test = {tests[0]};
    const ResultMatrix single = result_matrix(std::span(stages).first(1), one_test, base, ev);
    CHECK(single.r[0][0] == ev.f1(stages[0], tests[0]));
}

TEST_CASE("evaluator tags tokens past the length cap as O") {
    const LabelSet labels({"DIS"});
    Vocabulary vocab;
    vocab.add("flu");
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = 4;
    mc.num_layers = 1;
    mc.hidden_dim = 4;
    mc.num_labels = labels.size();
    const Checkpoint base = Checkpoint::initial(mc);
    const Evaluator ev(vocab, labels);
    const std::vector<std::string> long_sentence(kMaxSequenceLength + 3, "flu");
    const auto tags = ev.predict_tags(mc, base.params, long_sentence);
    REQUIRE(tags.size() == long_sentence.size());
    CHECK(tags.back() == "O");
    CHECK(ev.predict_tags(mc, base.params, std::vector<std::string>{}).empty());
}
