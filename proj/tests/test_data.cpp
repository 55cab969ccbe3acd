#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "weaver/data.hpp"
#include "weaver/error.hpp"

using namespace weaver;

namespace {

Corpus parse(const std::string& text) {
    std::istringstream in(text);
    return read_conll(in);
}

std::size_t shared_entries(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::set<std::string> sa(a.begin(), a.end());
    std::size_t n = 0;
    for (const auto& x : b) {
        n += sa.count(x);
    }
    return n;
}

}  // namespace

TEST_CASE("read_conll: one entity sentence") {
    const Corpus c = parse("flu\tB-Disease\n\n");
    REQUIRE(c.sentences.size() == 1);
    CHECK(c.sentences[0].tokens == std::vector<std::string>{"flu"});
    CHECK(count_entities(c) == 1);
    CHECK(c.declared_size == 1);
}

TEST_CASE("read_conll: the last sentence needs no trailing blank line") {
    CHECK_THROWS_AS(parse("a\tO\n\nc\tI-X\n"), ValidationError);
    const Corpus d = parse("a\tO\n\nc\tB-X\nd\tI-X");
    CHECK(d.sentences.size() == 2);
    CHECK(d.sentences[1].tags == std::vector<std::string>{"B-X", "I-X"});
    CHECK(parse("").sentences.empty());
    CHECK(parse("\n\n").sentences.empty());
}

TEST_CASE("read_conll: malformed lines report their line number") {
    try {
        parse("a\tO\ntoken B-X extra\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    try {
        parse("a\tO\n\nb\tO\tO\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse("a\t\n"), ParseError);
    CHECK_THROWS_AS(parse(std::string("a\xff\tO\n")), ParseError);
}

TEST_CASE("read_conll: invalid BIO transitions are validation errors") {
    CHECK_THROWS_AS(parse("a\tO\nb\tI-X\n"), ValidationError);
    CHECK_THROWS_AS(parse("a\tB-X\nb\tI-Y\n"), ValidationError);
    CHECK_THROWS_AS(parse("a\tX-1\n"), ValidationError);
    CHECK_NOTHROW(parse("a\tB-X\nb\tI-X\nc\tB-Y\n"));
}

TEST_CASE("write_conll: canonical forms and round trip") {
    CHECK(write_conll(Corpus{}).empty());
    Corpus one;
    one.sentences.push_back({{"the", "flu"}, {"O", "B-DIS"}});
    CHECK(write_conll(one) == "the\tO\nflu\tB-DIS\n\n");

    const std::string canonical = "a\tO\nb\tB-X\nc\tI-X\n\nd\tB-Y\n\n";
    CHECK(write_conll(parse(canonical)) == canonical);
    const Corpus c = parse(canonical);
    CHECK(parse(write_conll(c)) == c);
}

TEST_CASE("CoNLL round trip on generated corpora is byte-identical") {
    SuiteConfig cfg;
    cfg.sizes = {30, 20};
    cfg.num_corpora = 2;
    cfg.seed = 5;
    const Suite s = generate_suite(cfg);
    for (const auto& t : s.tasks) {
        const std::string text = write_conll(t.train);
        const Corpus back = parse(text);
        CHECK(write_conll(back) == text);
        CHECK(back.sentences == t.train.sentences);
    }
}

TEST_CASE("extract_spans and entity counts") {
    const std::vector<std::string> tags = {"B-X", "I-X", "O", "B-X", "B-Y", "I-Y"};
    const auto spans = extract_spans(tags);
    REQUIRE(spans.size() == 3);
    CHECK(spans[0] == Span{0, 2, "X"});
    CHECK(spans[1] == Span{3, 4, "X"});
    CHECK(spans[2] == Span{4, 6, "Y"});
}

TEST_CASE("build_vocab examples") {
    SUBCASE("single token") {
        Corpus c;
        c.sentences.push_back({{"x"}, {"O"}});
        const std::array<Corpus, 1> cs = {c};
        const Vocabulary v = build_vocab(cs, 100);
        CHECK(v.size() == 3);
        CHECK(v.id("<pad>") == Vocabulary::kPad);
        CHECK(v.token(0) == "<pad>");
        CHECK(v.token(1) == "<unk>");
        CHECK(v.id("x") == 2);
        CHECK(v.id("never") == Vocabulary::kUnk);
    }
    SUBCASE("rarest dropped, ties lexicographic") {
        Corpus c;
        c.sentences.push_back({{"c", "c", "c", "b", "a", "d", "d"}, {"O", "O", "O", "O", "O", "O", "O"}});
        const std::array<Corpus, 1> cs = {c};
        const Vocabulary v = build_vocab(cs, 5);
        CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<unk>", "c", "d", "a"});
        CHECK(v.id("b") == Vocabulary::kUnk);
    }
    SUBCASE("lowercased") {
        Corpus c;
        c.sentences.push_back({{"Flu", "FLU"}, {"B-X", "B-X"}});
        const std::array<Corpus, 1> cs = {c};
        const Vocabulary v = build_vocab(cs, 10);
        CHECK(v.size() == 3);
        CHECK(v.id("fLu") == 2);
    }
}

TEST_CASE("LabelSet layout") {
    const LabelSet l({"DIS"});
    CHECK(l.size() == 3);
    CHECK(l.tag(0) == "O");
    CHECK(l.id("B-DIS") == 1);
    CHECK(l.id("I-DIS") == 2);
    CHECK_THROWS_AS(l.id("B-GENE"), InputError);
}

TEST_CASE("encode_corpus truncates long sentences") {
    Corpus c;
    Sentence s;
    for (std::size_t i = 0; i < kMaxSequenceLength + 5; ++i) {
        s.tokens.push_back("w");
        s.tags.push_back("O");
    }
    c.sentences.push_back(s);
    c.declared_size = 1;
    const std::array<Corpus, 1> cs = {c};
    const Vocabulary v = build_vocab(cs, 10);
    const EncodedCorpus e = encode_corpus(c, v, LabelSet({"X"}));
    CHECK(e.sentences[0].tokens.size() == kMaxSequenceLength);
    CHECK(e.declared_size == 1);
}

TEST_CASE("generate_suite contract") {
    SuiteConfig cfg;
    cfg.sizes = {120, 80, 60};
    cfg.seed = 11;
    const Suite a = generate_suite(cfg);
    const Suite b = generate_suite(cfg);
    REQUIRE(a.tasks.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(a.tasks[k].train == b.tasks[k].train);
        CHECK(a.tasks[k].test == b.tasks[k].test);
        CHECK(a.tasks[k].train.sentences.size() == cfg.sizes[k]);
        CHECK(a.tasks[k].test.sentences.size() ==
              static_cast<std::size_t>(std::round(cfg.test_fraction * static_cast<double>(cfg.sizes[k]))));
        CHECK_NOTHROW(validate_corpus(a.tasks[k].train));
        CHECK_NOTHROW(validate_corpus(a.tasks[k].test));
        CHECK(a.tasks[k].train.declared_size == cfg.sizes[k]);
        // Entity density within 20% of the target.
        const double density = [&] {
            std::size_t ent = 0;
            for (const auto& s : a.tasks[k].train.sentences) {
                for (const auto& t : s.tags) {
                    ent += t != "O";
                }
            }
            return static_cast<double>(ent) / static_cast<double>(count_tokens(a.tasks[k].train));
        }();
        CHECK(std::abs(density - cfg.entity_density) <= 0.2 * cfg.entity_density);
    }
    SuiteConfig other = cfg;
    other.seed = 12;
    CHECK_FALSE(generate_suite(other).tasks[0].train == a.tasks[0].train);
}

TEST_CASE("lexicon overlap between consecutive corpora") {
    SuiteConfig cfg;
    cfg.sizes = {40, 40, 40};
    cfg.lexicon_size = 20;
    for (double overlap : {0.0, 0.3, 0.55, 1.0}) {
        cfg.lexicon_overlap = overlap;
        const Suite s = generate_suite(cfg);
        const auto expected = static_cast<std::size_t>(std::floor(overlap * 20.0));
        for (std::size_t k = 1; k < 3; ++k) {
            CHECK(s.lexicons[k].size() == 20);
            CHECK(shared_entries(s.lexicons[k - 1], s.lexicons[k]) == expected);
        }
        if (overlap == 1.0) {
            const std::set<std::string> first(s.lexicons[0].begin(), s.lexicons[0].end());
            const std::set<std::string> last(s.lexicons[2].begin(), s.lexicons[2].end());
            CHECK(first == last);
        }
    }
}

TEST_CASE("entities of generated corpora come from their own lexicon") {
    SuiteConfig cfg;
    cfg.sizes = {50, 50};
    cfg.num_corpora = 2;
    const Suite s = generate_suite(cfg);
    for (std::size_t k = 0; k < 2; ++k) {
        const std::set<std::string> lex(s.lexicons[k].begin(), s.lexicons[k].end());
        for (const auto& sent : s.tasks[k].train.sentences) {
            for (const auto& span : extract_spans(sent.tags)) {
                std::string phrase;
                for (std::size_t i = span.begin; i < span.end; ++i) {
                    phrase += (i == span.begin ? "" : " ") + sent.tokens[i];
                }
                CHECK(lex.count(phrase) == 1);
            }
        }
    }
    CHECK(std::is_sorted(s.master_lexicon.begin(), s.master_lexicon.end()));
}

TEST_CASE("suite config validation") {
    SuiteConfig cfg;
    cfg.sizes = {10, 0, 10};
    CHECK_THROWS_AS(generate_suite(cfg), ConfigError);
    cfg.sizes = {10, 10};
    CHECK_THROWS_AS(generate_suite(cfg), ConfigError);
    cfg = SuiteConfig{};
    cfg.lexicon_overlap = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("size units and the disease-corpus ratio") {
    SuiteConfig cfg;
    cfg.num_corpora = 2;
    cfg.sizes = {100, 68};
    const Suite s = generate_suite(cfg);
    const double ratio =
        static_cast<double>(s.tasks[0].train.declared_size) / static_cast<double>(s.tasks[1].train.declared_size);
    // NCBI : BC5CDR = 4725 : 3230.
    CHECK(std::abs(ratio - 4725.0 / 3230.0) / (4725.0 / 3230.0) < 0.01);
    CHECK(4725.0 / 3230.0 == doctest::Approx(1.463).epsilon(1e-3));

    cfg.size_unit = SizeUnit::entities;
    const Suite e = generate_suite(cfg);
    CHECK(e.tasks[0].train.declared_size == count_entities(e.tasks[0].train));

    const auto scaled = scaled_sizes(kDiseaseCorpusSizes, 4725);
    CHECK(scaled == std::vector<std::size_t>{4725, 3230, 3043, 2944, 1885});
    const auto small = scaled_sizes(kDiseaseCorpusSizes, 100);
    CHECK(small[0] == 100);
    CHECK(small[1] == 68);
}

TEST_CASE("lexicon_corpus makes one sentence per word") {
    const std::vector<std::string> words = {"a", "b"};
    const Corpus c = lexicon_corpus(words);
    REQUIRE(c.sentences.size() == 2);
    CHECK(c.sentences[1].tokens == std::vector<std::string>{"b"});
}
