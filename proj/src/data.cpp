#include "weaver/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "weaver/error.hpp"
#include "weaver/log.hpp"
#include "weaver/rng.hpp"

namespace weaver {

std::string_view split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

namespace {

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

// Returns false on the first malformed sequence.
bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t extra = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= s.size()) {
            return false;
        }
        for (std::size_t k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
        if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += extra + 1;
    }
    return true;
}

}  // namespace

std::vector<Span> extract_spans(std::span<const std::string> tags) {
    std::vector<Span> spans;
    bool open = false;
    Span current;
    auto close = [&](std::size_t end) {
        if (open) {
            current.end = end;
            spans.push_back(current);
            open = false;
        }
    };
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        if (starts_with(tag, "B-")) {
            close(i);
            current = Span{i, i, tag.substr(2)};
            open = true;
        } else if (starts_with(tag, "I-")) {
            const std::string type = tag.substr(2);
            if (!open || current.type != type) {
                // Lenient: a stray I- opens a new span (conlleval convention).
                close(i);
                current = Span{i, i, type};
                open = true;
            }
        } else {
            close(i);
        }
    }
    close(tags.size());
    return spans;
}

void validate_bio(std::span<const std::string> tags) {
    std::string prev_type;
    bool prev_in_entity = false;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        if (tag == "O") {
            prev_in_entity = false;
            continue;
        }
        const bool is_b = starts_with(tag, "B-");
        const bool is_i = starts_with(tag, "I-");
        if ((!is_b && !is_i) || tag.size() < 3) {
            throw ValidationError(fmt::format("position {}: malformed tag '{}'", i, tag));
        }
        const std::string type = tag.substr(2);
        if (is_i && (!prev_in_entity || prev_type != type)) {
            throw ValidationError(fmt::format("position {}: '{}' does not continue a {} span", i, tag, type));
        }
        prev_type = type;
        prev_in_entity = true;
    }
}

void validate_corpus(const Corpus& corpus) {
    for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
        const auto& sent = corpus.sentences[s];
        if (sent.tokens.size() != sent.tags.size()) {
            throw ValidationError(fmt::format("sentence {}: {} tokens but {} tags", s, sent.tokens.size(),
                                              sent.tags.size()));
        }
        try {
            validate_bio(sent.tags);
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("sentence {}, {}", s, e.what()));
        }
    }
    if (corpus.split == Split::train && !corpus.sentences.empty() && corpus.declared_size == 0) {
        throw ValidationError("train corpus must declare a positive size");
    }
}

std::size_t count_entities(const Corpus& corpus) {
    std::size_t n = 0;
    for (const auto& s : corpus.sentences) {
        n += extract_spans(s.tags).size();
    }
    return n;
}

std::size_t count_tokens(const Corpus& corpus) {
    std::size_t n = 0;
    for (const auto& s : corpus.sentences) {
        n += s.tokens.size();
    }
    return n;
}

std::size_t measure_size(const Corpus& corpus, SizeUnit unit) {
    return unit == SizeUnit::sentences ? corpus.sentences.size() : count_entities(corpus);
}

Corpus read_conll(std::istream& in, std::string name, Split split) {
    Corpus corpus;
    corpus.name = std::move(name);
    corpus.split = split;
    Sentence current;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::size_t> sentence_start_lines;
    std::size_t current_start = 0;

    auto flush = [&] {
        if (!current.tokens.empty()) {
            corpus.sentences.push_back(std::move(current));
            sentence_start_lines.push_back(current_start);
            current = Sentence{};
        }
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!valid_utf8(line)) {
            throw ParseError(line_no, "invalid UTF-8");
        }
        if (line.empty()) {
            flush();
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw ParseError(line_no, fmt::format("expected 2 TAB-separated fields, got '{}'", line));
        }
        std::string token = line.substr(0, tab);
        std::string tag = line.substr(tab + 1);
        if (token.empty() || tag.empty()) {
            throw ParseError(line_no, "empty token or tag field");
        }
        if (current.tokens.empty()) {
            current_start = line_no;
        }
        current.tokens.push_back(std::move(token));
        current.tags.push_back(std::move(tag));
    }
    flush();

    for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
        try {
            validate_bio(corpus.sentences[s].tags);
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("sentence starting at line {}, {}", sentence_start_lines[s], e.what()));
        }
    }
    corpus.declared_size = corpus.sentences.size();
    return corpus;
}

Corpus read_conll_file(const std::string& path, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError(fmt::format("cannot open '{}'", path));
    }
    return read_conll(in, path, split);
}

void write_conll(const Corpus& corpus, std::ostream& out) {
    for (const auto& s : corpus.sentences) {
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            out << s.tokens[i] << '\t' << s.tags[i] << '\n';
        }
        out << '\n';
    }
}

std::string write_conll(const Corpus& corpus) {
    std::ostringstream out;
    write_conll(corpus, out);
    return out.str();
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

Vocabulary::Vocabulary() {
    add(std::string(kPadToken));
    add(std::string(kUnkToken));
}

void Vocabulary::add(const std::string& token) {
    if (index_.count(token) != 0) {
        return;
    }
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

int Vocabulary::id(std::string_view token) const {
    const auto it = index_.find(lowercase(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
    return index_.find(lowercase(token)) != index_.end();
}

Vocabulary build_vocab(std::span<const Corpus> corpora, std::size_t max_size) {
    if (corpora.empty()) {
        throw ArgumentError("build_vocab: no corpora");
    }
    std::map<std::string, std::size_t> freq;
    for (const auto& c : corpora) {
        for (const auto& s : c.sentences) {
            for (const auto& t : s.tokens) {
                ++freq[lowercase(t)];
            }
        }
    }
    freq.erase(std::string(Vocabulary::kPadToken));
    freq.erase(std::string(Vocabulary::kUnkToken));
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [token, count] : ranked) {
        if (vocab.size() >= max_size) {
            break;
        }
        vocab.add(token);
    }
    return vocab;
}

LabelSet::LabelSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {
    if (types_.empty()) {
        throw ArgumentError("LabelSet needs at least one entity type");
    }
    labels_.push_back("O");
    for (const auto& t : types_) {
        labels_.push_back("B-" + t);
        labels_.push_back("I-" + t);
    }
}

int LabelSet::id(std::string_view tag) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == tag) {
            return static_cast<int>(i);
        }
    }
    throw InputError(fmt::format("unknown tag '{}'", tag));
}

std::vector<int> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(vocab.id(t));
    }
    return ids;
}

EncodedCorpus encode_corpus(const Corpus& corpus, const Vocabulary& vocab, const LabelSet& labels) {
    EncodedCorpus out;
    out.name = corpus.name;
    out.declared_size = corpus.declared_size;
    out.sentences.reserve(corpus.sentences.size());
    std::size_t truncated = 0;
    for (const auto& s : corpus.sentences) {
        if (s.tokens.empty()) {
            continue;
        }
        const std::size_t n = std::min(s.tokens.size(), kMaxSequenceLength);
        truncated += n < s.tokens.size() ? 1 : 0;
        EncodedSentence e;
        e.tokens = encode_tokens(std::span(s.tokens).first(n), vocab);
        for (std::size_t i = 0; i < n; ++i) {
            e.labels.push_back(labels.id(s.tags[i]));
        }
        out.sentences.push_back(std::move(e));
    }
    if (truncated > 0) {
        log_warning(fmt::format("{}: truncated {} sentence(s) to {} tokens", corpus.name, truncated,
                                kMaxSequenceLength));
    }
    return out;
}

Corpus lexicon_corpus(std::span<const std::string> words) {
    Corpus c;
    c.name = "master-lexicon";
    c.split = Split::dev;
    for (const auto& w : words) {
        c.sentences.push_back(Sentence{{w}, {"O"}});
    }
    c.declared_size = c.sentences.size();
    return c;
}

std::vector<std::size_t> scaled_sizes(std::span<const std::size_t> reference, std::size_t largest) {
    if (reference.empty()) {
        return {};
    }
    const double top = static_cast<double>(*std::max_element(reference.begin(), reference.end()));
    std::vector<std::size_t> out;
    for (std::size_t r : reference) {
        out.push_back(static_cast<std::size_t>(
            std::max(1.0, std::round(static_cast<double>(r) * static_cast<double>(largest) / top))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic suites

void SuiteConfig::validate() const {
    if (num_corpora == 0) {
        throw ConfigError("suite: num_corpora must be >= 1");
    }
    if (sizes.size() != num_corpora) {
        throw ConfigError(fmt::format("suite: {} sizes given for {} corpora", sizes.size(), num_corpora));
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0) {
            throw ConfigError(fmt::format("suite: corpus {} has size 0", i));
        }
    }
    if (!(lexicon_overlap >= 0.0 && lexicon_overlap <= 1.0)) {
        throw ConfigError("suite: lexicon_overlap must lie in [0, 1]");
    }
    if (!(entity_density > 0.0 && entity_density < 1.0)) {
        throw ConfigError("suite: entity_density must lie in (0, 1)");
    }
    if (!(test_fraction > 0.0 && test_fraction <= 1.0)) {
        throw ConfigError("suite: test_fraction must lie in (0, 1]");
    }
    if (shared_vocab_size < trigger_words + 1 || lexicon_size == 0) {
        throw ConfigError("suite: shared_vocab_size must exceed trigger_words and lexicon_size must be >= 1");
    }
    if (min_sentence_length < 1 || min_sentence_length > max_sentence_length || max_sentence_length > 40) {
        throw ConfigError("suite: sentence lengths must satisfy 1 <= min <= max <= 40");
    }
    if (!(trigger_rate >= 0.0 && trigger_rate <= 1.0)) {
        throw ConfigError("suite: trigger_rate must lie in [0, 1]");
    }
    if (!(domain_rate >= 0.0 && domain_rate <= 1.0)) {
        throw ConfigError("suite: domain_rate must lie in [0, 1]");
    }
    if (domain_rate > 0.0 && domain_vocab_size == 0) {
        throw ConfigError("suite: domain_rate > 0 needs domain_vocab_size >= 1");
    }
    if (!(conflict_rate >= 0.0 && conflict_rate < 1.0)) {
        throw ConfigError("suite: conflict_rate must lie in [0, 1)");
    }
    if (!names.empty() && names.size() != num_corpora) {
        throw ConfigError("suite: names must be empty or one per corpus");
    }
}

std::string SuiteConfig::corpus_name(std::size_t i) const {
    return names.empty() ? fmt::format("synth-{}", i) : names[i];
}

namespace {

class WordFactory {
public:
    explicit WordFactory(std::uint64_t seed) : rng_(derive_seed(seed, 0xA11CE)) {}

    std::string fresh(std::size_t min_syllables, std::size_t max_syllables) {
        static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                                       "r", "s", "t", "v", "z", "ch", "tr", "pl", "st"};
        static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        for (;;) {
            const std::size_t syllables = min_syllables + uniform_index(rng_, max_syllables - min_syllables + 1);
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += kOnsets[uniform_index(rng_, std::size(kOnsets))];
                w += kVowels[uniform_index(rng_, std::size(kVowels))];
            }
            if (used_.insert(w).second) {
                return w;
            }
        }
    }

private:
    Rng rng_;
    std::set<std::string> used_;
};

using Phrase = std::vector<std::string>;

Phrase make_entry(WordFactory& words, Rng& rng) {
    const double u = uniform01(rng);
    const std::size_t len = u < 0.5 ? 1 : (u < 0.85 ? 2 : 3);
    Phrase p;
    for (std::size_t i = 0; i < len; ++i) {
        p.push_back(words.fresh(3, 4));
    }
    return p;
}

class ZipfSampler {
public:
    explicit ZipfSampler(std::size_t n) {
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            total += 1.0 / static_cast<double>(r + 1);
            cumulative_.push_back(total);
        }
        for (double& c : cumulative_) {
            c /= total;
        }
    }

    std::size_t sample(Rng& rng) const {
        const double u = uniform01(rng);
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

struct SentenceGenerator {
    const SuiteConfig& config;
    const std::vector<std::string>& plain;
    const std::vector<std::string>& triggers;
    const std::vector<Phrase>& lexicon;
    const std::vector<std::string>& domain;
    // Entries of the other corpora's lexicons that this corpus leaves unannotated.
    const std::vector<Phrase>& foreign;
    ZipfSampler zipf;
    ZipfSampler domain_zipf;
    double entity_step_prob;

    const std::string& plain_word(Rng& rng) const {
        if (!domain.empty() && bernoulli(rng, config.domain_rate)) {
            return domain[domain_zipf.sample(rng)];
        }
        return plain[zipf.sample(rng)];
    }

    Sentence generate(Rng& rng) const {
        const std::size_t target =
            config.min_sentence_length + uniform_index(rng, config.max_sentence_length - config.min_sentence_length + 1);
        Sentence s;
        auto push = [&](const std::string& tok, std::string tag) {
            s.tokens.push_back(tok);
            s.tags.push_back(std::move(tag));
        };
        while (s.tokens.size() < target) {
            if (bernoulli(rng, entity_step_prob)) {
                if (bernoulli(rng, config.trigger_rate)) {
                    push(triggers[uniform_index(rng, triggers.size())], "O");
                }
                const Phrase& entry = lexicon[uniform_index(rng, lexicon.size())];
                for (std::size_t i = 0; i < entry.size(); ++i) {
                    push(entry[i], (i == 0 ? "B-" : "I-") + config.entity_type);
                }
            }
            if (!foreign.empty() && bernoulli(rng, config.conflict_rate)) {
                for (const auto& w : foreign[uniform_index(rng, foreign.size())]) {
                    push(w, "O");
                }
            } else {
                push(plain_word(rng), "O");
            }
        }
        return s;
    }
};

double mean_entry_length(const std::vector<Phrase>& lexicon) {
    double total = 0.0;
    for (const auto& p : lexicon) {
        total += static_cast<double>(p.size());
    }
    return total / static_cast<double>(lexicon.size());
}

}  // namespace

Suite generate_suite(const SuiteConfig& config) {
    config.validate();
    WordFactory words(config.seed);
    Rng rng(derive_seed(config.seed, 0x5017E));

    std::vector<std::string> plain;
    for (std::size_t i = 0; i < config.shared_vocab_size; ++i) {
        plain.push_back(words.fresh(1, 2));
    }
    // Triggers are mid-frequency shared words that also precede entity mentions.
    std::vector<std::string> triggers;
    for (std::size_t i = 0; i < config.trigger_words; ++i) {
        triggers.push_back(plain[std::min(plain.size() - 1, 3 + i)]);
    }

    std::vector<std::vector<Phrase>> lexicons(config.num_corpora);
    const auto shared = static_cast<std::size_t>(std::floor(config.lexicon_overlap * static_cast<double>(config.lexicon_size)));
    for (std::size_t k = 0; k < config.num_corpora; ++k) {
        auto& lex = lexicons[k];
        if (k > 0) {
            std::vector<Phrase> prev = lexicons[k - 1];
            shuffle(std::span<Phrase>(prev), rng);
            lex.assign(prev.begin(), prev.begin() + static_cast<std::ptrdiff_t>(shared));
        }
        while (lex.size() < config.lexicon_size) {
            lex.push_back(make_entry(words, rng));
        }
    }

    Suite suite;
    std::set<std::string> master;
    for (const auto& lex : lexicons) {
        std::vector<std::string> joined;
        for (const auto& p : lex) {
            std::string j;
            for (const auto& w : p) {
                master.insert(w);
                j += (j.empty() ? "" : " ") + w;
            }
            joined.push_back(std::move(j));
        }
        suite.lexicons.push_back(std::move(joined));
    }
    suite.master_lexicon.assign(master.begin(), master.end());

    // Corpus-specific non-entity words: the topical vocabulary of each source.
    std::vector<std::vector<std::string>> domains(config.num_corpora);
    for (auto& d : domains) {
        for (std::size_t i = 0; i < config.domain_vocab_size; ++i) {
            d.push_back(words.fresh(3, 4));
        }
    }

    const double t = config.trigger_rate;
    for (std::size_t k = 0; k < config.num_corpora; ++k) {
        std::vector<Phrase> foreign;
        for (std::size_t other = 0; other < config.num_corpora; ++other) {
            for (const auto& p : lexicons[other]) {
                const bool own = std::find(lexicons[k].begin(), lexicons[k].end(), p) != lexicons[k].end();
                const bool seen = std::find(foreign.begin(), foreign.end(), p) != foreign.end();
                if (other != k && !own && !seen) {
                    foreign.push_back(p);
                }
            }
        }
        // An entity step emits (trigger?) + entry + one O unit, a plain step
        // one O unit (a plain word, or an unannotated foreign mention); solve
        // for the step probability that gives the requested entity fraction.
        const double len = mean_entry_length(lexicons[k]);
        const double unit = foreign.empty() ? 1.0 : 1.0 + config.conflict_rate * (mean_entry_length(foreign) - 1.0);
        const double rho = config.entity_density;
        const double denom = len - rho * (len + t);
        if (denom <= 0.0) {
            throw ConfigError(fmt::format("suite: entity_density {} unreachable with mean mention length {:.2f}", rho, len));
        }
        const double q = rho * unit / denom;
        if (q > 1.0) {
            throw ConfigError(fmt::format("suite: entity_density {} unreachable", rho));
        }
        const SentenceGenerator gen{config,        plain, triggers, lexicons[k], domains[k], foreign, ZipfSampler(plain.size()),
                                    ZipfSampler(domains[k].size()), q};
        Rng corpus_rng(derive_seed(config.seed, 1000 + k));

        CorpusPair pair;
        pair.train.name = config.corpus_name(k);
        pair.train.split = Split::train;
        for (std::size_t i = 0; i < config.sizes[k]; ++i) {
            pair.train.sentences.push_back(gen.generate(corpus_rng));
        }
        pair.train.declared_size = measure_size(pair.train, config.size_unit);
        if (pair.train.declared_size == 0) {
            throw ConfigError(fmt::format("suite: corpus {} has no entities to count", k));
        }

        pair.test.name = config.corpus_name(k);
        pair.test.split = Split::test;
        const auto n_test = static_cast<std::size_t>(
            std::max(1.0, std::round(config.test_fraction * static_cast<double>(config.sizes[k]))));
        for (std::size_t i = 0; i < n_test; ++i) {
            pair.test.sentences.push_back(gen.generate(corpus_rng));
        }
        pair.test.declared_size = pair.test.sentences.size();
        suite.tasks.push_back(std::move(pair));
    }
    return suite;
}

}  // namespace weaver
