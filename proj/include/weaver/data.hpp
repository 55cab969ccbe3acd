#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weaver/model.hpp"

namespace weaver {

enum class Split { train, dev, test };

std::string_view split_name(Split split);

struct Sentence {
    std::vector<std::string> tokens;
    std::vector<std::string> tags;

    bool operator==(const Sentence&) const = default;
};

struct Corpus {
    std::string name;
    Split split = Split::train;
    std::vector<Sentence> sentences;
    // The n_k used for size-weighted averaging.
    std::size_t declared_size = 0;

    bool operator==(const Corpus&) const = default;
};

enum class SizeUnit { sentences, entities };

// Throws ValidationError naming the first offending position. An I-X tag must
// follow B-X or I-X; tags other than O, B-*, I-* are rejected.
void validate_bio(std::span<const std::string> tags);
void validate_corpus(const Corpus& corpus);

// Maximal BIO spans as [begin, end) with their type.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string type;

    auto operator<=>(const Span&) const = default;
};

std::vector<Span> extract_spans(std::span<const std::string> tags);
std::size_t count_entities(const Corpus& corpus);
std::size_t count_tokens(const Corpus& corpus);
std::size_t measure_size(const Corpus& corpus, SizeUnit unit);

// CoNLL: one "token<TAB>tag" per line, blank line between sentences. The
// declared size of the result is its sentence count.
Corpus read_conll(std::istream& in, std::string name = "conll", Split split = Split::train);
Corpus read_conll_file(const std::string& path, Split split = Split::train);
void write_conll(const Corpus& corpus, std::ostream& out);
std::string write_conll(const Corpus& corpus);

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr std::string_view kPadToken = "<pad>";
    static constexpr std::string_view kUnkToken = "<unk>";

    Vocabulary();

    std::size_t size() const noexcept { return tokens_.size(); }
    // Lowercases before lookup; unknown tokens map to kUnk.
    int id(std::string_view token) const;
    bool contains(std::string_view token) const;
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    void add(const std::string& token);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int, std::less<>> index_;
};

std::string lowercase(std::string_view s);

// Most frequent lowercased tokens first, ties lexicographic; max_size counts
// the PAD and UNK entries.
Vocabulary build_vocab(std::span<const Corpus> corpora, std::size_t max_size);

class LabelSet {
public:
    // O, then B-T / I-T for every type in order.
    explicit LabelSet(std::vector<std::string> entity_types);

    std::size_t size() const noexcept { return labels_.size(); }
    int id(std::string_view tag) const;
    const std::string& tag(int id) const { return labels_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& entity_types() const noexcept { return types_; }

private:
    std::vector<std::string> types_;
    std::vector<std::string> labels_;
};

struct EncodedCorpus {
    std::string name;
    std::size_t declared_size = 0;
    std::vector<EncodedSentence> sentences;
};

// Sentences longer than kMaxSequenceLength are truncated with a warning.
EncodedCorpus encode_corpus(const Corpus& corpus, const Vocabulary& vocab, const LabelSet& labels);
std::vector<int> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab);

struct SuiteConfig {
    std::size_t num_corpora = 3;
    std::vector<std::size_t> sizes = {200, 200, 200};
    std::size_t shared_vocab_size = 120;
    std::size_t lexicon_size = 25;
    double lexicon_overlap = 0.3;
    double entity_density = 0.3;
    double test_fraction = 0.5;
    std::uint64_t seed = 0;

    std::string entity_type = "DIS";
    SizeUnit size_unit = SizeUnit::sentences;
    std::size_t min_sentence_length = 6;
    std::size_t max_sentence_length = 16;
    std::size_t trigger_words = 6;
    double trigger_rate = 0.8;
    // Per-corpus non-entity words; each plain token is drawn from them with
    // probability domain_rate, otherwise from the shared vocabulary.
    std::size_t domain_vocab_size = 60;
    double domain_rate = 0.4;
    // Probability that an O unit is a mention of another corpus's entity,
    // left unannotated under this corpus's guidelines.
    double conflict_rate = 0.02;
    std::vector<std::string> names;

    void validate() const;
    std::string corpus_name(std::size_t i) const;
};

struct CorpusPair {
    Corpus train;
    Corpus test;
};

struct Suite {
    std::vector<CorpusPair> tasks;
    // Every entity word across all corpus lexicons, sorted.
    std::vector<std::string> master_lexicon;
    // Per corpus: the lexicon entries (multi-word phrases joined by a space).
    std::vector<std::vector<std::string>> lexicons;
};

Suite generate_suite(const SuiteConfig& config);

// The master lexicon as a one-word-per-sentence corpus for vocabulary building.
Corpus lexicon_corpus(std::span<const std::string> words);

// Training-set entity counts of five public disease NER corpora
// (NCBI, BC5CDR, miRNA-disease, plant-disease, BioNLP13-CG).
inline constexpr std::array<std::size_t, 5> kDiseaseCorpusSizes = {4725, 3230, 3043, 2944, 1885};

// Rescales reference sizes so the largest becomes `largest`, keeping ratios.
std::vector<std::size_t> scaled_sizes(std::span<const std::size_t> reference, std::size_t largest);

}  // namespace weaver
