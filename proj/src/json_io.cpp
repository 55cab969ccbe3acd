#include "weaver/json_io.hpp"

#include <fmt/format.h>

#include "weaver/error.hpp"

namespace weaver {

using nlohmann::json;

void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) {
        throw ConfigError(fmt::format("{}: expected a JSON object", where));
    }
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            known = known || key == a;
        }
        if (!known) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

namespace {

template <class T>
void read(const json& j, const char* key, T& out, const char* where) {
    const auto it = j.find(key);
    if (it == j.end()) {
        return;
    }
    try {
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<long long>() >= 0)) {
                throw ConfigError(fmt::format("{}.{}: expected a non-negative integer", where, key));
            }
        }
        out = it->template get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
    }
}

}  // namespace

json to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
                {"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
                {"num_labels", c.num_labels},   {"attention_window", c.attention_window},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    require_known_keys(j, {"vocab_size", "embed_dim", "num_layers", "hidden_dim", "num_labels", "attention_window", "seed"},
                       "model");
    ModelConfig c;
    read(j, "vocab_size", c.vocab_size, "model");
    read(j, "embed_dim", c.embed_dim, "model");
    read(j, "num_layers", c.num_layers, "model");
    read(j, "hidden_dim", c.hidden_dim, "model");
    read(j, "num_labels", c.num_labels, "model");
    read(j, "attention_window", c.attention_window, "model");
    read(j, "seed", c.seed, "model");
    return c;
}

json to_json(const Hyperparams& h) {
    json j{{"epochs", h.epochs},
           {"batch_size", h.batch_size},
           {"learning_rate", h.learning_rate},
           {"optimizer", h.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
           {"adam_beta1", h.adam_beta1},
           {"adam_beta2", h.adam_beta2},
           {"adam_eps", h.adam_eps},
           {"seed", h.seed}};
    j["grad_clip"] = h.grad_clip ? json(*h.grad_clip) : json(nullptr);
    return j;
}

Hyperparams hyperparams_from_json(const json& j) {
    require_known_keys(j, {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1", "adam_beta2", "adam_eps",
                           "grad_clip", "seed"},
                       "hyper");
    Hyperparams h;
    read(j, "epochs", h.epochs, "hyper");
    read(j, "batch_size", h.batch_size, "hyper");
    read(j, "learning_rate", h.learning_rate, "hyper");
    read(j, "adam_beta1", h.adam_beta1, "hyper");
    read(j, "adam_beta2", h.adam_beta2, "hyper");
    read(j, "adam_eps", h.adam_eps, "hyper");
    read(j, "seed", h.seed, "hyper");
    if (j.contains("optimizer")) {
        const auto name = j.at("optimizer");
        if (name == "adam") {
            h.optimizer = OptimizerKind::adam;
        } else if (name == "sgd") {
            h.optimizer = OptimizerKind::sgd;
        } else {
            throw ConfigError(fmt::format("hyper.optimizer: expected 'adam' or 'sgd', got {}", name.dump()));
        }
    }
    if (j.contains("grad_clip") && !j.at("grad_clip").is_null()) {
        double clip = 0.0;
        read(j, "grad_clip", clip, "hyper");
        h.grad_clip = clip;
    }
    h.validate();
    return h;
}

json to_json(const SuiteConfig& c) {
    return json{{"num_corpora", c.num_corpora},
                {"sizes", c.sizes},
                {"shared_vocab_size", c.shared_vocab_size},
                {"lexicon_size", c.lexicon_size},
                {"lexicon_overlap", c.lexicon_overlap},
                {"entity_density", c.entity_density},
                {"test_fraction", c.test_fraction},
                {"seed", c.seed},
                {"entity_type", c.entity_type},
                {"size_unit", c.size_unit == SizeUnit::sentences ? "sentences" : "entities"},
                {"min_sentence_length", c.min_sentence_length},
                {"max_sentence_length", c.max_sentence_length},
                {"trigger_words", c.trigger_words},
                {"trigger_rate", c.trigger_rate},
                {"domain_vocab_size", c.domain_vocab_size},
                {"domain_rate", c.domain_rate},
                {"conflict_rate", c.conflict_rate},
                {"names", c.names}};
}

SuiteConfig suite_config_from_json(const json& j) {
    require_known_keys(j, {"num_corpora", "sizes", "shared_vocab_size", "lexicon_size", "lexicon_overlap",
                           "entity_density", "test_fraction", "seed", "entity_type", "size_unit",
                           "min_sentence_length", "max_sentence_length", "trigger_words", "trigger_rate", "domain_vocab_size",
                           "domain_rate", "conflict_rate", "names"},
                       "suite");
    SuiteConfig c;
    read(j, "sizes", c.sizes, "suite");
    c.num_corpora = c.sizes.size();
    read(j, "num_corpora", c.num_corpora, "suite");
    read(j, "shared_vocab_size", c.shared_vocab_size, "suite");
    read(j, "lexicon_size", c.lexicon_size, "suite");
    read(j, "lexicon_overlap", c.lexicon_overlap, "suite");
    read(j, "entity_density", c.entity_density, "suite");
    read(j, "test_fraction", c.test_fraction, "suite");
    read(j, "seed", c.seed, "suite");
    read(j, "entity_type", c.entity_type, "suite");
    read(j, "min_sentence_length", c.min_sentence_length, "suite");
    read(j, "max_sentence_length", c.max_sentence_length, "suite");
    read(j, "trigger_words", c.trigger_words, "suite");
    read(j, "trigger_rate", c.trigger_rate, "suite");
    read(j, "domain_vocab_size", c.domain_vocab_size, "suite");
    read(j, "domain_rate", c.domain_rate, "suite");
    read(j, "conflict_rate", c.conflict_rate, "suite");
    read(j, "names", c.names, "suite");
    if (j.contains("size_unit")) {
        const auto unit = j.at("size_unit");
        if (unit == "sentences") {
            c.size_unit = SizeUnit::sentences;
        } else if (unit == "entities") {
            c.size_unit = SizeUnit::entities;
        } else {
            throw ConfigError(fmt::format("suite.size_unit: expected 'sentences' or 'entities', got {}", unit.dump()));
        }
    }
    c.validate();
    return c;
}

}  // namespace weaver
