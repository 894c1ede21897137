#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokweight/embedding_store.hpp"
#include "tokweight/encoder.hpp"
#include "tokweight/tokenizer.hpp"
#include "tokweight/trainer.hpp"

namespace tokweight {

// Words known to the toy vocabulary; each is a single token.
const std::vector<std::string>& fixture_words();

// Byte-level BPE vocabulary whose merges spell out every word in `words`.
Vocabulary make_word_vocabulary(const std::vector<std::string>& words, int context_length);

// CLIP-style random initialisation.
EncoderModel make_random_model(const EncoderConfig& arch, std::uint64_t seed);

// Hand-built encoder whose geometry is easy to reason about: word tokens get
// orthonormal embeddings, positions live in their own subspace, block 1 heads
// copy the previous token, later blocks attend nearly uniformly with an
// attention sink on SOS, and the value path is close to the identity on the
// token subspace.
struct SemanticModelOptions {
    int num_blocks = 12;
    int model_dim = 96;
    int num_heads = 4;
    int context_length = 24;
    int token_dims = 72;
    double prev_token_gain = 8.0;
    double qk_scale = 0.15;
    double value_noise = 0.03;
    double mlp_scale = 0.03;
    double sink = 0.4;
    int reweight_start_block = 2;
    std::uint64_t seed = 0;
};

EncoderModel make_semantic_model(const Vocabulary& vocab, const std::vector<std::string>& words,
                                 const SemanticModelOptions& opts);

// Person-attribute store: three binary attributes give eight categories whose
// mean embeddings are separated along directions measured from the text encoder
// on minimal prompt pairs. Item noise is shared across categories and kept
// orthogonal to those directions.
struct SyntheticStoreOptions {
    std::size_t per_category = 100;
    double attribute_scale = 0.5;
    double noise = 1.0;
    std::uint64_t seed = 0;
};

struct SyntheticStore {
    EmbeddingStore store;
    AttributeTable attributes;
    std::string prompt;
    std::string span;              // attribute phrase inside the prompt
    std::string target_attribute;  // attribute the span names
    int prompt_category = 0;       // category matching the full prompt
    int contrast_category = 0;     // differs from prompt_category only in the span attribute
    int target_category = 0;       // category the emphasis sweeps are scored on
};

SyntheticStore make_synthetic_store(const EncoderModel& model, const Vocabulary& vocab,
                                    const SyntheticStoreOptions& opts);

// Two bird classes separated by wing pattern; the prompts also name a colour
// that is independent of the label in the image data.
struct FewShotOptions {
    int shots = 16;
    int test_per_class = 500;
    double pattern_scale = 0.25;
    double colour_scale = 0.5;
    double noise = 1.0;
    int rare_tokens = 0;  // appended to every prompt, drawn from {sks, pll, ucd}
    std::uint64_t seed = 0;
};

struct FewShotTask {
    std::vector<ClassPromptSet> sets;
    FewShotBatch train;
    FewShotBatch test;
    std::vector<std::string> discriminative;  // per class
};

FewShotTask make_fewshot_task(const EncoderModel& model, const Vocabulary& vocab, const FewShotOptions& opts);

// Random prompt built from fixture words.
std::string random_prompt(std::uint64_t seed, int max_words);

}  // namespace tokweight
