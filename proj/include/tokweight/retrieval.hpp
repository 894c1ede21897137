#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tokweight/embedding_store.hpp"
#include "tokweight/encoder.hpp"
#include "tokweight/metrics.hpp"
#include "tokweight/tokenizer.hpp"

namespace tokweight {

// A store restricted to a category partition, with per-row categories and
// optionally the rows that carry a target attribute.
struct EvalSet {
    EmbeddingStore store;
    std::vector<int> category;
    std::vector<std::string> labels;
    std::vector<bool> positive;  // empty when no target attribute

    std::size_t positives() const;
};

EvalSet make_eval_set(const EmbeddingStore& store, const AttributeTable& table, const CategoryPartition& partition,
                      const std::string& target_attribute = "");

enum class WeightingMethod { Reweight, PromptBlend };

WeightingMethod parse_weighting_method(const std::string& s);
const char* to_string(WeightingMethod m);

struct QueryOptions {
    WeightingMethod method = WeightingMethod::Reweight;
    int inject_block = 0;  // prompt blending only; 0 means cfg.reweight_start_block
};

// Unit query embedding for a tokenized prompt under the given weights.
Embedding encode_query(const TokenSequence& seq, const TokenWeights& w, const EncoderModel& model,
                       const EncoderConfig& cfg, const Vocabulary& vocab, const QueryOptions& opts = {});

struct QueryResult {
    Embedding query;
    RankedRetrieval ranking;
    std::vector<CategoryCurve> curves;  // empty when no categories
};

// The one retrieval path shared by the CLI and the HTTP service.
QueryResult run_query(const TokenSequence& seq, const TokenWeights& w, const EncoderModel& model,
                      const EncoderConfig& cfg, const Vocabulary& vocab, const EvalSet& eval,
                      const QueryOptions& opts = {});

struct SweepRow {
    double weight = 1.0;
    std::optional<double> ap;
    std::optional<double> pk;
    std::vector<double> auc;  // per category
};

struct SweepConfig {
    std::vector<double> grid;
    std::size_t k = 0;  // 0 means the number of positives
    QueryOptions query;
};

// Each grid value replaces the weight of every entry in the span spec.
std::vector<SweepRow> weight_sweep(const TokenSequence& seq, const SpanWeightSpec& spec, const SweepConfig& sweep,
                                   const EncoderModel& model, const EncoderConfig& cfg, const Vocabulary& vocab,
                                   const EvalSet& eval);

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::string>& labels);
std::string curves_csv(const std::vector<CategoryCurve>& curves);

}  // namespace tokweight
