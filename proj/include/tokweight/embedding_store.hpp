#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokweight/tensor.hpp"

namespace tokweight {

struct EmbeddingStore {
    std::string id;
    Matrix<float> embeddings;  // unit rows
    std::vector<std::string> item_ids;
    std::vector<std::string> thumbnails;  // empty string when absent

    std::size_t size() const { return item_ids.size(); }
    std::size_t dim() const { return embeddings.cols; }
    EmbeddingStore subset(const std::vector<std::size_t>& rows) const;
};

struct AttributeTable {
    std::vector<std::string> names;
    std::vector<std::vector<std::uint8_t>> values;  // [item][attribute]

    std::size_t attribute_index(const std::string& name) const;
};

struct IngestReport {
    std::size_t items = 0;
    std::size_t renormalized = 0;  // rows whose norm differed from 1 by more than 1e-5
    double max_norm_deviation = 0.0;
};

struct IngestResult {
    EmbeddingStore store;
    AttributeTable attributes;
    IngestReport report;
};

// Embeddings come from the tensor container (tensor "embeddings", [items, dim]);
// metadata is JSONL with {"id", "attributes": {name: 0/1}, "thumbnail"?} per line.
IngestResult ingest(const std::string& embeddings_path, const std::string& metadata_path);

struct ItemMetadata {
    std::string id;
    std::vector<std::pair<std::string, bool>> attributes;
    std::string thumbnail;
};

IngestResult ingest_rows(Matrix<float> embeddings, const std::vector<ItemMetadata>& metadata);
std::vector<ItemMetadata> parse_metadata_jsonl(const std::string& text);

void write_store(const EmbeddingStore& store, const AttributeTable& attributes, const std::string& embeddings_path,
                 const std::string& metadata_path);

struct CategoryPartition {
    std::vector<std::string> attributes;
    std::vector<std::size_t> items;  // store rows, ascending
    std::vector<int> category;       // aligned with items; bit i set = attribute i present
    std::vector<std::string> labels;  // one per category

    std::size_t num_categories() const { return labels.size(); }
};

CategoryPartition partition(const AttributeTable& table, const std::vector<std::string>& attrs,
                            std::optional<std::size_t> sample_per_category = std::nullopt, std::uint64_t seed = 0,
                            bool allow_empty = false);

std::string category_label(const std::vector<std::string>& attrs, int category);

}  // namespace tokweight
