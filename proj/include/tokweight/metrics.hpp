#pragma once

#include <set>
#include <string>
#include <vector>

#include "tokweight/embedding_store.hpp"
#include "tokweight/encoder.hpp"

namespace tokweight {

struct RankedRetrieval {
    std::vector<std::size_t> rows;  // store rows, best first
    std::vector<double> scores;     // cosine similarity, non-increasing
    std::string tie_policy = "cosine descending, then item id ascending";

    std::size_t size() const { return rows.size(); }
};

// Cosine ranking of every store row against the query.
RankedRetrieval rank(const Embedding& query, const EmbeddingStore& store);

// relevant[i] refers to rank position i.
double average_precision(const std::vector<bool>& relevant);
double precision_at_k(const std::vector<bool>& relevant, std::size_t k);

double average_precision(const RankedRetrieval& r, const EmbeddingStore& store, const std::set<std::string>& positives);
double precision_at_k(const RankedRetrieval& r, const EmbeddingStore& store, const std::set<std::string>& positives,
                      std::size_t k);

struct CategoryCurve {
    int category = 0;
    std::string label;
    std::size_t count = 0;
    std::vector<double> f;  // f[n-1] = share of the category within the top n
    double auc = 0.0;       // mean of f over n = 1..N
};

// categories[row] gives the category of each store row.
std::vector<CategoryCurve> preference_auc(const RankedRetrieval& r, const std::vector<int>& categories,
                                          const std::vector<std::string>& labels);

// Probability that a random positive scores above a random negative, ties 1/2.
double auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

}  // namespace tokweight
