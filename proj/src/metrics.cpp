#include "tokweight/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tokweight {

RankedRetrieval rank(const Embedding& query, const EmbeddingStore& store) {
    if (query.vector.size() != store.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "query has " + std::to_string(query.vector.size()) +
                                                      " dims, store has " + std::to_string(store.dim()));
    }
    double qn = 0.0;
    for (float x : query.vector) qn += static_cast<double>(x) * x;
    qn = std::sqrt(qn);
    if (!(qn > 0.0)) throw Error(ErrorKind::NonFinite, "query embedding is zero");
    std::vector<double> score(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const float* row = store.embeddings.row(i);
        double s = 0.0;
        for (std::size_t c = 0; c < store.dim(); ++c) s += static_cast<double>(query.vector[c]) * row[c];
        score[i] = s / qn;
    }
    RankedRetrieval r;
    r.rows.resize(store.size());
    std::iota(r.rows.begin(), r.rows.end(), std::size_t{0});
    std::sort(r.rows.begin(), r.rows.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return store.item_ids[a] < store.item_ids[b];
    });
    for (auto row : r.rows) r.scores.push_back(score[row]);
    return r;
}

double average_precision(const std::vector<bool>& relevant) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < relevant.size(); ++i) {
        if (relevant[i]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    if (hits == 0) throw Error(ErrorKind::NoPositives, "ranking contains no positives");
    return sum / static_cast<double>(hits);
}

double precision_at_k(const std::vector<bool>& relevant, std::size_t k) {
    if (k < 1 || k > relevant.size()) {
        throw Error(ErrorKind::BadK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(relevant.size()) + "]");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) hits += relevant[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(k);
}

namespace {

std::vector<bool> relevance(const RankedRetrieval& r, const EmbeddingStore& store,
                            const std::set<std::string>& positives) {
    std::vector<bool> rel;
    rel.reserve(r.size());
    for (auto row : r.rows) rel.push_back(positives.count(store.item_ids[row]) != 0);
    return rel;
}

}  // namespace

double average_precision(const RankedRetrieval& r, const EmbeddingStore& store, const std::set<std::string>& positives) {
    if (positives.empty()) throw Error(ErrorKind::NoPositives, "positive set is empty");
    return average_precision(relevance(r, store, positives));
}

double precision_at_k(const RankedRetrieval& r, const EmbeddingStore& store, const std::set<std::string>& positives,
                      std::size_t k) {
    return precision_at_k(relevance(r, store, positives), k);
}

std::vector<CategoryCurve> preference_auc(const RankedRetrieval& r, const std::vector<int>& categories,
                                          const std::vector<std::string>& labels) {
    const std::size_t N = r.size();
    if (categories.size() != N) throw Error(ErrorKind::PartitionMismatch, "partition does not cover the ranking");
    std::vector<CategoryCurve> curves(labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
        curves[c].category = static_cast<int>(c);
        curves[c].label = labels[c];
    }
    for (int c : categories) {
        if (c < 0 || static_cast<std::size_t>(c) >= labels.size()) {
            throw Error(ErrorKind::PartitionMismatch, "category index " + std::to_string(c) + " out of range");
        }
        ++curves[static_cast<std::size_t>(c)].count;
    }
    std::vector<std::size_t> seen(labels.size(), 0);
    for (auto& cv : curves) cv.f.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
        ++seen[static_cast<std::size_t>(categories[r.rows[n]])];
        for (std::size_t c = 0; c < labels.size(); ++c) {
            if (curves[c].count == 0) continue;
            curves[c].f.push_back(static_cast<double>(seen[c]) / static_cast<double>(curves[c].count));
        }
    }
    for (auto& cv : curves) {
        double s = 0.0;
        for (double v : cv.f) s += v;
        cv.auc = N && cv.count ? s / static_cast<double>(N) : 0.0;
    }
    return curves;
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw Error(ErrorKind::CountMismatch, "scores and labels differ in length");
    std::size_t pos = 0;
    for (bool l : labels) pos += l ? 1 : 0;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw Error(ErrorKind::SingleClass, "auroc needs both classes");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with average ranks for ties.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) rank_sum += avg;
        }
        i = j;
    }
    const double u = rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace tokweight
