#include "tokweight/retrieval.hpp"

#include <iomanip>
#include <sstream>

namespace tokweight {

std::size_t EvalSet::positives() const {
    std::size_t n = 0;
    for (bool p : positive) n += p ? 1 : 0;
    return n;
}

EvalSet make_eval_set(const EmbeddingStore& store, const AttributeTable& table, const CategoryPartition& partition,
                      const std::string& target_attribute) {
    if (table.values.size() != store.size()) {
        throw Error(ErrorKind::CountMismatch, "attribute table and store differ in size");
    }
    EvalSet e;
    e.store = store.subset(partition.items);
    e.category = partition.category;
    e.labels = partition.labels;
    if (!target_attribute.empty()) {
        const auto a = table.attribute_index(target_attribute);
        for (auto row : partition.items) e.positive.push_back(table.values[row][a] != 0);
    }
    return e;
}

WeightingMethod parse_weighting_method(const std::string& s) {
    if (s == "reweight") return WeightingMethod::Reweight;
    if (s == "blend" || s == "mpw") return WeightingMethod::PromptBlend;
    throw Error(ErrorKind::InvalidArgument, "unknown weighting method: " + s);
}

const char* to_string(WeightingMethod m) { return m == WeightingMethod::PromptBlend ? "blend" : "reweight"; }

Embedding encode_query(const TokenSequence& seq, const TokenWeights& w, const EncoderModel& model,
                       const EncoderConfig& cfg, const Vocabulary& vocab, const QueryOptions& opts) {
    const auto wf = cast_vector<float>(w.values);
    if (opts.method == WeightingMethod::PromptBlend) {
        const int inject = opts.inject_block > 0 ? opts.inject_block : cfg.reweight_start_block;
        return encode_mpw_baseline<float>(seq.ids, wf, model, cfg, inject, vocab.sos_id, vocab.eos_id).unit();
    }
    return encode<float>(seq.ids, wf, model, cfg).unit();
}

QueryResult run_query(const TokenSequence& seq, const TokenWeights& w, const EncoderModel& model,
                      const EncoderConfig& cfg, const Vocabulary& vocab, const EvalSet& eval,
                      const QueryOptions& opts) {
    QueryResult r;
    r.query = encode_query(seq, w, model, cfg, vocab, opts);
    r.ranking = rank(r.query, eval.store);
    if (!eval.labels.empty()) r.curves = preference_auc(r.ranking, eval.category, eval.labels);
    return r;
}

std::vector<SweepRow> weight_sweep(const TokenSequence& seq, const SpanWeightSpec& spec, const SweepConfig& sweep,
                                   const EncoderModel& model, const EncoderConfig& cfg, const Vocabulary& vocab,
                                   const EvalSet& eval) {
    if (sweep.grid.empty()) throw Error(ErrorKind::InvalidArgument, "weight grid is empty");
    std::vector<SweepRow> rows;
    for (double g : sweep.grid) {
        SpanWeightSpec s = spec;
        for (auto& e : s.entries) e.weight = g;
        auto w = map_span_weights(seq, s);
        auto q = run_query(seq, w, model, cfg, vocab, eval, sweep.query);
        SweepRow row;
        row.weight = g;
        if (!eval.positive.empty()) {
            std::vector<bool> rel;
            for (auto r : q.ranking.rows) rel.push_back(eval.positive[r]);
            row.ap = average_precision(rel);
            row.pk = precision_at_k(rel, sweep.k ? sweep.k : eval.positives());
        }
        for (const auto& c : q.curves) row.auc.push_back(c.auc);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::string>& labels) {
    std::ostringstream ss;
    ss << std::setprecision(10) << "weight,ap,p_k";
    for (const auto& l : labels) ss << ",\"auc[" << l << "]\"";
    ss << '\n';
    for (const auto& r : rows) {
        ss << r.weight << ',';
        if (r.ap) ss << *r.ap;
        ss << ',';
        if (r.pk) ss << *r.pk;
        for (double a : r.auc) ss << ',' << a;
        ss << '\n';
    }
    return ss.str();
}

std::string curves_csv(const std::vector<CategoryCurve>& curves) {
    std::ostringstream ss;
    ss << std::setprecision(10) << "category,label,n,f\n";
    for (const auto& c : curves) {
        for (std::size_t n = 0; n < c.f.size(); ++n) {
            ss << c.category << ",\"" << c.label << "\"," << n + 1 << ',' << c.f[n] << '\n';
        }
    }
    return ss.str();
}

}  // namespace tokweight
