#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tokweight/error.hpp"
#include "tokweight/tokenizer.hpp"

namespace tokweight {

namespace {

ByteSpan resolve_entry(const std::string& source, const SpanEntry& entry) {
    if (entry.range) {
        auto [b, e] = *entry.range;
        if (b >= e || e > source.size()) {
            throw Error(ErrorKind::SpanNotFound, "byte range [" + std::to_string(b) + ", " + std::to_string(e) +
                                                     ") outside prompt");
        }
        if (entry.text && source.compare(b, e - b, *entry.text) != 0) {
            throw Error(ErrorKind::SpanNotFound, "byte range does not contain \"" + *entry.text + "\"");
        }
        return *entry.range;
    }
    if (!entry.text || entry.text->empty()) throw Error(ErrorKind::SpanNotFound, "span entry has no text or range");
    const std::string& needle = *entry.text;
    std::size_t first = source.find(needle);
    if (first == std::string::npos) throw Error(ErrorKind::SpanNotFound, "\"" + needle + "\" not in prompt");
    if (source.find(needle, first + 1) != std::string::npos) {
        throw Error(ErrorKind::AmbiguousSpan, "\"" + needle + "\" occurs more than once; give a byte range");
    }
    return {first, first + needle.size()};
}

}  // namespace

TokenWeights map_span_weights(const TokenSequence& seq, const SpanWeightSpec& spec) {
    if (!(spec.default_weight >= 0.0)) throw Error(ErrorKind::InvalidArgument, "default weight must be >= 0");
    TokenWeights w = TokenWeights::ones(seq.size());
    for (std::size_t i = 0; i < seq.n; ++i) w.values[i + 1] = spec.default_weight;

    std::vector<std::pair<ByteSpan, double>> resolved;
    for (const auto& entry : spec.entries) {
        if (!(entry.weight >= 0.0)) throw Error(ErrorKind::InvalidArgument, "span weights must be >= 0");
        resolved.emplace_back(resolve_entry(seq.source, entry), entry.weight);
    }
    auto sorted = resolved;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].first.first < sorted[i - 1].first.second) {
            throw Error(ErrorKind::OverlapError, "span entries overlap at byte " + std::to_string(sorted[i].first.first));
        }
    }
    for (const auto& [span, weight] : resolved) {
        bool hit = false;
        for (std::size_t i = 0; i < seq.n; ++i) {
            const auto& cs = seq.char_spans[i];
            if (cs.first < span.second && span.first < cs.second) {
                w.values[i + 1] = weight;
                hit = true;
            }
        }
        if (!hit) {
            throw Error(ErrorKind::SpanNotFound, "span [" + std::to_string(span.first) + ", " +
                                                     std::to_string(span.second) + ") covers no token");
        }
    }
    return w;
}

SpanWeightSpec parse_span_spec(const std::string& json_text) {
    SpanWeightSpec spec;
    try {
        auto j = nlohmann::json::parse(json_text);
        spec.default_weight = j.value("default", 1.0);
        if (j.contains("entries")) {
            for (const auto& e : j.at("entries")) {
                SpanEntry entry;
                if (e.contains("text")) entry.text = e.at("text").get<std::string>();
                if (e.contains("range")) {
                    auto r = e.at("range");
                    entry.range = ByteSpan{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
                }
                entry.weight = e.at("weight").get<double>();
                spec.entries.push_back(std::move(entry));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("span spec: ") + e.what());
    }
    return spec;
}

SpanWeightSpec load_span_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_span_spec(ss.str());
}

}  // namespace tokweight
