#include "tokweight/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tokweight/random.hpp"
#include "tokweight/safetensors.hpp"

namespace tokweight {

EmbeddingStore EmbeddingStore::subset(const std::vector<std::size_t>& rows) const {
    EmbeddingStore s;
    s.id = id;
    s.embeddings = Matrix<float>(rows.size(), embeddings.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= size()) throw Error(ErrorKind::InvalidArgument, "row outside store");
        std::copy(embeddings.row(rows[i]), embeddings.row(rows[i]) + embeddings.cols, s.embeddings.row(i));
        s.item_ids.push_back(item_ids[rows[i]]);
        s.thumbnails.push_back(thumbnails[rows[i]]);
    }
    return s;
}

std::size_t AttributeTable::attribute_index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorKind::UnknownAttribute, name);
    return static_cast<std::size_t>(it - names.begin());
}

std::vector<ItemMetadata> parse_metadata_jsonl(const std::string& text) {
    std::vector<ItemMetadata> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            ItemMetadata m;
            m.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            if (j.contains("attributes")) {
                for (auto it = j.at("attributes").begin(); it != j.at("attributes").end(); ++it) {
                    const auto& v = it.value();
                    bool present = v.is_boolean() ? v.get<bool>() : v.get<double>() > 0.0;
                    m.attributes.emplace_back(it.key(), present);
                }
            }
            m.thumbnail = j.value("thumbnail", "");
            out.push_back(std::move(m));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, "metadata line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

IngestResult ingest_rows(Matrix<float> embeddings, const std::vector<ItemMetadata>& metadata) {
    if (embeddings.rows != metadata.size()) {
        throw Error(ErrorKind::CountMismatch, std::to_string(embeddings.rows) + " embeddings but " +
                                                  std::to_string(metadata.size()) + " metadata rows");
    }
    if (embeddings.cols == 0) throw Error(ErrorKind::DimensionMismatch, "embeddings have zero width");
    IngestResult r;
    r.report.items = embeddings.rows;
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        float* row = embeddings.row(i);
        double n2 = 0.0;
        for (std::size_t c = 0; c < embeddings.cols; ++c) {
            if (!std::isfinite(row[c])) throw Error(ErrorKind::NonFinite, "embedding row " + std::to_string(i));
            n2 += static_cast<double>(row[c]) * row[c];
        }
        const double n = std::sqrt(n2);
        if (!(n > 0.0)) throw Error(ErrorKind::NonFinite, "embedding row " + std::to_string(i) + " is zero");
        const double dev = std::abs(n - 1.0);
        r.report.max_norm_deviation = std::max(r.report.max_norm_deviation, dev);
        if (dev > 1e-5) ++r.report.renormalized;
        for (std::size_t c = 0; c < embeddings.cols; ++c) row[c] = static_cast<float>(row[c] / n);
    }
    r.store.embeddings = std::move(embeddings);

    std::vector<std::string> seen_ids;
    for (const auto& m : metadata) {
        r.store.item_ids.push_back(m.id);
        r.store.thumbnails.push_back(m.thumbnail);
    }
    seen_ids = r.store.item_ids;
    std::sort(seen_ids.begin(), seen_ids.end());
    if (std::adjacent_find(seen_ids.begin(), seen_ids.end()) != seen_ids.end()) {
        throw Error(ErrorKind::InvalidArgument, "item ids are not unique");
    }

    if (!metadata.empty()) {
        for (const auto& [name, v] : metadata.front().attributes) r.attributes.names.push_back(name);
    }
    for (const auto& m : metadata) {
        std::vector<std::uint8_t> row(r.attributes.names.size(), 0);
        if (m.attributes.size() != r.attributes.names.size()) {
            throw Error(ErrorKind::DimensionMismatch, "item " + m.id + " has a different attribute set");
        }
        for (const auto& [name, v] : m.attributes) {
            auto it = std::find(r.attributes.names.begin(), r.attributes.names.end(), name);
            if (it == r.attributes.names.end()) {
                throw Error(ErrorKind::DimensionMismatch, "item " + m.id + " has unexpected attribute " + name);
            }
            row[static_cast<std::size_t>(it - r.attributes.names.begin())] = v ? 1 : 0;
        }
        r.attributes.values.push_back(std::move(row));
    }
    return r;
}

IngestResult ingest(const std::string& embeddings_path, const std::string& metadata_path) {
    TensorFile file(embeddings_path);
    const auto& info = file.manifest().at("embeddings");
    if (info.shape.size() != 2) throw Error(ErrorKind::DimensionMismatch, "embeddings tensor must be 2-D");
    Matrix<float> emb(info.shape[0], info.shape[1]);
    emb.data = file.read_f32("embeddings");
    std::ifstream in(metadata_path);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + metadata_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    auto r = ingest_rows(std::move(emb), parse_metadata_jsonl(ss.str()));
    auto slash = embeddings_path.find_last_of('/');
    std::string base = slash == std::string::npos ? embeddings_path : embeddings_path.substr(slash + 1);
    auto dot = base.find('.');
    r.store.id = dot == std::string::npos ? base : base.substr(0, dot);
    return r;
}

void write_store(const EmbeddingStore& store, const AttributeTable& attributes, const std::string& embeddings_path,
                 const std::string& metadata_path) {
    std::map<std::string, TensorData> t;
    t["embeddings"] = TensorData{{store.embeddings.rows, store.embeddings.cols}, store.embeddings.data};
    write_tensor_file(embeddings_path, t, {{"format", "tokweight-store"}});
    std::string out;
    for (std::size_t i = 0; i < store.size(); ++i) {
        nlohmann::ordered_json j;
        j["id"] = store.item_ids[i];
        nlohmann::ordered_json a = nlohmann::ordered_json::object();
        for (std::size_t k = 0; k < attributes.names.size(); ++k) a[attributes.names[k]] = attributes.values[i][k];
        j["attributes"] = a;
        if (!store.thumbnails[i].empty()) j["thumbnail"] = store.thumbnails[i];
        out += j.dump() + "\n";
    }
    write_file_atomic(metadata_path, out);
}

std::string category_label(const std::vector<std::string>& attrs, int category) {
    std::string s;
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (i) s += ',';
        s += ((category >> i) & 1) ? '+' : '-';
        s += attrs[i];
    }
    return s;
}

CategoryPartition partition(const AttributeTable& table, const std::vector<std::string>& attrs,
                            std::optional<std::size_t> sample_per_category, std::uint64_t seed, bool allow_empty) {
    if (attrs.empty() || attrs.size() > 16) throw Error(ErrorKind::InvalidArgument, "choose between 1 and 16 attributes");
    std::vector<std::size_t> idx;
    for (const auto& a : attrs) idx.push_back(table.attribute_index(a));
    const std::size_t K = std::size_t{1} << attrs.size();
    std::vector<std::vector<std::size_t>> members(K);
    for (std::size_t i = 0; i < table.values.size(); ++i) {
        int c = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) c |= table.values[i][idx[k]] ? (1 << k) : 0;
        members[static_cast<std::size_t>(c)].push_back(i);
    }
    CategoryPartition p;
    p.attributes = attrs;
    for (std::size_t c = 0; c < K; ++c) p.labels.push_back(category_label(attrs, static_cast<int>(c)));
    Rng rng(seed);
    std::vector<std::pair<std::size_t, int>> chosen;
    for (std::size_t c = 0; c < K; ++c) {
        auto& m = members[c];
        if (sample_per_category) {
            if (m.empty() && !allow_empty) throw Error(ErrorKind::EmptyCategory, p.labels[c]);
            rng.shuffle(m);
            if (m.size() > *sample_per_category) m.resize(*sample_per_category);
        }
        for (auto i : m) chosen.emplace_back(i, static_cast<int>(c));
    }
    std::sort(chosen.begin(), chosen.end());
    for (const auto& [i, c] : chosen) {
        p.items.push_back(i);
        p.category.push_back(c);
    }
    return p;
}

}  // namespace tokweight
