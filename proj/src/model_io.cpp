#include "tokweight/model_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tokweight {

namespace {

const char* kBlockParams[] = {"ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bq", "bk",
                              "bv",    "bo",    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"};

std::string expand(const std::string& pattern, int block) {
    std::string out = pattern;
    const std::string key = "{i}";
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
        out.replace(pos, key.size(), std::to_string(block));
    }
    return out;
}

std::string block_key(const std::string& param) { return "blocks.{i}." + param; }

// Source descriptor for an internal name such as "blocks.3.wq".
std::optional<TensorSource> source_for(const NameMap& map, const std::string& internal) {
    auto direct = map.tensors.find(internal);
    if (direct != map.tensors.end()) return direct->second;
    if (internal.rfind("blocks.", 0) == 0) {
        auto dot = internal.find('.', 7);
        int block = std::stoi(internal.substr(7, dot - 7));
        auto it = map.tensors.find("blocks.{i}." + internal.substr(dot + 1));
        if (it != map.tensors.end()) {
            TensorSource s = it->second;
            s.name = expand(s.name, block);
            return s;
        }
    }
    return std::nullopt;
}

// Shape of the internal tensor implied by a source descriptor.
std::vector<std::size_t> logical_shape(const TensorInfo& info, const TensorSource& src) {
    std::vector<std::size_t> shape = info.shape;
    if (src.parts > 1 && !shape.empty()) shape[0] /= static_cast<std::size_t>(src.parts);
    if (src.transpose && shape.size() == 2) std::swap(shape[0], shape[1]);
    return shape;
}

int count_blocks(const TensorManifest& manifest, const NameMap& map) {
    int n = 0;
    while (true) {
        auto s = source_for(map, "blocks." + std::to_string(n) + ".wq");
        if (!s || !manifest.has(s->name)) break;
        ++n;
    }
    return n;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<std::string> internal_tensor_names(int num_blocks) {
    std::vector<std::string> names = {"token_embedding", "positional_embedding"};
    for (int b = 0; b < num_blocks; ++b) {
        for (const char* p : kBlockParams) names.push_back("blocks." + std::to_string(b) + "." + p);
    }
    names.insert(names.end(), {"lnf_g", "lnf_b", "text_projection"});
    return names;
}

NameMap native_name_map() {
    NameMap m;
    m.family = "native";
    for (const char* n : {"token_embedding", "positional_embedding", "lnf_g", "lnf_b", "text_projection"}) {
        m.tensors[n] = TensorSource{n};
    }
    for (const char* p : kBlockParams) m.tensors[block_key(p)] = TensorSource{block_key(p)};
    m.logit_scale = "logit_scale";
    return m;
}

NameMap parse_name_map(const std::string& json_text) {
    NameMap m;
    try {
        auto j = nlohmann::json::parse(json_text);
        m.family = j.value("family", "");
        for (auto it = j.at("tensors").begin(); it != j.at("tensors").end(); ++it) {
            TensorSource s;
            if (it.value().is_string()) {
                s.name = it.value().get<std::string>();
            } else {
                s.name = it.value().at("name").get<std::string>();
                s.transpose = it.value().value("transpose", false);
                if (it.value().contains("slice")) {
                    s.part = it.value().at("slice").at("part").get<int>();
                    s.parts = it.value().at("slice").at("parts").get<int>();
                }
            }
            if (s.parts < 1 || s.part < 0 || s.part >= s.parts) {
                throw Error(ErrorKind::Parse, "name map: bad slice for " + it.key());
            }
            m.tensors[it.key()] = s;
        }
        if (j.contains("num_heads")) m.num_heads = j.at("num_heads").get<int>();
        if (j.contains("head_dim")) m.head_dim = j.at("head_dim").get<int>();
        if (j.contains("activation")) m.activation = parse_activation(j.at("activation").get<std::string>());
        if (j.contains("logit_scale")) m.logit_scale = j.at("logit_scale").get<std::string>();
        if (j.contains("ignore_prefixes")) m.ignore_prefixes = j.at("ignore_prefixes").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("name map: ") + e.what());
    }
    return m;
}

NameMap load_name_map(const std::string& path) { return parse_name_map(read_text(path)); }

EncoderConfig infer_config(const TensorManifest& manifest, const NameMap& map) {
    EncoderConfig cfg;
    const int L = count_blocks(manifest, map);
    if (L == 0) throw Error(ErrorKind::MissingTensor, "no transformer blocks found (blocks.0.wq)");

    std::vector<std::string> missing;
    auto shape_of = [&](const std::string& internal) -> std::vector<std::size_t> {
        auto s = source_for(map, internal);
        if (!s || !manifest.has(s->name)) {
            missing.push_back(s ? s->name + " (" + internal + ")" : internal);
            return {};
        }
        return logical_shape(manifest.at(s->name), *s);
    };
    auto tok = shape_of("token_embedding");
    auto pos = shape_of("positional_embedding");
    auto w1 = shape_of("blocks.0.w1");
    auto proj = shape_of("text_projection");
    if (!missing.empty()) {
        std::string msg;
        for (const auto& m : missing) msg += (msg.empty() ? "" : ", ") + m;
        throw Error(ErrorKind::MissingTensor, msg);
    }
    if (tok.size() != 2 || pos.size() != 2 || w1.size() != 2 || proj.size() != 2) {
        throw Error(ErrorKind::ShapeMismatch, "embedding, MLP and projection tensors must be 2-D");
    }
    cfg.num_blocks = L;
    cfg.vocab_size = static_cast<int>(tok[0]);
    cfg.model_dim = static_cast<int>(tok[1]);
    cfg.context_length = static_cast<int>(pos[0]);
    cfg.mlp_dim = static_cast<int>(w1[1]);
    cfg.projection_dim = static_cast<int>(proj[1]);
    if (map.num_heads) {
        cfg.num_heads = *map.num_heads;
    } else if (map.head_dim) {
        cfg.num_heads = cfg.model_dim / *map.head_dim;
    } else if (manifest.metadata.count("num_heads")) {
        cfg.num_heads = std::stoi(manifest.metadata.at("num_heads"));
    } else {
        throw Error(ErrorKind::MissingTensor, "head count unknown: name map needs num_heads or head_dim");
    }
    if (map.activation) {
        cfg.activation = *map.activation;
    } else if (manifest.metadata.count("activation")) {
        cfg.activation = parse_activation(manifest.metadata.at("activation"));
    }
    if (manifest.metadata.count("ln_eps")) cfg.ln_eps = std::stod(manifest.metadata.at("ln_eps"));
    cfg.reweight_start_block = std::min(7, L + 1);
    if (manifest.metadata.count("reweight_start_block")) {
        cfg.reweight_start_block = std::stoi(manifest.metadata.at("reweight_start_block"));
    }
    cfg.validate();
    return cfg;
}

LoadedModel load_model(const std::string& path, const NameMap& map) {
    TensorFile file(path);
    const auto& manifest = file.manifest();
    LoadedModel out;
    out.config = infer_config(manifest, map);
    const auto& cfg = out.config;

    std::vector<std::string> missing;
    std::set<std::string> used;
    for (const auto& internal : internal_tensor_names(cfg.num_blocks)) {
        auto s = source_for(map, internal);
        if (!s || !manifest.has(s->name)) missing.push_back(s ? s->name + " (" + internal + ")" : internal);
    }
    if (!missing.empty()) {
        std::string msg;
        for (const auto& m : missing) msg += (msg.empty() ? "" : ", ") + m;
        throw Error(ErrorKind::MissingTensor, msg);
    }

    auto fetch = [&](const std::string& internal, std::vector<std::size_t> expect) -> std::vector<float> {
        auto src = *source_for(map, internal);
        const auto& info = manifest.at(src.name);
        used.insert(src.name);
        auto shape = logical_shape(info, src);
        if (shape.size() == 2 && expect.size() == 1 && shape[1] == 1) shape.pop_back();
        if (shape != expect) {
            std::string got, want;
            for (auto d : shape) got += std::to_string(d) + " ";
            for (auto d : expect) want += std::to_string(d) + " ";
            throw Error(ErrorKind::ShapeMismatch, internal + " from " + src.name + ": shape [" + got + "] expected [" +
                                                      want + "]");
        }
        auto raw = file.read_f32(src.name);
        if (src.parts > 1) {
            const std::size_t per = raw.size() / static_cast<std::size_t>(src.parts);
            raw = std::vector<float>(raw.begin() + static_cast<std::ptrdiff_t>(per * src.part),
                                     raw.begin() + static_cast<std::ptrdiff_t>(per * (src.part + 1)));
        }
        if (src.transpose && expect.size() == 2) {
            // stored [expect[1], expect[0]]
            std::vector<float> t(raw.size());
            for (std::size_t r = 0; r < expect[1]; ++r) {
                for (std::size_t c = 0; c < expect[0]; ++c) t[c * expect[1] + r] = raw[r * expect[0] + c];
            }
            raw.swap(t);
        }
        return raw;
    };
    auto mat = [&](const std::string& internal, std::size_t r, std::size_t c) {
        Matrix<float> m(r, c);
        m.data = fetch(internal, {r, c});
        return m;
    };
    auto vec = [&](const std::string& internal, std::size_t n) { return fetch(internal, {n}); };

    const auto D = static_cast<std::size_t>(cfg.model_dim), M = static_cast<std::size_t>(cfg.mlp_dim);
    auto& model = out.model;
    model.config = cfg;
    model.token_embedding = mat("token_embedding", cfg.vocab_size, D);
    model.positional_embedding = mat("positional_embedding", cfg.context_length, D);
    for (int b = 0; b < cfg.num_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        BlockParams<float> bp;
        bp.ln1_g = vec(p + "ln1_g", D);
        bp.ln1_b = vec(p + "ln1_b", D);
        bp.wq = mat(p + "wq", D, D);
        bp.wk = mat(p + "wk", D, D);
        bp.wv = mat(p + "wv", D, D);
        bp.wo = mat(p + "wo", D, D);
        bp.bq = vec(p + "bq", D);
        bp.bk = vec(p + "bk", D);
        bp.bv = vec(p + "bv", D);
        bp.bo = vec(p + "bo", D);
        bp.ln2_g = vec(p + "ln2_g", D);
        bp.ln2_b = vec(p + "ln2_b", D);
        bp.w1 = mat(p + "w1", D, M);
        bp.b1 = vec(p + "b1", M);
        bp.w2 = mat(p + "w2", M, D);
        bp.b2 = vec(p + "b2", D);
        model.blocks.push_back(std::move(bp));
    }
    model.lnf_g = vec("lnf_g", D);
    model.lnf_b = vec("lnf_b", D);
    model.text_projection = mat("text_projection", D, cfg.projection_dim);
    if (map.logit_scale && manifest.has(*map.logit_scale)) {
        used.insert(*map.logit_scale);
        auto v = file.read_f32(*map.logit_scale);
        if (v.size() == 1) model.logit_scale = v[0];
    }
    model.validate();

    std::size_t ignored = 0;
    for (const auto& [name, info] : manifest.tensors) {
        if (used.count(name)) continue;
        bool skip = false;
        for (const auto& pre : map.ignore_prefixes) skip = skip || name.rfind(pre, 0) == 0;
        if (skip) {
            ++ignored;
        } else {
            out.warnings.push_back("unused tensor " + name);
        }
    }
    if (ignored) out.warnings.push_back("ignored " + std::to_string(ignored) + " tensors from other towers");
    return out;
}

LoadedModel load_model(const std::string& path) { return load_model(path, native_name_map()); }

void save_model(const EncoderModel& model, const std::string& path) {
    model.validate();
    const auto& cfg = model.config;
    std::map<std::string, TensorData> t;
    auto put_m = [&](const std::string& n, const Matrix<float>& m) { t[n] = TensorData{{m.rows, m.cols}, m.data}; };
    auto put_v = [&](const std::string& n, const std::vector<float>& v) { t[n] = TensorData{{v.size()}, v}; };
    put_m("token_embedding", model.token_embedding);
    put_m("positional_embedding", model.positional_embedding);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& bp = model.blocks[b];
        const std::string p = "blocks." + std::to_string(b) + ".";
        put_v(p + "ln1_g", bp.ln1_g);
        put_v(p + "ln1_b", bp.ln1_b);
        put_m(p + "wq", bp.wq);
        put_m(p + "wk", bp.wk);
        put_m(p + "wv", bp.wv);
        put_m(p + "wo", bp.wo);
        put_v(p + "bq", bp.bq);
        put_v(p + "bk", bp.bk);
        put_v(p + "bv", bp.bv);
        put_v(p + "bo", bp.bo);
        put_v(p + "ln2_g", bp.ln2_g);
        put_v(p + "ln2_b", bp.ln2_b);
        put_m(p + "w1", bp.w1);
        put_v(p + "b1", bp.b1);
        put_m(p + "w2", bp.w2);
        put_v(p + "b2", bp.b2);
    }
    put_v("lnf_g", model.lnf_g);
    put_v("lnf_b", model.lnf_b);
    put_m("text_projection", model.text_projection);
    if (model.logit_scale) t["logit_scale"] = TensorData{{}, {static_cast<float>(*model.logit_scale)}};

    std::ostringstream eps;
    eps.precision(17);
    eps << cfg.ln_eps;
    std::map<std::string, std::string> meta = {
        {"format", "tokweight"},
        {"num_heads", std::to_string(cfg.num_heads)},
        {"activation", to_string(cfg.activation)},
        {"ln_eps", eps.str()},
        {"reweight_start_block", std::to_string(cfg.reweight_start_block)},
    };
    write_tensor_file(path, t, meta);
}

}  // namespace tokweight
