#include "tokweight/fixtures.hpp"

#include <climits>
#include <cmath>
#include <map>
#include <set>

#include "tokweight/error.hpp"
#include "tokweight/random.hpp"

namespace tokweight {

namespace {

const std::string kEow = "</w>";

// n orthonormal rows of length m, Gram-Schmidt on Gaussian draws. With
// zero_mean every row is also orthogonal to the constant vector.
std::vector<std::vector<double>> orthonormal_rows(Rng& rng, std::size_t n, std::size_t m, bool zero_mean = false) {
    const std::size_t skip = zero_mean ? 1 : 0;
    if (n + skip > m) throw Error(ErrorKind::InvalidArgument, "cannot fit that many orthonormal rows");
    std::vector<std::vector<double>> rows;
    if (zero_mean) rows.emplace_back(m, 1.0 / std::sqrt(static_cast<double>(m)));
    while (rows.size() < n + skip) {
        std::vector<double> v(m);
        for (auto& x : v) x = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& r : rows) {
                const double p = dot(v.data(), r.data(), m);
                for (std::size_t i = 0; i < m; ++i) v[i] -= p * r[i];
            }
        }
        const double nv = l2_norm(v);
        if (nv < 1e-8) continue;
        for (auto& x : v) x /= nv;
        rows.push_back(std::move(v));
    }
    rows.erase(rows.begin(), rows.begin() + static_cast<long>(skip));
    return rows;
}

void fill_normal(Rng& rng, Matrix<float>& m, double stddev) {
    for (auto& x : m.data) x = static_cast<float>(rng.normal() * stddev);
}

void add_normal(Rng& rng, Matrix<float>& m, double stddev) {
    for (auto& x : m.data) x += static_cast<float>(rng.normal() * stddev);
}

std::vector<float> filled(std::size_t n, float v) { return std::vector<float>(n, v); }

BlockParams<float> random_block(Rng& rng, int D, int M) {
    BlockParams<float> b;
    const auto d = static_cast<std::size_t>(D), m = static_cast<std::size_t>(M);
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    b.ln1_g = filled(d, 1.0f);
    b.ln1_b = filled(d, 0.0f);
    b.ln2_g = filled(d, 1.0f);
    b.ln2_b = filled(d, 0.0f);
    for (auto* w : {&b.wq, &b.wk, &b.wv, &b.wo}) {
        *w = Matrix<float>(d, d);
        fill_normal(rng, *w, sd);
    }
    b.bq = b.bk = b.bv = b.bo = filled(d, 0.0f);
    b.w1 = Matrix<float>(d, m);
    fill_normal(rng, b.w1, sd);
    b.b1 = filled(m, 0.0f);
    b.w2 = Matrix<float>(m, d);
    fill_normal(rng, b.w2, 0.3 / std::sqrt(static_cast<double>(M)));
    b.b2 = filled(d, 0.0f);
    return b;
}

std::vector<double> embed(const EncoderModel& model, const Vocabulary& vocab, const std::string& text) {
    const auto seq = tokenize(text, vocab);
    const auto e = encode_plain<float>(seq.ids, model, model.config);
    return normalized(cast_vector<double>(e.vector));
}

std::vector<double> diff(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& b : basis) {
        const double p = dot(v.data(), b.data(), v.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
}

// Adds the Gram-Schmidt residual of v to basis and returns it.
std::vector<double> extend_basis(std::vector<std::vector<double>>& basis, std::vector<double> v) {
    project_out(v, basis);
    v = normalized(v);
    basis.push_back(v);
    return v;
}

}  // namespace

const std::vector<std::string>& fixture_words() {
    static const std::vector<std::string> words = {
        "a",     "photo",   "of",      "person", "woman", "man",  "with",  "blonde", "brown",
        "hair",  "wearing", "eyeglasses", "nothing", "bangs", "smiling", "hat", "bird", "red",
        "blue",  "striped", "spotted", "wings", "sks",  "pll",  "ucd",   "cat",    "dog",
        "green", "small",   "the",     "that",  "are"};
    return words;
}

Vocabulary make_word_vocabulary(const std::vector<std::string>& words, int context_length) {
    std::unordered_map<std::string, int> ids;
    std::vector<std::pair<std::string, std::string>> merges;
    std::map<std::pair<std::string, std::string>, int> rank;
    auto add_token = [&](const std::string& t) {
        if (!ids.count(t)) ids.emplace(t, static_cast<int>(ids.size()));
    };
    // Lowercase ASCII words only, so byte symbols are the characters themselves.
    for (int c = 33; c < 127; ++c) add_token(std::string(1, static_cast<char>(c)));
    for (int c = 33; c < 127; ++c) add_token(std::string(1, static_cast<char>(c)) + kEow);

    for (const auto& word : words) {
        if (word.empty()) throw Error(ErrorKind::InvalidArgument, "empty word");
        for (char ch : word) {
            if (ch < 'a' || ch > 'z') throw Error(ErrorKind::InvalidArgument, "fixture words must be a-z: " + word);
        }
        std::vector<std::string> syms;
        for (char ch : word) syms.emplace_back(1, ch);
        syms.back() += kEow;
        // Apply the merges learned so far, then join what is left from the left.
        while (syms.size() > 1) {
            int best = INT_MAX;
            std::size_t at = 0;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = rank.find({syms[i], syms[i + 1]});
                if (it != rank.end() && it->second < best) {
                    best = it->second;
                    at = i;
                }
            }
            if (best == INT_MAX) break;
            syms[at] += syms[at + 1];
            syms.erase(syms.begin() + static_cast<long>(at) + 1);
        }
        while (syms.size() > 1) {
            rank.emplace(std::make_pair(syms[0], syms[1]), static_cast<int>(merges.size()));
            merges.emplace_back(syms[0], syms[1]);
            syms[0] += syms[1];
            syms.erase(syms.begin() + 1);
            add_token(syms[0]);
        }
        add_token(syms[0]);
    }
    add_token("<|startoftext|>");
    add_token("<|endoftext|>");
    auto vocab = make_vocabulary(std::move(ids), std::move(merges), context_length);
    for (const auto& word : words) {
        const auto seq = tokenize(word, vocab);
        if (seq.n != 1) throw Error(ErrorKind::InvalidArgument, "word does not map to one token: " + word);
    }
    return vocab;
}

EncoderModel make_random_model(const EncoderConfig& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    EncoderModel m;
    m.config = arch;
    const auto D = static_cast<std::size_t>(arch.model_dim);
    m.token_embedding = Matrix<float>(static_cast<std::size_t>(arch.vocab_size), D);
    fill_normal(rng, m.token_embedding, 1.0);
    m.positional_embedding = Matrix<float>(static_cast<std::size_t>(arch.context_length), D);
    fill_normal(rng, m.positional_embedding, 0.1);
    for (int b = 0; b < arch.num_blocks; ++b) m.blocks.push_back(random_block(rng, arch.model_dim, arch.mlp_dim));
    m.lnf_g = filled(D, 1.0f);
    m.lnf_b = filled(D, 0.0f);
    m.text_projection = Matrix<float>(D, static_cast<std::size_t>(arch.projection_dim));
    fill_normal(rng, m.text_projection, 1.0 / std::sqrt(static_cast<double>(D)));
    m.logit_scale = std::log(100.0);
    m.validate();
    return m;
}

EncoderModel make_semantic_model(const Vocabulary& vocab, const std::vector<std::string>& words,
                                 const SemanticModelOptions& o) {
    const int D = o.model_dim, H = o.num_heads, ctx = o.context_length, tok = o.token_dims;
    if (D % H != 0 || tok + ctx != D) {
        throw Error(ErrorKind::InvalidArgument, "token_dims + context_length must equal model_dim");
    }
    const int dh = D / H;
    if (ctx > dh) throw Error(ErrorKind::InvalidArgument, "context_length must not exceed head dim");
    if (vocab.context_length > ctx) throw Error(ErrorKind::InvalidArgument, "vocabulary context is too long");

    EncoderConfig cfg;
    cfg.num_blocks = o.num_blocks;
    cfg.model_dim = D;
    cfg.num_heads = H;
    cfg.mlp_dim = 4 * D;
    cfg.projection_dim = D;
    cfg.context_length = ctx;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.reweight_start_block = o.reweight_start_block;
    EncoderModel m = make_random_model(cfg, o.seed);

    Rng rng(o.seed + 11);
    const auto uD = static_cast<std::size_t>(D), utok = static_cast<std::size_t>(tok);
    const float emb_scale = static_cast<float>(std::sqrt(D / 2.0));

    std::vector<int> word_ids = {vocab.sos_id, vocab.eos_id};
    for (const auto& w : words) word_ids.push_back(vocab.id(w + vocab.end_of_word));
    std::set<int> uniq(word_ids.begin(), word_ids.end());
    if (uniq.size() >= utok) throw Error(ErrorKind::InvalidArgument, "too many words for the token subspace");
    const auto basis = orthonormal_rows(rng, uniq.size(), utok, true);
    m.token_embedding = Matrix<float>(vocab.size(), uD);
    for (std::size_t r = 0; r < vocab.size(); ++r) {
        for (std::size_t c = 0; c < utok; ++c) {
            m.token_embedding(r, c) = static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(tok))) * emb_scale;
        }
    }
    std::size_t k = 0;
    for (int id : uniq) {
        for (std::size_t c = 0; c < utok; ++c) m.token_embedding(static_cast<std::size_t>(id), c) = static_cast<float>(basis[k][c]) * emb_scale;
        ++k;
    }
    m.positional_embedding = Matrix<float>(static_cast<std::size_t>(ctx), uD);
    for (int p = 0; p < ctx; ++p) m.positional_embedding(static_cast<std::size_t>(p), utok + static_cast<std::size_t>(p)) = emb_scale;

    const double noise = o.value_noise / std::sqrt(static_cast<double>(D));
    for (int l = 0; l < o.num_blocks; ++l) {
        auto& b = m.blocks[static_cast<std::size_t>(l)];
        b.wq = Matrix<float>(uD, uD);
        b.wk = Matrix<float>(uD, uD);
        if (l == 0) {
            // Query at position p matches the key at position p - 1 (position 0 matches itself).
            for (int h = 0; h < H; ++h) {
                const auto R = orthonormal_rows(rng, static_cast<std::size_t>(ctx), static_cast<std::size_t>(dh));
                for (int p = 0; p < ctx; ++p) {
                    const int src = p == 0 ? 0 : p - 1;
                    for (int c = 0; c < dh; ++c) {
                        b.wk(utok + p, static_cast<std::size_t>(h * dh + c)) = static_cast<float>(R[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)]);
                        b.wq(utok + p, static_cast<std::size_t>(h * dh + c)) =
                            static_cast<float>(R[static_cast<std::size_t>(src)][static_cast<std::size_t>(c)] * o.prev_token_gain);
                    }
                }
            }
        } else {
            fill_normal(rng, b.wq, o.qk_scale / std::sqrt(static_cast<double>(D)));
            fill_normal(rng, b.wk, o.qk_scale / std::sqrt(static_cast<double>(D)));
        }
        b.wv = Matrix<float>(uD, uD);
        for (std::size_t i = 0; i < utok; ++i) b.wv(i, i) = 1.0f;
        add_normal(rng, b.wv, noise);
        b.wo = Matrix<float>(uD, uD);
        for (std::size_t i = 0; i < uD; ++i) b.wo(i, i) = 1.0f;
        add_normal(rng, b.wo, noise);
        fill_normal(rng, b.w2, o.mlp_scale / std::sqrt(4.0 * D));
    }
    const auto proj = orthonormal_rows(rng, uD, uD);
    for (std::size_t r = 0; r < uD; ++r) {
        for (std::size_t c = 0; c < uD; ++c) m.text_projection(r, c) = static_cast<float>(proj[r][c]);
    }

    // Attention sink: every query in blocks >= 2 shares a component that only
    // the key at position 0 carries.
    Rng sink_rng(o.seed + 77);
    for (int l = 1; l < o.num_blocks; ++l) {
        auto& b = m.blocks[static_cast<std::size_t>(l)];
        for (int h = 0; h < H; ++h) {
            std::vector<double> c(static_cast<std::size_t>(dh));
            for (auto& x : c) x = sink_rng.normal();
            c = normalized(c);
            for (int j = 0; j < dh; ++j) {
                const auto col = static_cast<std::size_t>(h * dh + j);
                for (int p = 0; p < ctx; ++p) b.wq(utok + p, col) += static_cast<float>(c[static_cast<std::size_t>(j)]);
                b.wk(utok, col) += static_cast<float>(o.sink * c[static_cast<std::size_t>(j)]);
            }
        }
    }
    m.validate();
    return m;
}

SyntheticStore make_synthetic_store(const EncoderModel& model, const Vocabulary& vocab,
                                    const SyntheticStoreOptions& o) {
    SyntheticStore out;
    out.prompt = "a photo of a woman with blonde hair wearing eyeglasses";
    out.span = "with blonde hair";
    out.target_attribute = "blonde";
    out.prompt_category = 7;
    out.contrast_category = 5;
    out.target_category = 3;  // female, blonde, no eyeglasses

    const auto g = embed(model, vocab, "a photo of a person");
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"a photo of a woman", "a photo of a man"},
        {"a photo of a person with blonde hair", "a photo of a person with brown hair"},
        {"a photo of a person wearing eyeglasses", "a photo of a person wearing nothing"}};
    const std::vector<std::string> names = {"female", "blonde", "eyeglasses"};
    std::vector<std::vector<double>> basis = {g};
    std::vector<std::vector<double>> dirs;
    for (const auto& [pos, neg] : pairs) {
        dirs.push_back(extend_basis(basis, diff(embed(model, vocab, pos), embed(model, vocab, neg))));
    }

    const std::size_t dim = g.size();
    Rng rng(o.seed + 100);
    std::vector<std::vector<double>> noise(o.per_category, std::vector<double>(dim));
    for (auto& e : noise) {
        for (auto& x : e) x = rng.normal() / std::sqrt(static_cast<double>(dim));
        project_out(e, basis);
    }

    const std::size_t n = 8 * o.per_category;
    out.store.id = "synthetic-people";
    out.store.embeddings = Matrix<float>(n, dim);
    out.attributes.names = names;
    for (int c = 0; c < 8; ++c) {
        std::vector<double> mean = g;
        for (std::size_t a = 0; a < 3; ++a) {
            const double s = ((c >> a) & 1) ? o.attribute_scale : -o.attribute_scale;
            for (std::size_t i = 0; i < dim; ++i) mean[i] += s * dirs[a][i];
        }
        mean = normalized(mean);
        for (std::size_t k = 0; k < o.per_category; ++k) {
            std::vector<double> x(dim);
            for (std::size_t i = 0; i < dim; ++i) x[i] = mean[i] + o.noise * noise[k][i];
            x = normalized(x);
            const std::size_t row = static_cast<std::size_t>(c) * o.per_category + k;
            for (std::size_t i = 0; i < dim; ++i) out.store.embeddings(row, i) = static_cast<float>(x[i]);
            out.store.item_ids.push_back("p" + std::to_string(c) + "-" + std::to_string(k));
            out.store.thumbnails.emplace_back();
            out.attributes.values.push_back({static_cast<std::uint8_t>(c & 1), static_cast<std::uint8_t>((c >> 1) & 1),
                                             static_cast<std::uint8_t>((c >> 2) & 1)});
        }
    }
    return out;
}

FewShotTask make_fewshot_task(const EncoderModel& model, const Vocabulary& vocab, const FewShotOptions& o) {
    FewShotTask task;
    Rng rng(o.seed + 500);
    std::string suffix;
    static const char* rare[] = {"sks", "pll", "ucd"};
    for (int i = 0; i < o.rare_tokens; ++i) suffix += std::string(" ") + rare[rng.index(3)];

    // The pattern word comes last so no other content token sits right after it.
    const std::vector<std::string> prompts = {"a photo of a red bird with wings that are striped",
                                              "a photo of a blue bird with wings that are spotted"};
    task.discriminative = {"striped", "spotted"};
    for (int c = 0; c < 2; ++c) {
        ClassPromptSet set;
        set.label = c;
        set.name = c == 0 ? "striped" : "spotted";
        set.prompts.push_back(make_prompt(prompts[static_cast<std::size_t>(c)] + suffix, vocab));
        task.sets.push_back(std::move(set));
    }

    const auto g = embed(model, vocab, "a photo of a bird");
    std::vector<std::vector<double>> basis = {g};
    const auto pattern = extend_basis(basis, diff(embed(model, vocab, "a photo of a bird with wings that are striped"),
                                                  embed(model, vocab, "a photo of a bird with wings that are spotted")));
    const auto colour =
        extend_basis(basis, diff(embed(model, vocab, "a photo of a red bird"), embed(model, vocab, "a photo of a blue bird")));
    const std::size_t dim = g.size();

    // Image draws depend only on the seed, not on the prompt suffix.
    Rng img(o.seed + 900);
    auto draw = [&](int per_class) {
        FewShotBatch batch;
        batch.images = Matrix<double>(static_cast<std::size_t>(2 * per_class), dim);
        for (int c = 0; c < 2; ++c) {
            for (int k = 0; k < per_class; ++k) {
                const double sp = c == 0 ? o.pattern_scale : -o.pattern_scale;
                const double sc = img.uniform() < 0.5 ? o.colour_scale : -o.colour_scale;
                std::vector<double> x(dim);
                for (std::size_t i = 0; i < dim; ++i) {
                    x[i] = g[i] + sp * pattern[i] + sc * colour[i] + o.noise * img.normal() / std::sqrt(static_cast<double>(dim));
                }
                x = normalized(x);
                const std::size_t row = static_cast<std::size_t>(c * per_class + k);
                std::copy(x.begin(), x.end(), batch.images.row(row));
                batch.labels.push_back(c);
            }
        }
        return batch;
    };
    task.train = draw(o.shots);
    task.test = draw(o.test_per_class);
    return task;
}

std::string random_prompt(std::uint64_t seed, int max_words) {
    Rng rng(seed);
    const auto& words = fixture_words();
    const int n = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(std::max(1, max_words))));
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += words[rng.index(words.size())];
    }
    return out;
}

}  // namespace tokweight
