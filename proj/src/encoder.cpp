#include "tokweight/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <type_traits>

namespace tokweight {

const char* to_string(ReweightMode mode) {
    return mode == ReweightMode::SingleBlock ? "SingleBlock" : "FromBlockOnward";
}

ReweightMode parse_reweight_mode(const std::string& s) {
    if (s == "FromBlockOnward" || s == "from") return ReweightMode::FromBlockOnward;
    if (s == "SingleBlock" || s == "single") return ReweightMode::SingleBlock;
    throw Error(ErrorKind::InvalidArgument, "unknown reweight mode: " + s);
}

const char* to_string(Activation act) { return act == Activation::Gelu ? "gelu" : "quick_gelu"; }

Activation parse_activation(const std::string& s) {
    if (s == "quick_gelu") return Activation::QuickGelu;
    if (s == "gelu") return Activation::Gelu;
    throw Error(ErrorKind::InvalidArgument, "unknown activation: " + s);
}

void EncoderConfig::validate() const {
    if (num_blocks < 1 || model_dim < 1 || num_heads < 1 || mlp_dim < 1 || projection_dim < 1 ||
        context_length < 2 || vocab_size < 2) {
        throw Error(ErrorKind::InvalidArgument, "encoder dimensions must be positive");
    }
    if (model_dim % num_heads != 0) throw Error(ErrorKind::InvalidArgument, "model_dim not divisible by num_heads");
    if (reweight_start_block < 1 || reweight_start_block > num_blocks + 1) {
        throw Error(ErrorKind::InvalidArgument, "reweight_start_block must lie in [1, " +
                                                    std::to_string(num_blocks + 1) + "]");
    }
    if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
}

bool EncoderConfig::block_reweighted(int block) const {
    if (reweight_mode == ReweightMode::SingleBlock) return block == reweight_start_block;
    return block >= reweight_start_block;
}

template <class T>
template <class U>
BlockParams<U> BlockParams<T>::cast() const {
    BlockParams<U> b;
    b.ln1_g = cast_vector<U>(ln1_g);
    b.ln1_b = cast_vector<U>(ln1_b);
    b.wq = wq.template cast<U>();
    b.wk = wk.template cast<U>();
    b.wv = wv.template cast<U>();
    b.wo = wo.template cast<U>();
    b.bq = cast_vector<U>(bq);
    b.bk = cast_vector<U>(bk);
    b.bv = cast_vector<U>(bv);
    b.bo = cast_vector<U>(bo);
    b.ln2_g = cast_vector<U>(ln2_g);
    b.ln2_b = cast_vector<U>(ln2_b);
    b.w1 = w1.template cast<U>();
    b.b1 = cast_vector<U>(b1);
    b.w2 = w2.template cast<U>();
    b.b2 = cast_vector<U>(b2);
    return b;
}

template <class T>
template <class U>
EncoderModelT<U> EncoderModelT<T>::cast() const {
    EncoderModelT<U> m;
    m.config = config;
    m.token_embedding = token_embedding.template cast<U>();
    m.positional_embedding = positional_embedding.template cast<U>();
    for (const auto& b : blocks) m.blocks.push_back(b.template cast<U>());
    m.lnf_g = cast_vector<U>(lnf_g);
    m.lnf_b = cast_vector<U>(lnf_b);
    m.text_projection = text_projection.template cast<U>();
    m.logit_scale = logit_scale;
    return m;
}

namespace {

template <class T>
void check_matrix(const Matrix<T>& m, std::size_t r, std::size_t c, const std::string& name) {
    if (m.rows != r || m.cols != c || m.data.size() != r * c) {
        throw Error(ErrorKind::ShapeMismatch, name + " is [" + std::to_string(m.rows) + ", " + std::to_string(m.cols) +
                                                  "], expected [" + std::to_string(r) + ", " + std::to_string(c) + "]");
    }
    for (T x : m.data) {
        if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, name + " has non-finite values");
    }
}

template <class T>
void check_vector(const std::vector<T>& v, std::size_t n, const std::string& name) {
    if (v.size() != n) {
        throw Error(ErrorKind::ShapeMismatch, name + " has length " + std::to_string(v.size()) + ", expected " +
                                                  std::to_string(n));
    }
    for (T x : v) {
        if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, name + " has non-finite values");
    }
}

template <class T>
void fnv_mix(std::uint64_t& h, const std::vector<T>& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(T); ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
}

}  // namespace

template <class T>
void EncoderModelT<T>::validate() const {
    config.validate();
    const auto D = static_cast<std::size_t>(config.model_dim);
    const auto M = static_cast<std::size_t>(config.mlp_dim);
    check_matrix(token_embedding, config.vocab_size, D, "token_embedding");
    check_matrix(positional_embedding, config.context_length, D, "positional_embedding");
    if (blocks.size() != static_cast<std::size_t>(config.num_blocks)) {
        throw Error(ErrorKind::ShapeMismatch, "model has " + std::to_string(blocks.size()) + " blocks, config says " +
                                                  std::to_string(config.num_blocks));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        check_vector(b.ln1_g, D, p + "ln1_g");
        check_vector(b.ln1_b, D, p + "ln1_b");
        check_matrix(b.wq, D, D, p + "wq");
        check_matrix(b.wk, D, D, p + "wk");
        check_matrix(b.wv, D, D, p + "wv");
        check_matrix(b.wo, D, D, p + "wo");
        check_vector(b.bq, D, p + "bq");
        check_vector(b.bk, D, p + "bk");
        check_vector(b.bv, D, p + "bv");
        check_vector(b.bo, D, p + "bo");
        check_vector(b.ln2_g, D, p + "ln2_g");
        check_vector(b.ln2_b, D, p + "ln2_b");
        check_matrix(b.w1, D, M, p + "w1");
        check_vector(b.b1, M, p + "b1");
        check_matrix(b.w2, M, D, p + "w2");
        check_vector(b.b2, D, p + "b2");
    }
    check_vector(lnf_g, D, "lnf_g");
    check_vector(lnf_b, D, "lnf_b");
    check_matrix(text_projection, D, config.projection_dim, "text_projection");
}

template <class T>
std::uint64_t EncoderModelT<T>::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    fnv_mix(h, token_embedding.data);
    fnv_mix(h, positional_embedding.data);
    for (const auto& b : blocks) {
        for (const auto* v : {&b.ln1_g, &b.ln1_b, &b.bq, &b.bk, &b.bv, &b.bo, &b.ln2_g, &b.ln2_b, &b.b1, &b.b2}) {
            fnv_mix(h, *v);
        }
        for (const auto* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) fnv_mix(h, m->data);
    }
    fnv_mix(h, lnf_g);
    fnv_mix(h, lnf_b);
    fnv_mix(h, text_projection.data);
    return h;
}

namespace {

template <class T>
void layer_norm_rows(const Matrix<T>& x, const std::vector<T>& g, const std::vector<T>& b, double eps, Matrix<T>& y,
                     Matrix<T>* hat, std::vector<T>* rstd) {
    const std::size_t S = x.rows, D = x.cols;
    y = Matrix<T>(S, D);
    if (hat) *hat = Matrix<T>(S, D);
    if (rstd) rstd->assign(S, T(0));
    for (std::size_t r = 0; r < S; ++r) {
        const T* xr = x.row(r);
        T mean = T(0);
        for (std::size_t c = 0; c < D; ++c) mean += xr[c];
        mean /= static_cast<T>(D);
        T var = T(0);
        for (std::size_t c = 0; c < D; ++c) {
            T d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(D);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
        T* yr = y.row(r);
        for (std::size_t c = 0; c < D; ++c) {
            const T h = (xr[c] - mean) * rs;
            if (hat) (*hat)(r, c) = h;
            yr[c] = h * g[c] + b[c];
        }
        if (rstd) (*rstd)[r] = rs;
    }
}

template <class T>
T activate(T x, Activation act) {
    if (act == Activation::QuickGelu) return x / (T(1) + std::exp(T(-1.702) * x));
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

// Row softmax for one query; returns the normaliser. Keys with zero weight are
// excluded from the max and get exactly zero mass.
template <bool Weighted, class T>
T softmax_row(const T* s, const T* w, std::size_t n, T* e, T& mx) {
    mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        if constexpr (Weighted) {
            if (!(w[j] > T(0))) continue;
        }
        if (s[j] > mx) mx = s[j];
    }
    if (mx == -std::numeric_limits<T>::infinity()) throw Error(ErrorKind::DegenerateRow, "query row has no positive weight");
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
        if constexpr (Weighted) {
            e[j] = w[j] > T(0) ? w[j] * std::exp(s[j] - mx) : T(0);
        } else {
            e[j] = std::exp(s[j] - mx);
        }
        z += e[j];
    }
    return z;
}

// One attention head over rows of strided matrices. w == nullptr gives plain
// softmax; otherwise exponentials are multiplied by w before normalisation.
template <class T>
void attend_head(const T* q, const T* k, const T* v, std::size_t ld, std::size_t S, std::size_t dh, std::size_t dv,
                 std::size_t ldv, std::type_identity_t<const T*> w, bool causal, T scale, T* out, std::size_t ldo,
                 std::type_identity_t<T*> amap, std::type_identity_t<T*> logits_out, std::type_identity_t<T*> z_out,
                 std::type_identity_t<T*> max_out) {
    thread_local std::vector<T> s, e;
    s.resize(S);
    e.resize(S);
    for (std::size_t m = 0; m < S; ++m) {
        const std::size_t n_end = causal ? m + 1 : S;
        const T* qm = q + m * ld;
        for (std::size_t j = 0; j < n_end; ++j) {
            s[j] = dot(qm, k + j * ld, dh) * scale;
            if (!std::isfinite(s[j])) throw Error(ErrorKind::NonFinite, "attention logit overflow");
        }
        T mx;
        const T z = w ? softmax_row<true>(s.data(), w, n_end, e.data(), mx)
                      : softmax_row<false>(s.data(), w, n_end, e.data(), mx);
        T* om = out + m * ldo;
        for (std::size_t c = 0; c < dv; ++c) om[c] = T(0);
        const T inv = T(1) / z;
        for (std::size_t j = 0; j < n_end; ++j) {
            const T a = e[j] * inv;
            e[j] = a;
            const T* vj = v + j * ldv;
            for (std::size_t c = 0; c < dv; ++c) om[c] += a * vj[c];
        }
        if (amap) {
            T* ar = amap + m * S;
            for (std::size_t j = 0; j < S; ++j) ar[j] = j < n_end ? e[j] : T(0);
        }
        if (logits_out) {
            T* lr = logits_out + m * S;
            for (std::size_t j = 0; j < S; ++j) lr[j] = j < n_end ? s[j] : T(0);
        }
        if (z_out) z_out[m] = z;
        if (max_out) max_out[m] = mx;
    }
}

template <class T>
void embed(const std::vector<int>& ids, const EncoderModelT<T>& model, Matrix<T>& x) {
    const std::size_t S = ids.size(), D = static_cast<std::size_t>(model.config.model_dim);
    if (S < 2) throw Error(ErrorKind::ShapeMismatch, "sequence needs at least SOS and EOS");
    if (S > model.positional_embedding.rows) {
        throw Error(ErrorKind::OverLength, "sequence of " + std::to_string(S) + " exceeds context length " +
                                               std::to_string(model.positional_embedding.rows));
    }
    x = Matrix<T>(S, D);
    for (std::size_t i = 0; i < S; ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= model.token_embedding.rows) {
            throw Error(ErrorKind::ShapeMismatch, "token id " + std::to_string(ids[i]) + " outside embedding table");
        }
        const T* te = model.token_embedding.row(static_cast<std::size_t>(ids[i]));
        const T* pe = model.positional_embedding.row(i);
        T* xr = x.row(i);
        for (std::size_t c = 0; c < D; ++c) xr[c] = te[c] + pe[c];
    }
}

// Applies block `index` (0-based) to x in place.
template <class T>
void run_block(Matrix<T>& x, const BlockParams<T>& bp, const EncoderConfig& arch, std::type_identity_t<const T*> w,
               std::type_identity_t<BlockCapture<T>*> cap) {
    const std::size_t S = x.rows, D = x.cols, H = static_cast<std::size_t>(arch.num_heads), dh = D / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> y, hat;
    std::vector<T> rstd;
    layer_norm_rows(x, bp.ln1_g, bp.ln1_b, arch.ln_eps, y, cap ? &hat : nullptr, cap ? &rstd : nullptr);
    Matrix<T> q, k, v;
    matmul_bias(y, bp.wq, &bp.bq, q);
    matmul_bias(y, bp.wk, &bp.bk, k);
    matmul_bias(y, bp.wv, &bp.bv, v);

    Matrix<T> ao(S, D);
    std::vector<T> amap, logits, zs, mxs;
    if (cap) {
        amap.assign(H * S * S, T(0));
        logits.assign(H * S * S, T(0));
        zs.assign(H * S, T(0));
        mxs.assign(H * S, T(0));
    }
    for (std::size_t h = 0; h < H; ++h) {
        attend_head(q.data.data() + h * dh, k.data.data() + h * dh, v.data.data() + h * dh, D, S, dh, dh, D, w, true,
                    scale, ao.data.data() + h * dh, D, cap ? amap.data() + h * S * S : nullptr,
                    cap ? logits.data() + h * S * S : nullptr, cap ? zs.data() + h * S : nullptr,
                    cap ? mxs.data() + h * S : nullptr);
    }
    Matrix<T> o;
    matmul_bias(ao, bp.wo, &bp.bo, o);
    if (cap) {
        cap->reweighted = w != nullptr;
        cap->x_in = x;
        cap->ln1_hat = std::move(hat);
        cap->ln1_rstd = std::move(rstd);
        cap->q = q;
        cap->k = k;
        cap->v = v;
        cap->logits = std::move(logits);
        cap->attn = std::move(amap);
        cap->row_z = std::move(zs);
        cap->row_max = std::move(mxs);
        cap->attn_out = ao;
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += o.data[i];
    if (cap) cap->x_mid = x;

    Matrix<T> y2, hat2, h1, h2;
    std::vector<T> rstd2;
    layer_norm_rows(x, bp.ln2_g, bp.ln2_b, arch.ln_eps, y2, cap ? &hat2 : nullptr, cap ? &rstd2 : nullptr);
    matmul_bias(y2, bp.w1, &bp.b1, h1);
    if (cap) cap->h_pre = h1;
    for (auto& a : h1.data) a = activate(a, arch.activation);
    matmul_bias(h1, bp.w2, &bp.b2, h2);
    if (cap) {
        cap->ln2_hat = std::move(hat2);
        cap->ln2_rstd = std::move(rstd2);
        cap->h_act = std::move(h1);
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += h2.data[i];
}

template <class T>
EmbeddingT<T> head(const Matrix<T>& x, const EncoderModelT<T>& model, ActivationState<T>* cap) {
    const std::size_t D = x.cols, last = x.rows - 1;
    Matrix<T> eos(1, D);
    std::copy(x.row(last), x.row(last) + D, eos.row(0));
    Matrix<T> y, hat;
    std::vector<T> rstd;
    layer_norm_rows(eos, model.lnf_g, model.lnf_b, model.config.ln_eps, y, &hat, &rstd);
    Matrix<T> out;
    matmul_bias(y, model.text_projection, static_cast<const std::vector<T>*>(nullptr), out);
    for (T val : out.data) {
        if (!std::isfinite(val)) throw Error(ErrorKind::NonFinite, "embedding is not finite");
    }
    if (cap) {
        cap->final_in = x;
        cap->final_hat = hat.data;
        cap->final_rstd = rstd[0];
        cap->pooled = y.data;
    }
    return EmbeddingT<T>{out.data, false};
}

template <class T>
void check_weights(const std::vector<T>& w, std::size_t S) {
    if (w.size() != S) {
        throw Error(ErrorKind::ShapeMismatch, "weights have length " + std::to_string(w.size()) + ", sequence has " +
                                                  std::to_string(S));
    }
    for (T x : w) {
        if (!(x >= T(0)) || !std::isfinite(x)) throw Error(ErrorKind::InvalidArgument, "weights must be finite and >= 0");
    }
}

}  // namespace

template <class T>
AttentionResult<T> attention_reweighted(const Matrix<T>& Q, const Matrix<T>& K, const Matrix<T>& V,
                                        const std::vector<T>& w, bool causal, T scale) {
    const std::size_t S = Q.rows;
    if (K.rows != S || V.rows != S || Q.cols != K.cols) throw Error(ErrorKind::ShapeMismatch, "Q/K/V shapes differ");
    if (!w.empty()) check_weights(w, S);
    AttentionResult<T> r{Matrix<T>(S, V.cols), Matrix<T>(S, S)};
    attend_head(Q.data.data(), K.data.data(), V.data.data(), Q.cols, S, Q.cols, V.cols, V.cols,
                w.empty() ? nullptr : w.data(), causal, scale, r.out.data.data(), V.cols, r.attn.data.data(), nullptr,
                nullptr, nullptr);
    return r;
}

template <class T>
EmbeddingT<T> encode(const std::vector<int>& ids, const std::vector<T>& w, const EncoderModelT<T>& model,
                     const EncoderConfig& cfg, ActivationState<T>* capture) {
    cfg.validate();
    if (cfg.num_blocks != static_cast<int>(model.blocks.size())) {
        throw Error(ErrorKind::ShapeMismatch, "config block count differs from model");
    }
    check_weights(w, ids.size());
    Matrix<T> x;
    embed(ids, model, x);
    if (capture) capture->blocks.assign(model.blocks.size(), BlockCapture<T>{});
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const bool rw = cfg.block_reweighted(static_cast<int>(b) + 1);
        run_block(x, model.blocks[b], model.config, rw ? w.data() : nullptr,
                  capture ? &capture->blocks[b] : nullptr);
    }
    return head(x, model, capture);
}

template <class T>
EmbeddingT<T> encode_plain(const std::vector<int>& ids, const EncoderModelT<T>& model, const EncoderConfig& cfg) {
    EncoderConfig plain = cfg;
    plain.reweight_start_block = cfg.num_blocks + 1;
    plain.reweight_mode = ReweightMode::FromBlockOnward;
    return encode<T>(ids, std::vector<T>(ids.size(), T(1)), model, plain, nullptr);
}

std::vector<int> empty_prompt_ids(std::size_t length, int sos_id, int eos_id, std::optional<int> pad_id) {
    if (length < 2) throw Error(ErrorKind::ShapeMismatch, "sequence needs at least SOS and EOS");
    std::vector<int> ids(length, pad_id.value_or(eos_id));
    ids[0] = sos_id;
    ids[1] = eos_id;
    return ids;
}

template <class T>
EmbeddingT<T> encode_mpw_baseline(const std::vector<int>& ids, const std::vector<T>& w,
                                  const EncoderModelT<T>& model, const EncoderConfig& cfg, int inject_block,
                                  int sos_id, int eos_id, std::optional<int> pad_id) {
    cfg.validate();
    check_weights(w, ids.size());
    const int L = static_cast<int>(model.blocks.size());
    if (inject_block < 1 || inject_block > L + 1) {
        throw Error(ErrorKind::InvalidArgument, "inject_block must lie in [1, " + std::to_string(L + 1) + "]");
    }
    Matrix<T> z, z_empty;
    embed(ids, model, z);
    embed(empty_prompt_ids(ids.size(), sos_id, eos_id, pad_id), model, z_empty);
    for (int b = 0; b < inject_block - 1; ++b) {
        run_block(z, model.blocks[b], model.config, static_cast<const T*>(nullptr), nullptr);
        run_block(z_empty, model.blocks[b], model.config, static_cast<const T*>(nullptr), nullptr);
    }
    for (std::size_t i = 0; i < z.rows; ++i) {
        T* zr = z.row(i);
        const T* er = z_empty.row(i);
        for (std::size_t c = 0; c < z.cols; ++c) zr[c] = er[c] + w[i] * (zr[c] - er[c]);
    }
    for (int b = inject_block - 1; b < L; ++b) {
        run_block(z, model.blocks[b], model.config, static_cast<const T*>(nullptr), nullptr);
    }
    return head(z, model, static_cast<ActivationState<T>*>(nullptr));
}

#define TOKWEIGHT_INSTANTIATE(T)                                                                                   \
    template struct EncoderModelT<T>;                                                                              \
    template AttentionResult<T> attention_reweighted<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,       \
                                                        const std::vector<T>&, bool, T);                           \
    template EmbeddingT<T> encode<T>(const std::vector<int>&, const std::vector<T>&, const EncoderModelT<T>&,       \
                                     const EncoderConfig&, ActivationState<T>*);                                   \
    template EmbeddingT<T> encode_plain<T>(const std::vector<int>&, const EncoderModelT<T>&, const EncoderConfig&); \
    template EmbeddingT<T> encode_mpw_baseline<T>(const std::vector<int>&, const std::vector<T>&,                   \
                                                  const EncoderModelT<T>&, const EncoderConfig&, int, int, int,     \
                                                  std::optional<int>);

TOKWEIGHT_INSTANTIATE(float)
TOKWEIGHT_INSTANTIATE(double)

template EncoderModelT<double> EncoderModelT<float>::cast<double>() const;
template EncoderModelT<float> EncoderModelT<double>::cast<float>() const;
template EncoderModelT<float> EncoderModelT<float>::cast<float>() const;
template EncoderModelT<double> EncoderModelT<double>::cast<double>() const;

}  // namespace tokweight
