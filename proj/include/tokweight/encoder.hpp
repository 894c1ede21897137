#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokweight/tensor.hpp"
#include "tokweight/tokenizer.hpp"

namespace tokweight {

enum class ReweightMode { FromBlockOnward, SingleBlock };
enum class Activation { QuickGelu, Gelu };

const char* to_string(ReweightMode mode);
ReweightMode parse_reweight_mode(const std::string& s);
const char* to_string(Activation act);
Activation parse_activation(const std::string& s);

struct EncoderConfig {
    int num_blocks = 12;
    int model_dim = 512;
    int num_heads = 8;
    int mlp_dim = 2048;
    int projection_dim = 512;
    int context_length = 77;
    int vocab_size = 49408;
    Activation activation = Activation::QuickGelu;
    double ln_eps = 1e-5;
    // 1-based; num_blocks + 1 disables reweighting.
    int reweight_start_block = 7;
    ReweightMode reweight_mode = ReweightMode::FromBlockOnward;
    double temperature = 0.01;

    int head_dim() const { return model_dim / num_heads; }
    void validate() const;
    // True when block (1-based) uses the reweighted attention.
    bool block_reweighted(int block) const;
};

template <class T>
struct BlockParams {
    std::vector<T> ln1_g, ln1_b;
    Matrix<T> wq, wk, wv, wo;  // [in, out]
    std::vector<T> bq, bk, bv, bo;
    std::vector<T> ln2_g, ln2_b;
    Matrix<T> w1;  // [model_dim, mlp_dim]
    std::vector<T> b1;
    Matrix<T> w2;  // [mlp_dim, model_dim]
    std::vector<T> b2;

    template <class U>
    BlockParams<U> cast() const;
};

template <class T>
struct EncoderModelT {
    EncoderConfig config;
    Matrix<T> token_embedding;       // [vocab, model_dim]
    Matrix<T> positional_embedding;  // [context, model_dim]
    std::vector<BlockParams<T>> blocks;
    std::vector<T> lnf_g, lnf_b;
    Matrix<T> text_projection;  // [model_dim, projection_dim]
    std::optional<double> logit_scale;  // stored as log(1/tau) like CLIP checkpoints

    template <class U>
    EncoderModelT<U> cast() const;
    void validate() const;
    std::uint64_t checksum() const;
};

using EncoderModel = EncoderModelT<float>;

template <class T>
struct EmbeddingT {
    std::vector<T> vector;
    bool normalized = false;

    EmbeddingT<T> unit() const { return EmbeddingT<T>{tokweight::normalized(vector), true}; }
};

using Embedding = EmbeddingT<float>;

template <class T>
struct BlockCapture {
    bool reweighted = false;
    Matrix<T> x_in;
    Matrix<T> ln1_hat;
    std::vector<T> ln1_rstd;
    Matrix<T> q, k, v;
    std::vector<T> logits;  // [head][m][n], scaled, masked entries 0
    std::vector<T> attn;    // [head][m][n]
    std::vector<T> row_z;   // [head][m] normaliser after max subtraction
    std::vector<T> row_max;  // [head][m]
    Matrix<T> attn_out;     // concatenated heads before the output projection
    Matrix<T> x_mid;
    Matrix<T> ln2_hat;
    std::vector<T> ln2_rstd;
    Matrix<T> h_pre;
    Matrix<T> h_act;
};

template <class T>
struct ActivationState {
    std::vector<BlockCapture<T>> blocks;
    Matrix<T> final_in;
    std::vector<T> final_hat;  // layer-normed EOS row before affine
    T final_rstd = T(0);
    std::vector<T> pooled;  // affine final layer norm of the EOS row
};

template <class T>
struct AttentionResult {
    Matrix<T> out;   // [S, dh]
    Matrix<T> attn;  // [S, S]
};

// Single-head attention with per-key weights multiplying the exponentials.
// Q, K: [S, dh]; V: [S, dv]; w empty means plain attention.
template <class T>
AttentionResult<T> attention_reweighted(const Matrix<T>& Q, const Matrix<T>& K, const Matrix<T>& V,
                                        const std::vector<T>& w, bool causal, T scale);

template <class T>
EmbeddingT<T> encode(const std::vector<int>& ids, const std::vector<T>& w, const EncoderModelT<T>& model,
                     const EncoderConfig& cfg, ActivationState<T>* capture = nullptr);

template <class T>
EmbeddingT<T> encode(const TokenSequence& seq, const TokenWeights& w, const EncoderModelT<T>& model,
                     const EncoderConfig& cfg, ActivationState<T>* capture = nullptr) {
    return encode<T>(seq.ids, cast_vector<T>(w.values), model, cfg, capture);
}

// Plain forward pass without any reweighting.
template <class T>
EmbeddingT<T> encode_plain(const std::vector<int>& ids, const EncoderModelT<T>& model, const EncoderConfig& cfg);

// Prompt-blending baseline: hidden states entering block inject_block (1-based,
// num_blocks + 1 = after the last block) are interpolated between the prompt and
// an empty prompt padded with pad_id.
template <class T>
EmbeddingT<T> encode_mpw_baseline(const std::vector<int>& ids, const std::vector<T>& w,
                                  const EncoderModelT<T>& model, const EncoderConfig& cfg, int inject_block,
                                  int sos_id, int eos_id, std::optional<int> pad_id = std::nullopt);

// Empty prompt [SOS, EOS, pad...] of the given length.
std::vector<int> empty_prompt_ids(std::size_t length, int sos_id, int eos_id, std::optional<int> pad_id);

}  // namespace tokweight
