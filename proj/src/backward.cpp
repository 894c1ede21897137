#include <cmath>

#include "tokweight/trainer.hpp"

namespace tokweight {

namespace {

// dx for y = (x - mean) * rstd, given dy on the normalised values.
template <class T>
void layer_norm_backward(const Matrix<T>& dhat, const Matrix<T>& hat, const std::vector<T>& rstd, Matrix<T>& dx) {
    const std::size_t S = dhat.rows, D = dhat.cols;
    for (std::size_t r = 0; r < S; ++r) {
        const T* g = dhat.row(r);
        const T* h = hat.row(r);
        T mean_g = T(0), mean_gh = T(0);
        for (std::size_t c = 0; c < D; ++c) {
            mean_g += g[c];
            mean_gh += g[c] * h[c];
        }
        mean_g /= static_cast<T>(D);
        mean_gh /= static_cast<T>(D);
        T* out = dx.row(r);
        for (std::size_t c = 0; c < D; ++c) out[c] += rstd[r] * (g[c] - mean_g - h[c] * mean_gh);
    }
}

template <class T>
T activation_grad(T x, Activation act) {
    if (act == Activation::QuickGelu) {
        const T s = T(1) / (T(1) + std::exp(T(-1.702) * x));
        return s + T(1.702) * x * s * (T(1) - s);
    }
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
    return cdf + x * pdf;
}

template <class T>
Matrix<T> scale_columns(const Matrix<T>& m, const std::vector<T>& g) {
    Matrix<T> out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = m(r, c) * g[c];
    }
    return out;
}

// Backpropagates dy through one block; returns dx and adds to dtheta when the
// block was reweighted.
template <class T>
Matrix<T> block_backward(const Matrix<T>& dy, const BlockCapture<T>& cap, const BlockParams<T>& bp,
                         const EncoderConfig& arch, std::vector<T>& dtheta) {
    const std::size_t S = dy.rows, D = dy.cols, H = static_cast<std::size_t>(arch.num_heads), dh = D / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> dx_mid = dy;
    Matrix<T> dh_act;
    matmul_transposed(dy, bp.w2, dh_act);
    for (std::size_t i = 0; i < dh_act.data.size(); ++i) {
        dh_act.data[i] *= activation_grad(cap.h_pre.data[i], arch.activation);
    }
    Matrix<T> dy2;
    matmul_transposed(dh_act, bp.w1, dy2);
    layer_norm_backward(scale_columns(dy2, bp.ln2_g), cap.ln2_hat, cap.ln2_rstd, dx_mid);

    Matrix<T> dao;
    matmul_transposed(dx_mid, bp.wo, dao);
    Matrix<T> dq(S, D), dk(S, D), dv(S, D);
    std::vector<T> da(S), ds(S);
    for (std::size_t h = 0; h < H; ++h) {
        const T* A = cap.attn.data() + h * S * S;
        const std::size_t off = h * dh;
        for (std::size_t m = 0; m < S; ++m) {
            const T* a = A + m * S;
            const T* g = dao.row(m) + off;
            T delta = T(0);
            for (std::size_t j = 0; j <= m; ++j) {
                da[j] = dot(g, cap.v.row(j) + off, dh);
                delta += a[j] * da[j];
            }
            for (std::size_t j = 0; j <= m; ++j) {
                ds[j] = a[j] * (da[j] - delta);
                if (cap.reweighted) dtheta[j] += ds[j];
                T* dvj = dv.row(j) + off;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += a[j] * g[c];
                const T sj = ds[j] * scale;
                if (sj == T(0)) continue;
                T* dqm = dq.row(m) + off;
                T* dkj = dk.row(j) + off;
                const T* kj = cap.k.row(j) + off;
                const T* qm = cap.q.row(m) + off;
                for (std::size_t c = 0; c < dh; ++c) {
                    dqm[c] += sj * kj[c];
                    dkj[c] += sj * qm[c];
                }
            }
        }
    }
    Matrix<T> dy1, tmp;
    matmul_transposed(dq, bp.wq, dy1);
    matmul_transposed(dk, bp.wk, tmp);
    for (std::size_t i = 0; i < dy1.data.size(); ++i) dy1.data[i] += tmp.data[i];
    matmul_transposed(dv, bp.wv, tmp);
    for (std::size_t i = 0; i < dy1.data.size(); ++i) dy1.data[i] += tmp.data[i];

    Matrix<T> dx = dx_mid;
    layer_norm_backward(scale_columns(dy1, bp.ln1_g), cap.ln1_hat, cap.ln1_rstd, dx);
    return dx;
}

}  // namespace

template <class T>
std::vector<T> backward_logweights(const ActivationState<T>& state, const EncoderModelT<T>& model,
                                   const std::vector<T>& d_embedding) {
    const std::size_t D = static_cast<std::size_t>(model.config.model_dim);
    const std::size_t P = model.text_projection.cols;
    if (d_embedding.size() != P) throw Error(ErrorKind::ShapeMismatch, "embedding gradient has wrong length");
    if (state.blocks.size() != model.blocks.size()) throw Error(ErrorKind::ShapeMismatch, "missing capture");
    const std::size_t S = state.final_in.rows;
    std::vector<T> dtheta(S, T(0));

    std::size_t lowest = state.blocks.size();
    for (std::size_t b = 0; b < state.blocks.size(); ++b) {
        if (state.blocks[b].reweighted) {
            lowest = b;
            break;
        }
    }
    if (lowest == state.blocks.size()) return dtheta;

    Matrix<T> dpooled(1, D);
    for (std::size_t c = 0; c < D; ++c) {
        dpooled(0, c) = dot(model.text_projection.row(c), d_embedding.data(), P) * model.lnf_g[c];
    }
    Matrix<T> hat(1, D);
    hat.data = state.final_hat;
    Matrix<T> dlast(1, D);
    layer_norm_backward(dpooled, hat, std::vector<T>{state.final_rstd}, dlast);

    Matrix<T> dx(S, D);
    std::copy(dlast.data.begin(), dlast.data.end(), dx.row(S - 1));
    for (std::size_t b = state.blocks.size(); b-- > lowest;) {
        dx = block_backward(dx, state.blocks[b], model.blocks[b], model.config, dtheta);
    }
    for (T g : dtheta) {
        if (!std::isfinite(g)) throw Error(ErrorKind::NonFinite, "non-finite log-weight gradient");
    }
    return dtheta;
}

template std::vector<float> backward_logweights<float>(const ActivationState<float>&, const EncoderModelT<float>&,
                                                       const std::vector<float>&);
template std::vector<double> backward_logweights<double>(const ActivationState<double>&,
                                                         const EncoderModelT<double>&, const std::vector<double>&);

}  // namespace tokweight
