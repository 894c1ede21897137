#include <doctest.h>

#include <cmath>
#include <limits>

#include "tokweight/error.hpp"
#include "tokweight/fixtures.hpp"
#include "tokweight/random.hpp"

using namespace tokweight;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows are positions

// Straightforward reference written from the definition, no shared helpers.
struct Reference {
    const EncoderModelT<double>& m;

    Vec layer_norm(const Vec& x, const std::vector<double>& g, const std::vector<double>& b) const {
        const double n = static_cast<double>(x.size());
        double mean = 0;
        for (double v : x) mean += v;
        mean /= n;
        double var = 0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= n;
        Vec y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + m.config.ln_eps) * g[i] + b[i];
        return y;
    }

    static Vec affine(const Vec& x, const Matrix<double>& w, const std::vector<double>& b) {
        Vec y(w.cols, 0.0);
        for (std::size_t o = 0; o < w.cols; ++o) {
            double s = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < w.rows; ++i) s += x[i] * w(i, o);
            y[o] = s;
        }
        return y;
    }

    Mat block(const Mat& x, const BlockParams<double>& bp, const Vec* w) const {
        const std::size_t S = x.size(), D = x[0].size(), H = m.config.num_heads, dh = D / H;
        Mat q(S), k(S), v(S);
        for (std::size_t i = 0; i < S; ++i) {
            const Vec y = layer_norm(x[i], bp.ln1_g, bp.ln1_b);
            q[i] = affine(y, bp.wq, bp.bq);
            k[i] = affine(y, bp.wk, bp.bk);
            v[i] = affine(y, bp.wv, bp.bv);
        }
        Mat ao(S, Vec(D, 0.0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < S; ++i) {
                Vec num(i + 1);
                double den = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    double s = 0;
                    for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[j][c];
                    num[j] = (w ? (*w)[j] : 1.0) * std::exp(s / std::sqrt(static_cast<double>(dh)));
                    den += num[j];
                }
                for (std::size_t j = 0; j <= i; ++j) {
                    for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) ao[i][c] += num[j] / den * v[j][c];
                }
            }
        }
        Mat out = x;
        for (std::size_t i = 0; i < S; ++i) {
            const Vec o = affine(ao[i], bp.wo, bp.bo);
            for (std::size_t c = 0; c < D; ++c) out[i][c] += o[c];
            Vec h1 = affine(layer_norm(out[i], bp.ln2_g, bp.ln2_b), bp.w1, bp.b1);
            for (double& a : h1) a = a / (1.0 + std::exp(-1.702 * a));
            const Vec h2 = affine(h1, bp.w2, bp.b2);
            for (std::size_t c = 0; c < D; ++c) out[i][c] += h2[c];
        }
        return out;
    }

    Mat embed(const std::vector<int>& ids) const {
        Mat x(ids.size(), Vec(m.config.model_dim));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (int c = 0; c < m.config.model_dim; ++c) {
                x[i][c] = m.token_embedding(ids[i], c) + m.positional_embedding(i, c);
            }
        }
        return x;
    }

    Vec head(const Mat& x) const {
        return affine(layer_norm(x.back(), m.lnf_g, m.lnf_b), m.text_projection, {});
    }

    Vec encode(const std::vector<int>& ids, const Vec& w, const EncoderConfig& cfg) const {
        Mat x = embed(ids);
        for (int b = 0; b < cfg.num_blocks; ++b) x = block(x, m.blocks[b], cfg.block_reweighted(b + 1) ? &w : nullptr);
        return head(x);
    }

    Vec mpw(const std::vector<int>& ids, const Vec& w, int inject, const std::vector<int>& empty) const {
        Mat x = embed(ids), e = embed(empty);
        for (int b = 0; b < inject - 1; ++b) {
            x = block(x, m.blocks[b], nullptr);
            e = block(e, m.blocks[b], nullptr);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t c = 0; c < x[i].size(); ++c) x[i][c] = e[i][c] + w[i] * (x[i][c] - e[i][c]);
        }
        for (int b = inject - 1; b < m.config.num_blocks; ++b) x = block(x, m.blocks[b], nullptr);
        return head(x);
    }
};

EncoderConfig small_arch() {
    EncoderConfig c;
    c.num_blocks = 3;
    c.model_dim = 16;
    c.num_heads = 2;
    c.mlp_dim = 32;
    c.projection_dim = 8;
    c.context_length = 10;
    c.vocab_size = 30;
    c.reweight_start_block = 2;
    return c;
}

// Random model with non-trivial biases and layer-norm affines so every term is
// exercised.
EncoderModelT<double> perturbed_model(std::uint64_t seed) {
    auto m = make_random_model(small_arch(), seed).cast<double>();
    Rng rng(seed + 1000);
    auto jitter = [&](std::vector<double>& v, double base, double sd) {
        for (double& x : v) x = base + sd * rng.normal();
    };
    for (auto& b : m.blocks) {
        jitter(b.ln1_g, 1.0, 0.2);
        jitter(b.ln1_b, 0.0, 0.1);
        jitter(b.ln2_g, 1.0, 0.2);
        jitter(b.ln2_b, 0.0, 0.1);
        for (auto* v : {&b.bq, &b.bk, &b.bv, &b.bo, &b.b1, &b.b2}) jitter(*v, 0.0, 0.1);
    }
    jitter(m.lnf_g, 1.0, 0.2);
    jitter(m.lnf_b, 0.0, 0.1);
    return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

std::vector<int> random_ids(Rng& rng, std::size_t S, int vocab) {
    std::vector<int> ids(S);
    ids[0] = 0;
    for (std::size_t i = 1; i + 1 < S; ++i) ids[i] = 2 + static_cast<int>(rng.index(vocab - 2));
    ids[S - 1] = 1;
    return ids;
}

Vec random_weights(Rng& rng, std::size_t S) {
    Vec w(S, 1.0);
    for (std::size_t i = 1; i + 1 < S; ++i) w[i] = 3.0 * rng.uniform();
    return w;
}

Matrix<double> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix<double> m(r, c);
    for (auto& x : m.data) x = rng.normal();
    return m;
}

}  // namespace

TEST_SUITE("encoder") {
    TEST_CASE("forward pass matches the reference in both reweight modes") {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto m = perturbed_model(seed);
            const Reference ref{m};
            Rng rng(seed + 7);
            const std::size_t S = 3 + rng.index(7);
            const auto ids = random_ids(rng, S, 30);
            const auto w = random_weights(rng, S);
            for (auto mode : {ReweightMode::FromBlockOnward, ReweightMode::SingleBlock}) {
                for (int start = 1; start <= 4; ++start) {
                    EncoderConfig cfg = m.config;
                    cfg.reweight_mode = mode;
                    cfg.reweight_start_block = start;
                    CAPTURE(seed);
                    CAPTURE(start);
                    CHECK(max_abs_diff(encode<double>(ids, w, m, cfg).vector, ref.encode(ids, w, cfg)) < 1e-10);
                }
            }
        }
    }

    TEST_CASE("blend baseline matches the reference") {
        const auto m = perturbed_model(3);
        const Reference ref{m};
        Rng rng(5);
        const auto ids = random_ids(rng, 8, 30);
        const auto w = random_weights(rng, 8);
        for (int inject = 1; inject <= 4; ++inject) {
            const auto got = encode_mpw_baseline<double>(ids, w, m, m.config, inject, 0, 1);
            const auto want = ref.mpw(ids, w, inject, empty_prompt_ids(8, 0, 1, std::nullopt));
            CHECK(max_abs_diff(got.vector, want) < 1e-10);
        }
        const auto pad = empty_prompt_ids(5, 0, 1, 7);
        CHECK(pad == std::vector<int>{0, 1, 7, 7, 7});
        CHECK(empty_prompt_ids(4, 0, 1, std::nullopt) == std::vector<int>{0, 1, 1, 1});
    }

    TEST_CASE("unit weights are bitwise neutral") {
        const auto m = make_random_model(small_arch(), 1);
        Rng rng(2);
        for (int t = 0; t < 20; ++t) {
            const std::size_t S = 2 + rng.index(9);
            const auto ids = random_ids(rng, S, 30);
            EncoderConfig cfg = m.config;
            cfg.reweight_start_block = 1 + static_cast<int>(rng.index(4));
            const auto a = encode<float>(ids, std::vector<float>(S, 1.0f), m, cfg).vector;
            const auto b = encode_plain<float>(ids, m, cfg).vector;
            CHECK(a == b);
        }
    }

    TEST_CASE("blend baseline with unit weights equals the plain pass") {
        const auto m = perturbed_model(4);
        Rng rng(9);
        const auto ids = random_ids(rng, 7, 30);
        const auto plain = encode_plain<double>(ids, m, m.config).vector;
        for (int inject = 1; inject <= 4; ++inject) {
            CHECK(max_abs_diff(encode_mpw_baseline<double>(ids, Vec(7, 1.0), m, m.config, inject, 0, 1).vector, plain) < 1e-12);
        }
    }

    TEST_CASE("attention rows are distributions proportional to w exp(s)") {
        Rng rng(11);
        for (int t = 0; t < 50; ++t) {
            const std::size_t S = 1 + rng.index(8), dh = 4;
            const auto Q = random_matrix(rng, S, dh), K = random_matrix(rng, S, dh), V = random_matrix(rng, S, 3);
            Vec w(S);
            for (auto& x : w) x = rng.uniform() < 0.2 ? 0.0 : 2.0 * rng.uniform();
            w[0] = 0.5;
            const bool causal = rng.uniform() < 0.5;
            const auto r = attention_reweighted(Q, K, V, w, causal, 0.5);
            for (std::size_t i = 0; i < S; ++i) {
                const std::size_t end = causal ? i + 1 : S;
                double den = 0, sum = 0;
                Vec num(S, 0.0);
                for (std::size_t j = 0; j < end; ++j) {
                    num[j] = w[j] * std::exp(0.5 * dot(Q.row(i), K.row(j), dh));
                    den += num[j];
                }
                for (std::size_t j = 0; j < S; ++j) {
                    CHECK(r.attn(i, j) == doctest::Approx(num[j] / den).epsilon(1e-12));
                    if (w[j] == 0.0 || j >= end) CHECK(r.attn(i, j) == 0.0);
                    sum += r.attn(i, j);
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
                for (std::size_t c = 0; c < 3; ++c) {
                    double o = 0;
                    for (std::size_t j = 0; j < S; ++j) o += r.attn(i, j) * V(j, c);
                    CHECK(r.out(i, c) == doctest::Approx(o).epsilon(1e-12));
                }
            }
        }
    }

    TEST_CASE("uniform rescaling of weights leaves attention unchanged") {
        Rng rng(12);
        const auto Q = random_matrix(rng, 6, 4), K = random_matrix(rng, 6, 4), V = random_matrix(rng, 6, 4);
        Vec w = random_weights(rng, 6);
        Vec w3 = w;
        for (auto& x : w3) x *= 3.0;
        const auto a = attention_reweighted(Q, K, V, w, true, 0.5);
        const auto b = attention_reweighted(Q, K, V, w3, true, 0.5);
        CHECK(max_abs_diff(a.attn.data, b.attn.data) < 1e-14);
    }

    TEST_CASE("empty weight vector means plain softmax") {
        Rng rng(13);
        const auto Q = random_matrix(rng, 5, 4), K = random_matrix(rng, 5, 4), V = random_matrix(rng, 5, 2);
        const auto a = attention_reweighted(Q, K, V, {}, true, 0.5);
        const auto b = attention_reweighted(Q, K, V, Vec(5, 1.0), true, 0.5);
        CHECK(a.attn.data == b.attn.data);
        CHECK(a.out.data == b.out.data);
    }

    TEST_CASE("zero-weight key with a huge logit gets no mass and no NaN") {
        Matrix<double> Q(2, 1), K(2, 1), V(2, 1);
        Q(0, 0) = 1;
        Q(1, 0) = 1;
        K(0, 0) = 1;
        K(1, 0) = 800;  // exp(800) overflows a double
        V(0, 0) = 2;
        V(1, 0) = 5;
        const auto r = attention_reweighted(Q, K, V, {1.0, 0.0}, false, 1.0);
        CHECK(r.attn(0, 0) == 1.0);
        CHECK(r.attn(0, 1) == 0.0);
        CHECK(r.out(1, 0) == 2.0);
    }

    TEST_CASE("a row with no positive weight is degenerate") {
        Matrix<double> Q(2, 2, 1.0), K(2, 2, 1.0), V(2, 2, 1.0);
        try {
            attention_reweighted(Q, K, V, {0.0, 1.0}, true, 1.0);
            FAIL("expected DegenerateRow");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::DegenerateRow);
        }
        const auto m = make_random_model(small_arch(), 0);
        EncoderConfig cfg = m.config;
        cfg.reweight_start_block = 1;
        CHECK_THROWS_AS(encode<float>({0, 5, 1}, {0.0f, 1.0f, 1.0f}, m, cfg), Error);
    }

    TEST_CASE("invalid weights and shapes are rejected") {
        const auto m = make_random_model(small_arch(), 0);
        const std::vector<int> ids = {0, 5, 1};
        auto kind = [&](const std::vector<float>& w) {
            try {
                encode<float>(ids, w, m, m.config);
            } catch (const Error& e) {
                return e.kind();
            }
            return ErrorKind::Conflict;
        };
        CHECK(kind({1.0f, -1.0f, 1.0f}) == ErrorKind::InvalidArgument);
        CHECK(kind({1.0f, std::numeric_limits<float>::quiet_NaN(), 1.0f}) == ErrorKind::InvalidArgument);
        CHECK(kind({1.0f, std::numeric_limits<float>::infinity(), 1.0f}) == ErrorKind::InvalidArgument);
        CHECK(kind({1.0f, 1.0f}) == ErrorKind::ShapeMismatch);
        std::vector<int> longer(11, 3);
        CHECK_THROWS_AS(encode_plain<float>(longer, m, m.config), Error);
        CHECK_THROWS_AS(encode_plain<float>({0, 99, 1}, m, m.config), Error);
    }

    TEST_CASE("reweight block selection") {
        EncoderConfig cfg = small_arch();
        cfg.reweight_start_block = 2;
        CHECK_FALSE(cfg.block_reweighted(1));
        CHECK(cfg.block_reweighted(2));
        CHECK(cfg.block_reweighted(3));
        cfg.reweight_mode = ReweightMode::SingleBlock;
        CHECK_FALSE(cfg.block_reweighted(3));
        cfg.reweight_start_block = 4;
        cfg.validate();
        cfg.reweight_start_block = 5;
        CHECK_THROWS_AS(cfg.validate(), Error);
        cfg.reweight_start_block = 0;
        CHECK_THROWS_AS(cfg.validate(), Error);
        CHECK(parse_reweight_mode("single") == ReweightMode::SingleBlock);
        CHECK(parse_reweight_mode("FromBlockOnward") == ReweightMode::FromBlockOnward);
        CHECK_THROWS_AS(parse_reweight_mode("x"), Error);
    }

    TEST_CASE("past the last block reweighting is disabled") {
        const auto m = make_random_model(small_arch(), 2);
        EncoderConfig cfg = m.config;
        cfg.reweight_start_block = 4;
        const std::vector<int> ids = {0, 3, 4, 1};
        CHECK(encode<float>(ids, {1.0f, 5.0f, 0.0f, 1.0f}, m, cfg).vector == encode_plain<float>(ids, m, cfg).vector);
    }

    TEST_CASE("float and double passes agree") {
        const auto m = make_random_model(small_arch(), 6);
        const std::vector<int> ids = {0, 3, 9, 4, 1};
        const std::vector<float> w = {1.0f, 2.0f, 0.5f, 1.0f, 1.0f};
        const auto f = encode<float>(ids, w, m, m.config).vector;
        const auto d = encode<double>(ids, cast_vector<double>(w), m.cast<double>(), m.config).vector;
        CHECK(max_abs_diff(cast_vector<double>(f), d) < 1e-4);
    }

    TEST_CASE("model validation and checksum") {
        auto m = make_random_model(small_arch(), 0);
        m.validate();
        const auto c = m.checksum();
        CHECK(c == make_random_model(small_arch(), 0).checksum());
        CHECK(c != make_random_model(small_arch(), 1).checksum());
        m.blocks[0].wq.data[0] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(m.validate(), Error);
        auto m2 = make_random_model(small_arch(), 0);
        m2.blocks.pop_back();
        CHECK_THROWS_AS(m2.validate(), Error);
    }
}
