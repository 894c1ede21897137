#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "tokweight/error.hpp"
#include "tokweight/metrics.hpp"
#include "tokweight/random.hpp"

using namespace tokweight;

namespace {

EmbeddingStore store_2d(const std::vector<std::pair<float, float>>& pts, std::vector<std::string> ids) {
    EmbeddingStore s;
    s.embeddings = Matrix<float>(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        s.embeddings(i, 0) = pts[i].first;
        s.embeddings(i, 1) = pts[i].second;
    }
    s.item_ids = std::move(ids);
    s.thumbnails.assign(pts.size(), "");
    return s;
}

ErrorKind kind_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Conflict;
}

}  // namespace

TEST_SUITE("metrics") {
    TEST_CASE("worked examples") {
        CHECK(average_precision({true, false, true, false}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
        CHECK(average_precision({false, false, true}) == doctest::Approx(1.0 / 3.0));
        CHECK(precision_at_k({true, false, true, false}, 2) == 0.5);
        CHECK(precision_at_k({true, false, true, false}, 4) == 0.5);
        CHECK(auroc({0.9, 0.8, 0.7, 0.6}, {true, false, true, false}) == doctest::Approx(0.75));
        CHECK(auroc({0.5, 0.5}, {true, false}) == 0.5);
    }

    TEST_CASE("metrics match brute-force oracles on random inputs") {
        Rng rng(17);
        for (int t = 0; t < 300; ++t) {
            const std::size_t n = 2 + rng.index(40);
            std::vector<bool> rel(n);
            std::vector<double> scores(n);
            for (std::size_t i = 0; i < n; ++i) {
                rel[i] = rng.uniform() < 0.4;
                scores[i] = static_cast<double>(rng.index(6));  // plenty of ties
            }
            rel[rng.index(n)] = true;
            const std::size_t k = 1 + rng.index(n);
            CHECK(std::abs(average_precision(rel) - oracle::average_precision(rel)) < 1e-12);
            CHECK(std::abs(precision_at_k(rel, k) - oracle::precision_at_k(rel, k)) < 1e-12);
            if (std::count(rel.begin(), rel.end(), false) > 0) {
                CHECK(std::abs(auroc(scores, rel) - oracle::auroc(scores, rel)) < 1e-12);
            }
        }
    }

    TEST_CASE("metric errors") {
        CHECK(kind_of([] { average_precision({false, false}); }) == ErrorKind::NoPositives);
        CHECK(kind_of([] { precision_at_k({true}, 0); }) == ErrorKind::BadK);
        CHECK(kind_of([] { precision_at_k({true}, 2); }) == ErrorKind::BadK);
        CHECK(kind_of([] { auroc({1, 2}, {true, true}); }) == ErrorKind::SingleClass);
        CHECK(kind_of([] { auroc({1}, {true, false}); }) == ErrorKind::CountMismatch);
    }

    TEST_CASE("ranking sorts by cosine with id tie-break") {
        const auto s = store_2d({{1, 0}, {0, 1}, {0.6f, 0.8f}, {0, 1}, {-1, 0}}, {"e", "d", "c", "b", "a"});
        const auto r = rank(Embedding{{0.0f, 2.0f}, false}, s);
        CHECK(r.rows == std::vector<std::size_t>{3, 1, 2, 4, 0});
        CHECK(r.scores[0] == doctest::Approx(1.0));
        CHECK(r.scores[2] == doctest::Approx(0.8));
        CHECK(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
        CHECK(kind_of([&] { rank(Embedding{{1.0f, 0.0f, 0.0f}, false}, s); }) == ErrorKind::DimensionMismatch);
        CHECK(kind_of([&] { rank(Embedding{{0.0f, 0.0f}, false}, s); }) == ErrorKind::NonFinite);

        CHECK(average_precision(r, s, {"c"}) == doctest::Approx(1.0 / 3.0));
        CHECK(precision_at_k(r, s, {"b", "d"}, 2) == 1.0);
        CHECK(kind_of([&] { average_precision(r, s, {}); }) == ErrorKind::NoPositives);
    }

    TEST_CASE("preference curves match the oracle") {
        Rng rng(23);
        for (int t = 0; t < 50; ++t) {
            const std::size_t n = 4 + rng.index(30);
            EmbeddingStore s;
            s.embeddings = Matrix<float>(n, 3);
            std::vector<int> cats(n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < 3; ++c) s.embeddings(i, c) = static_cast<float>(rng.normal());
                s.item_ids.push_back("id" + std::to_string(1000 + i));
                cats[i] = static_cast<int>(rng.index(4));
            }
            s.thumbnails.assign(n, "");
            const auto r = rank(Embedding{{1.0f, 0.5f, -0.2f}, false}, s);
            const auto curves = preference_auc(r, cats, {"w", "x", "y", "z"});
            std::vector<int> ranked;
            for (auto row : r.rows) ranked.push_back(cats[row]);
            for (int c = 0; c < 4; ++c) {
                const auto& cv = curves[c];
                CHECK(cv.count == static_cast<std::size_t>(std::count(cats.begin(), cats.end(), c)));
                if (cv.count == 0) {
                    CHECK(cv.f.empty());
                    continue;
                }
                CHECK(std::abs(cv.auc - oracle::preference_auc(ranked, c)) < 1e-12);
                CHECK(cv.f.back() == 1.0);
                CHECK(std::is_sorted(cv.f.begin(), cv.f.end()));
            }
        }
    }

    TEST_CASE("preference curve extremes") {
        const auto s = store_2d({{1, 0}, {0.8f, 0.6f}, {0, 1}, {-1, 0}}, {"a", "b", "c", "d"});
        const auto r = rank(Embedding{{1.0f, 0.0f}, false}, s);
        const auto curves = preference_auc(r, {0, 0, 1, 1}, {"top", "bottom"});
        CHECK(curves[0].f == std::vector<double>{0.5, 1, 1, 1});
        CHECK(curves[0].auc == doctest::Approx(0.875));
        CHECK(curves[1].auc == doctest::Approx(0.375));
        CHECK(kind_of([&] { preference_auc(r, {0, 0, 1}, {"a", "b"}); }) == ErrorKind::PartitionMismatch);
        CHECK(kind_of([&] { preference_auc(r, {0, 0, 1, 2}, {"a", "b"}); }) == ErrorKind::PartitionMismatch);
    }
}
