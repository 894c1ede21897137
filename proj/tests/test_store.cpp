#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tokweight/embedding_store.hpp"
#include "tokweight/error.hpp"
#include "tokweight/safetensors.hpp"

using namespace tokweight;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("tokweight_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Matrix<float> rows(std::vector<std::vector<float>> v) {
    Matrix<float> m(v.size(), v[0].size());
    for (std::size_t r = 0; r < v.size(); ++r) {
        for (std::size_t c = 0; c < v[r].size(); ++c) m(r, c) = v[r][c];
    }
    return m;
}

std::vector<ItemMetadata> meta(std::size_t n) {
    std::vector<ItemMetadata> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({"item" + std::to_string(i), {{"a", (i & 1) != 0}, {"b", (i & 2) != 0}}, ""});
    }
    return out;
}

}  // namespace

TEST_SUITE("store") {
    TEST_CASE("rows are renormalised and counted") {
        auto r = ingest_rows(rows({{3, 4}, {1, 0}, {0, 2}, {0.6f, 0.8f}}), meta(4));
        CHECK(r.report.items == 4);
        CHECK(r.report.renormalized == 2);
        CHECK(r.report.max_norm_deviation == doctest::Approx(4.0));
        CHECK(r.store.embeddings(0, 0) == doctest::Approx(0.6));
        CHECK(r.store.embeddings(2, 1) == doctest::Approx(1.0));
        for (std::size_t i = 0; i < 4; ++i) {
            const double n = std::hypot(r.store.embeddings(i, 0), r.store.embeddings(i, 1));
            CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
        }
        CHECK(r.attributes.names == std::vector<std::string>{"a", "b"});
        CHECK(r.attributes.values[3] == std::vector<std::uint8_t>{1, 1});
        CHECK(r.attributes.attribute_index("b") == 1);
        CHECK_THROWS_AS(r.attributes.attribute_index("c"), Error);
    }

    TEST_CASE("ingest rejects inconsistent input") {
        auto kind = [](Matrix<float> m, std::vector<ItemMetadata> md) {
            try {
                ingest_rows(std::move(m), md);
            } catch (const Error& e) {
                return e.kind();
            }
            return ErrorKind::Conflict;
        };
        CHECK(kind(rows({{1, 0}}), meta(2)) == ErrorKind::CountMismatch);
        CHECK(kind(rows({{0, 0}}), meta(1)) == ErrorKind::NonFinite);
        CHECK(kind(rows({{NAN, 1}}), meta(1)) == ErrorKind::NonFinite);
        auto dup = meta(2);
        dup[1].id = dup[0].id;
        CHECK(kind(rows({{1, 0}, {0, 1}}), dup) == ErrorKind::InvalidArgument);
        auto odd = meta(2);
        odd[1].attributes.pop_back();
        CHECK(kind(rows({{1, 0}, {0, 1}}), odd) == ErrorKind::DimensionMismatch);
    }

    TEST_CASE("JSONL metadata parsing") {
        const auto md = parse_metadata_jsonl(
            "{\"id\": \"x\", \"attributes\": {\"a\": 1, \"b\": 0}, \"thumbnail\": \"x.png\"}\n\n"
            "{\"id\": \"y\", \"attributes\": {\"a\": false, \"b\": true}}\n");
        REQUIRE(md.size() == 2);
        CHECK(md[0].thumbnail == "x.png");
        CHECK(md[1].thumbnail.empty());
        CHECK(md[1].attributes == std::vector<std::pair<std::string, bool>>{{"a", false}, {"b", true}});
        try {
            parse_metadata_jsonl("{\"id\": \"x\"}\n{oops\n");
            FAIL("expected Parse");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Parse);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    TEST_CASE("write and ingest round trip") {
        const auto dir = temp_dir("store");
        auto r = ingest_rows(rows({{1, 0}, {0, 1}, {0.6f, 0.8f}}), meta(3));
        r.store.thumbnails[1] = "t1.png";
        const auto e = (dir / "e.safetensors").string(), m = (dir / "m.jsonl").string();
        write_store(r.store, r.attributes, e, m);
        const auto back = ingest(e, m);
        CHECK(back.store.item_ids == r.store.item_ids);
        CHECK(back.store.embeddings.data == r.store.embeddings.data);
        CHECK(back.store.thumbnails == r.store.thumbnails);
        CHECK(back.attributes.values == r.attributes.values);
        CHECK(back.report.renormalized == 0);
        CHECK_THROWS_AS(ingest(e, (dir / "none.jsonl").string()), Error);
        write_tensor_file(e, {{"embeddings", {{6}, {1, 0, 0, 1, 1, 0}}}});
        CHECK_THROWS_AS(ingest(e, m), Error);
    }

    TEST_CASE("partition by attributes") {
        auto r = ingest_rows(rows({{1, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 1}, {3, 1}}), meta(6));
        const auto p = partition(r.attributes, {"a", "b"});
        CHECK(p.num_categories() == 4);
        CHECK(p.labels == std::vector<std::string>{"-a,-b", "+a,-b", "-a,+b", "+a,+b"});
        CHECK(p.items == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
        CHECK(p.category == std::vector<int>{0, 1, 2, 3, 0, 1});

        const auto s = partition(r.attributes, {"a", "b"}, 1, 3);
        CHECK(s.items.size() == 4);
        CHECK(std::is_sorted(s.items.begin(), s.items.end()));
        CHECK(s.items == partition(r.attributes, {"a", "b"}, 1, 3).items);
        for (std::size_t i = 0; i < s.items.size(); ++i) CHECK(static_cast<int>(s.items[i] % 4) == s.category[i]);

        auto small = ingest_rows(rows({{1, 0}, {0, 1}}), meta(2));
        try {
            partition(small.attributes, {"a", "b"}, 1);
            FAIL("expected EmptyCategory");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::EmptyCategory);
        }
        CHECK(partition(small.attributes, {"a", "b"}, 1, 0, true).items.size() == 2);
        CHECK_THROWS_AS(partition(r.attributes, {"zz"}), Error);
        CHECK_THROWS_AS(partition(r.attributes, {}), Error);
    }

    TEST_CASE("subset keeps rows in the given order") {
        auto r = ingest_rows(rows({{1, 0}, {0, 1}, {0.6f, 0.8f}}), meta(3));
        const auto s = r.store.subset({2, 0});
        CHECK(s.item_ids == std::vector<std::string>{"item2", "item0"});
        CHECK(s.embeddings(0, 1) == doctest::Approx(0.8));
        CHECK_THROWS_AS(r.store.subset({3}), Error);
    }
}
