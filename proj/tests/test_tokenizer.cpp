#include <doctest.h>

#include "tokweight/error.hpp"
#include "tokweight/fixtures.hpp"
#include "tokweight/tokenizer.hpp"

using namespace tokweight;

namespace {

const Vocabulary& clip_vocab() {
    static const Vocabulary v =
        load_vocabulary(std::string(TOKWEIGHT_DATA_DIR) + "/clip/vocab.json", std::string(TOKWEIGHT_DATA_DIR) + "/clip/merges.txt");
    return v;
}

std::vector<int> content(const TokenSequence& s) { return std::vector<int>(s.ids.begin() + 1, s.ids.end() - 1); }

// Two-letter alphabet with a handful of merges, no end-of-word marker.
Vocabulary tiny_vocab() {
    std::unordered_map<std::string, int> ids = {{"a", 0}, {"b", 1}, {"aa", 2}, {"ab", 3}, {"aab", 4},
                                                {"<|startoftext|>", 5}, {"<|endoftext|>", 6}};
    return make_vocabulary(ids, {{"a", "a"}, {"a", "b"}, {"aa", "b"}}, 8);
}

}  // namespace

TEST_SUITE("tokenizer") {
    TEST_CASE("reference tokenizations of the CLIP vocabulary") {
        const auto& v = clip_vocab();
        CHECK(v.sos_id == 49406);
        CHECK(v.eos_id == 49407);
        CHECK(v.size() == 49408);
        const std::vector<std::pair<std::string, std::vector<int>>> cases = {
            {"a photo of a cat", {320, 1125, 539, 320, 2368}},
            {"a photo of a woman with blonde hair, wearing eyeglasses",
             {320, 1125, 539, 320, 2308, 593, 10711, 2225, 267, 3309, 5034, 6116}},
            {"Hello   World!!  it's", {3306, 1002, 748, 585, 568}},
            {"A photo of 3 dogs and 12 cats.", {320, 1125, 539, 274, 3255, 537, 272, 273, 3989, 269}},
            {"café au lait", {15304, 2566, 572, 585}},
            {"don't stop-believing", {847, 713, 1691, 268, 19551}},
            {"sks pll ucd", {48136, 25266, 43514}},
            {"naïve résumé 2024", {1097, 35689, 563, 29106, 7054, 4166, 273, 271, 273, 275}},
        };
        for (const auto& [text, expected] : cases) {
            CAPTURE(text);
            const auto s = tokenize(text, v);
            CHECK(content(s) == expected);
            CHECK(s.ids.front() == v.sos_id);
            CHECK(s.ids.back() == v.eos_id);
            CHECK(s.n == expected.size());
            CHECK(s.char_spans.size() == s.n);
        }
    }

    TEST_CASE("empty prompt gives only SOS and EOS") {
        const auto s = tokenize("", clip_vocab());
        CHECK(s.ids == std::vector<int>{49406, 49407});
        CHECK(s.n == 0);
        CHECK(tokenize("   \t\n", clip_vocab()).n == 0);
    }

    TEST_CASE("char spans point at source bytes") {
        const std::string text = "Hello   World!!  it's";
        const auto s = tokenize(text, clip_vocab());
        const std::vector<ByteSpan> expected = {{0, 5}, {8, 13}, {13, 15}, {17, 19}, {19, 21}};
        CHECK(s.char_spans == expected);
        const auto c = tokenize("café au lait", clip_vocab());
        CHECK(c.char_spans[0] == ByteSpan{0, 5});  // é is two bytes
        CHECK(c.char_spans[1] == ByteSpan{6, 8});
    }

    TEST_CASE("decode inverts tokenize up to normalisation") {
        const auto& v = clip_vocab();
        const auto s = tokenize("A Photo of a Woman, wearing eyeglasses", v);
        CHECK(decode(s.ids, v) == "a photo of a woman , wearing eyeglasses");
        CHECK(token_text(320, v) == "a");
    }

    TEST_CASE("normalisation lowercases and collapses whitespace") {
        CHECK(normalize_text("  A\tB \n C  ") == "a b c");
        CHECK(normalize_text("ÉCOLE") == "école");
        CHECK(normalize_text("") == "");
    }

    TEST_CASE("over-length prompts are rejected") {
        std::string text;
        for (int i = 0; i < 75; ++i) text += "cat ";
        CHECK(tokenize(text, clip_vocab()).n == 75);
        text += "cat dog";
        try {
            tokenize(text, clip_vocab());
            FAIL("expected OverLength");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::OverLength);
        }
    }

    TEST_CASE("merges apply by rank without an end-of-word marker") {
        const auto v = tiny_vocab();
        CHECK(v.end_of_word.empty());
        CHECK(bpe("aab", v) == std::vector<std::string>{"aab"});
        CHECK(bpe("aba", v) == std::vector<std::string>{"ab", "a"});
        CHECK(bpe("aaa", v) == std::vector<std::string>{"aa", "a"});
        CHECK(tokenize("aa", v).ids == std::vector<int>{5, 2, 6});
        const auto s = tokenize("aab ab", v);
        CHECK(content(s) == std::vector<int>{4, 3});
    }

    TEST_CASE("unknown symbols are reported") {
        const auto v = tiny_vocab();
        CHECK_THROWS_AS(tokenize("abc", v), Error);
        try {
            tokenize("c", v);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::UnknownSymbol);
        }
    }

    TEST_CASE("vocabulary validation") {
        std::unordered_map<std::string, int> no_specials = {{"a", 0}};
        CHECK_THROWS_AS(make_vocabulary(no_specials, {}), Error);
        std::unordered_map<std::string, int> dup = {{"a", 0}, {"b", 0}, {"<|startoftext|>", 1}, {"<|endoftext|>", 2}};
        CHECK_THROWS_AS(make_vocabulary(dup, {}), Error);
    }

    TEST_CASE("fixture word vocabulary keeps every word whole") {
        const auto v = make_word_vocabulary(fixture_words(), 24);
        for (const auto& w : fixture_words()) {
            CAPTURE(w);
            const auto s = tokenize(w, v);
            REQUIRE(s.n == 1);
            CHECK(token_text(s.ids[1], v) == w);
        }
        const auto s = tokenize("a photo of a woman with blonde hair", v);
        CHECK(s.n == 8);
    }

    TEST_CASE("span weights map onto overlapping tokens") {
        const auto& v = clip_vocab();
        const auto s = tokenize("a photo of a woman with blonde hair, wearing eyeglasses", v);
        SpanWeightSpec spec;
        spec.entries.push_back({std::string("with blonde hair"), std::nullopt, 2.0});
        spec.entries.push_back({std::string("eyeglasses"), std::nullopt, 0.0});
        const auto w = map_span_weights(s, spec);
        const std::vector<double> expected = {1, 1, 1, 1, 1, 1, 2, 2, 2, 1, 1, 0, 0, 1};
        CHECK(w.values == expected);
        CHECK(w.values.front() == 1.0);
        CHECK(w.values.back() == 1.0);
    }

    TEST_CASE("span weights: defaults, ranges and errors") {
        const auto& v = clip_vocab();
        const auto s = tokenize("a photo of a cat", v);
        SpanWeightSpec spec;
        spec.default_weight = 0.5;
        spec.entries.push_back({std::nullopt, ByteSpan{13, 16}, 3.0});
        const auto w = map_span_weights(s, spec);
        CHECK(w.values == std::vector<double>{1, 0.5, 0.5, 0.5, 0.5, 3.0, 1});

        auto expect_kind = [&](const SpanWeightSpec& sp, ErrorKind k) {
            try {
                map_span_weights(s, sp);
                FAIL("expected error");
            } catch (const Error& e) {
                CHECK(e.kind() == k);
            }
        };
        expect_kind(SpanWeightSpec{1.0, {{std::string("dog"), std::nullopt, 1.0}}}, ErrorKind::SpanNotFound);
        expect_kind(SpanWeightSpec{1.0, {{std::string("a "), std::nullopt, 1.0}}}, ErrorKind::AmbiguousSpan);
        expect_kind(SpanWeightSpec{1.0, {{std::string("a photo"), std::nullopt, 1.0}, {std::string("photo of"), std::nullopt, 2.0}}},
                    ErrorKind::OverlapError);
        expect_kind(SpanWeightSpec{1.0, {{std::nullopt, ByteSpan{10, 40}, 1.0}}}, ErrorKind::SpanNotFound);
        expect_kind(SpanWeightSpec{1.0, {{std::string("cat"), std::nullopt, -1.0}}}, ErrorKind::InvalidArgument);
    }

    TEST_CASE("neutral span spec gives all ones") {
        const auto s = tokenize("a photo of a cat", clip_vocab());
        CHECK(map_span_weights(s, SpanWeightSpec{}).values == TokenWeights::ones(s.size()).values);
    }

    TEST_CASE("span spec JSON") {
        const auto spec = parse_span_spec(R"({"default": 0.8, "entries": [{"text": "cat", "weight": 2}, {"range": [0, 1], "weight": 0}]})");
        CHECK(spec.default_weight == 0.8);
        REQUIRE(spec.entries.size() == 2);
        CHECK(*spec.entries[0].text == "cat");
        CHECK(*spec.entries[1].range == ByteSpan{0, 1});
        CHECK_THROWS_AS(parse_span_spec("{\"entries\": [{\"text\": 1}]}"), Error);
        CHECK_THROWS_AS(parse_span_spec("not json"), Error);
    }
}
