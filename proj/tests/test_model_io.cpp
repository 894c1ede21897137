#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tokweight/error.hpp"
#include "tokweight/fixtures.hpp"
#include "tokweight/model_io.hpp"
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

// Hand-assembled container with arbitrary dtype payloads.
void write_raw(const std::string& path, const std::string& header, const std::string& payload) {
    std::ofstream out(path, std::ios::binary);
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xFF));
    out << header << payload;
}

std::string u16_bytes(std::initializer_list<std::uint16_t> v) {
    std::string s;
    for (auto x : v) {
        s.push_back(static_cast<char>(x & 0xFF));
        s.push_back(static_cast<char>(x >> 8));
    }
    return s;
}

EncoderConfig arch(int D, int H) {
    EncoderConfig c;
    c.num_blocks = 2;
    c.model_dim = D;
    c.num_heads = H;
    c.mlp_dim = 2 * D;
    c.projection_dim = 16;
    c.context_length = 8;
    c.vocab_size = 20;
    c.reweight_start_block = 2;
    return c;
}

TensorData as_is(const Matrix<float>& m) { return {{m.rows, m.cols}, m.data}; }
TensorData vec(const std::vector<float>& v) { return {{v.size()}, v}; }
TensorData transposed(const Matrix<float>& m) {
    TensorData t{{m.cols, m.rows}, std::vector<float>(m.data.size())};
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) t.values[c * m.rows + r] = m(r, c);
    }
    return t;
}

void check_same(const EncoderModel& a, const EncoderModel& b) {
    CHECK(a.checksum() == b.checksum());
    const std::vector<int> ids = {0, 3, 4, 1};
    CHECK(encode_plain<float>(ids, a, a.config).vector == encode_plain<float>(ids, b, a.config).vector);
}

}  // namespace

TEST_SUITE("model_io") {
    TEST_CASE("half and bfloat16 decoding") {
        CHECK(half_to_float(0x3C00) == 1.0f);
        CHECK(half_to_float(0xC000) == -2.0f);
        CHECK(half_to_float(0x7BFF) == 65504.0f);
        CHECK(half_to_float(0x0001) == std::ldexp(1.0f, -24));
        CHECK(half_to_float(0x3555) == 0.333251953125f);
        CHECK(half_to_float(0x8000) == 0.0f);
        CHECK(std::signbit(half_to_float(0x8000)));
        CHECK(std::isinf(half_to_float(0x7C00)));
        CHECK(std::isnan(half_to_float(0x7E00)));
        CHECK(bfloat16_to_float(0x3F80) == 1.0f);
        CHECK(bfloat16_to_float(0x4049) == 3.140625f);
        CHECK(bfloat16_to_float(0xC2F7) == -123.5f);
    }

    TEST_CASE("float to half round-trips every finite half") {
        for (std::uint32_t h = 0; h < 0x10000; ++h) {
            if ((h & 0x7C00) == 0x7C00) continue;
            const float f = half_to_float(static_cast<std::uint16_t>(h));
            REQUIRE(float_to_half(f) == static_cast<std::uint16_t>(h));
        }
        CHECK(float_to_half(1.0f + std::ldexp(1.0f, -11)) == 0x3C00);  // tie to even
        CHECK(float_to_half(1e6f) == 0x7C00);
    }

    TEST_CASE("tensor file round trip with metadata") {
        const auto dir = temp_dir("tf");
        const auto path = (dir / "t.safetensors").string();
        write_tensor_file(path, {{"b", {{2, 3}, {1, 2, 3, 4, 5, 6}}}, {"a", {{1}, {7.5f}}}}, {{"k", "v"}});
        TensorFile f(path);
        CHECK(f.manifest().metadata.at("k") == "v");
        CHECK(f.manifest().at("b").shape == std::vector<std::size_t>{2, 3});
        CHECK(f.read_f32("b") == std::vector<float>{1, 2, 3, 4, 5, 6});
        CHECK(f.read_f32("a") == std::vector<float>{7.5f});
        CHECK(f.manifest().payload_offset % 8 == 0);
        try {
            f.read_f32("zzz");
            FAIL("expected MissingTensor");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingTensor);
        }
        CHECK_THROWS_AS(write_tensor_file(path, {{"x", {{2, 2}, {1, 2, 3}}}}), Error);
    }

    TEST_CASE("mixed dtypes are converted to float") {
        const auto dir = temp_dir("dtype");
        const auto path = (dir / "m.safetensors").string();
        std::string payload = u16_bytes({0x3C00, 0xC000}) + u16_bytes({0x3F80, 0x4049});
        const double d = -0.25;
        payload.append(reinterpret_cast<const char*>(&d), 8);
        payload += "xxxx";
        const std::string header =
            R"({"h":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"b":{"dtype":"BF16","shape":[2],"data_offsets":[4,8]},)"
            R"("d":{"dtype":"F64","shape":[1],"data_offsets":[8,16]},"i":{"dtype":"I32","shape":[1],"data_offsets":[16,20]}})";
        write_raw(path, header, payload);
        TensorFile f(path);
        CHECK(f.read_f32("h") == std::vector<float>{1.0f, -2.0f});
        CHECK(f.read_f32("b") == std::vector<float>{1.0f, 3.140625f});
        CHECK(f.read_f32("d") == std::vector<float>{-0.25f});
        try {
            f.read_f32("i");
            FAIL("expected UnsupportedDtype");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::UnsupportedDtype);
        }
    }

    TEST_CASE("malformed manifests are rejected") {
        auto kind = [](const std::string& header, std::size_t payload) {
            try {
                parse_manifest(header, payload);
            } catch (const Error& e) {
                return e.kind();
            }
            return ErrorKind::Conflict;
        };
        CHECK(kind("not json", 10) == ErrorKind::Parse);
        CHECK(kind("[]", 10) == ErrorKind::Parse);
        CHECK(kind(R"({"a":{"dtype":"F32","shape":[2]}})", 10) == ErrorKind::Parse);
        CHECK(kind(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", 4) == ErrorKind::ShapeMismatch);
        CHECK(kind(R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", 16) == ErrorKind::ShapeMismatch);
        CHECK(kind(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                   16) == ErrorKind::ShapeMismatch);
        CHECK(kind(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[8,0]}})", 16) == ErrorKind::ShapeMismatch);
        const auto m = parse_manifest(R"({"__metadata__":{"x":"1"},"a":{"dtype":"F32","shape":[2,1],"data_offsets":[0,8]}})", 8);
        CHECK(m.metadata.at("x") == "1");
        CHECK(m.at("a").numel() == 2);

        const auto dir = temp_dir("trunc");
        const auto path = (dir / "short.safetensors").string();
        std::ofstream(path) << "abc";
        CHECK_THROWS_AS(TensorFile{path}, Error);
        CHECK_THROWS_AS(TensorFile{(dir / "missing").string()}, Error);
    }

    TEST_CASE("native save and load round trip") {
        const auto dir = temp_dir("native");
        const auto path = (dir / "model.safetensors").string();
        auto m = make_random_model(arch(16, 2), 4);
        m.config.reweight_start_block = 3;
        m.logit_scale = 4.6;
        save_model(m, path);
        const auto loaded = load_model(path);
        check_same(m, loaded.model);
        CHECK(loaded.config.num_blocks == 2);
        CHECK(loaded.config.model_dim == 16);
        CHECK(loaded.config.num_heads == 2);
        CHECK(loaded.config.mlp_dim == 32);
        CHECK(loaded.config.projection_dim == 16);
        CHECK(loaded.config.context_length == 8);
        CHECK(loaded.config.vocab_size == 20);
        CHECK(loaded.config.reweight_start_block == 3);
        REQUIRE(loaded.model.logit_scale.has_value());
        CHECK(*loaded.model.logit_scale == doctest::Approx(4.6));
        CHECK(loaded.warnings.empty());
    }

    TEST_CASE("HF-style checkpoint through its name map") {
        const auto dir = temp_dir("hf");
        const auto path = (dir / "hf.safetensors").string();
        const auto m = make_random_model(arch(128, 2), 8);
        std::map<std::string, TensorData> t;
        t["text_model.embeddings.token_embedding.weight"] = as_is(m.token_embedding);
        t["text_model.embeddings.position_embedding.weight"] = as_is(m.positional_embedding);
        t["text_model.final_layer_norm.weight"] = vec(m.lnf_g);
        t["text_model.final_layer_norm.bias"] = vec(m.lnf_b);
        t["text_projection.weight"] = transposed(m.text_projection);
        t["logit_scale"] = {{}, {2.5f}};
        t["vision_model.foo"] = {{1}, {0.0f}};
        t["extra.unrelated"] = {{1}, {0.0f}};
        for (int b = 0; b < 2; ++b) {
            const auto& bp = m.blocks[b];
            const std::string p = "text_model.encoder.layers." + std::to_string(b) + ".";
            t[p + "layer_norm1.weight"] = vec(bp.ln1_g);
            t[p + "layer_norm1.bias"] = vec(bp.ln1_b);
            t[p + "layer_norm2.weight"] = vec(bp.ln2_g);
            t[p + "layer_norm2.bias"] = vec(bp.ln2_b);
            t[p + "self_attn.q_proj.weight"] = transposed(bp.wq);
            t[p + "self_attn.k_proj.weight"] = transposed(bp.wk);
            t[p + "self_attn.v_proj.weight"] = transposed(bp.wv);
            t[p + "self_attn.out_proj.weight"] = transposed(bp.wo);
            t[p + "self_attn.q_proj.bias"] = vec(bp.bq);
            t[p + "self_attn.k_proj.bias"] = vec(bp.bk);
            t[p + "self_attn.v_proj.bias"] = vec(bp.bv);
            t[p + "self_attn.out_proj.bias"] = vec(bp.bo);
            t[p + "mlp.fc1.weight"] = transposed(bp.w1);
            t[p + "mlp.fc1.bias"] = vec(bp.b1);
            t[p + "mlp.fc2.weight"] = transposed(bp.w2);
            t[p + "mlp.fc2.bias"] = vec(bp.b2);
        }
        write_tensor_file(path, t);
        const auto map = load_name_map(std::string(TOKWEIGHT_DATA_DIR) + "/name_maps/hf_clip.json");
        const auto loaded = load_model(path, map);
        CHECK(loaded.config.num_heads == 2);
        check_same(m, loaded.model);
        CHECK(*loaded.model.logit_scale == 2.5);
        REQUIRE(loaded.warnings.size() == 2);
        CHECK(loaded.warnings[0] == "unused tensor extra.unrelated");

        // Dropping tensors reports every missing name.
        t.erase("text_model.encoder.layers.1.mlp.fc2.bias");
        t.erase("text_model.final_layer_norm.bias");
        write_tensor_file(path, t);
        try {
            load_model(path, map);
            FAIL("expected MissingTensor");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingTensor);
            const std::string msg = e.what();
            CHECK(msg.find("text_model.encoder.layers.1.mlp.fc2.bias") != std::string::npos);
            CHECK(msg.find("text_model.final_layer_norm.bias") != std::string::npos);
        }
    }

    TEST_CASE("fused in_proj checkpoint is sliced into q, k and v") {
        const auto dir = temp_dir("openai");
        const auto path = (dir / "oa.safetensors").string();
        const auto m = make_random_model(arch(128, 2), 9);
        std::map<std::string, TensorData> t;
        t["token_embedding.weight"] = as_is(m.token_embedding);
        t["positional_embedding"] = as_is(m.positional_embedding);
        t["ln_final.weight"] = vec(m.lnf_g);
        t["ln_final.bias"] = vec(m.lnf_b);
        t["text_projection"] = as_is(m.text_projection);
        t["visual.proj"] = {{2}, {1, 2}};
        for (int b = 0; b < 2; ++b) {
            const auto& bp = m.blocks[b];
            const std::string p = "transformer.resblocks." + std::to_string(b) + ".";
            t[p + "ln_1.weight"] = vec(bp.ln1_g);
            t[p + "ln_1.bias"] = vec(bp.ln1_b);
            t[p + "ln_2.weight"] = vec(bp.ln2_g);
            t[p + "ln_2.bias"] = vec(bp.ln2_b);
            TensorData in_w{{384, 128}, {}};
            for (const auto* w : {&bp.wq, &bp.wk, &bp.wv}) {
                auto tw = transposed(*w);
                in_w.values.insert(in_w.values.end(), tw.values.begin(), tw.values.end());
            }
            t[p + "attn.in_proj_weight"] = in_w;
            std::vector<float> in_b;
            for (const auto* v : {&bp.bq, &bp.bk, &bp.bv}) in_b.insert(in_b.end(), v->begin(), v->end());
            t[p + "attn.in_proj_bias"] = vec(in_b);
            t[p + "attn.out_proj.weight"] = transposed(bp.wo);
            t[p + "attn.out_proj.bias"] = vec(bp.bo);
            t[p + "mlp.c_fc.weight"] = transposed(bp.w1);
            t[p + "mlp.c_fc.bias"] = vec(bp.b1);
            t[p + "mlp.c_proj.weight"] = transposed(bp.w2);
            t[p + "mlp.c_proj.bias"] = vec(bp.b2);
        }
        write_tensor_file(path, t);
        const auto loaded = load_model(path, load_name_map(std::string(TOKWEIGHT_DATA_DIR) + "/name_maps/openai_clip.json"));
        check_same(m, loaded.model);
        CHECK(loaded.warnings == std::vector<std::string>{"ignored 1 tensors from other towers"});
    }

    TEST_CASE("shape mismatch names the tensor") {
        const auto dir = temp_dir("shape");
        const auto path = (dir / "model.safetensors").string();
        save_model(make_random_model(arch(16, 2), 0), path);
        TensorFile f(path);
        std::map<std::string, TensorData> t;
        for (const auto& [name, info] : f.manifest().tensors) t[name] = {info.shape, f.read_f32(name)};
        t["blocks.1.bq"] = {{15}, std::vector<float>(15, 0.0f)};
        write_tensor_file(path, t, f.manifest().metadata);
        try {
            load_model(path);
            FAIL("expected ShapeMismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::ShapeMismatch);
            CHECK(std::string(e.what()).find("blocks.1.bq") != std::string::npos);
        }
    }

    TEST_CASE("missing text projection is named") {
        const auto dir = temp_dir("noproj");
        const auto path = (dir / "model.safetensors").string();
        save_model(make_random_model(arch(16, 2), 0), path);
        TensorFile f(path);
        std::map<std::string, TensorData> t;
        for (const auto& [name, info] : f.manifest().tensors) {
            if (name != "text_projection") t[name] = {info.shape, f.read_f32(name)};
        }
        write_tensor_file(path, t, f.manifest().metadata);
        try {
            load_model(path);
            FAIL("expected MissingTensor");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::MissingTensor);
            CHECK(std::string(e.what()).find("text_projection") != std::string::npos);
        }
    }

    TEST_CASE("name map parsing") {
        const auto m = parse_name_map(R"({"family":"x","num_heads":4,"tensors":{"lnf_g":"a","blocks.{i}.wq":{"name":"q{i}","transpose":true,"slice":{"part":1,"parts":3}}}})");
        CHECK(m.family == "x");
        CHECK(*m.num_heads == 4);
        CHECK(m.tensors.at("lnf_g").name == "a");
        CHECK(m.tensors.at("blocks.{i}.wq").transpose);
        CHECK(m.tensors.at("blocks.{i}.wq").part == 1);
        CHECK(m.tensors.at("blocks.{i}.wq").parts == 3);
        CHECK_THROWS_AS(parse_name_map(R"({"tensors":{"a":{"name":"b","slice":{"part":3,"parts":3}}}})"), Error);
        CHECK_THROWS_AS(parse_name_map("{"), Error);
        CHECK(internal_tensor_names(2).size() == 5 + 2 * 16);
    }
}
