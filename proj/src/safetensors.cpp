#include "tokweight/safetensors.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tokweight/error.hpp"

namespace tokweight {

static_assert(std::endian::native == std::endian::little, "payload is read as little-endian");

std::size_t TensorInfo::numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

const TensorInfo& TensorManifest::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorKind::MissingTensor, name);
    return it->second;
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    if (dtype == "F64") return 8;
    throw Error(ErrorKind::UnsupportedDtype, dtype);
}

TensorManifest parse_manifest(const std::string& header_json, std::size_t payload_size) {
    TensorManifest m;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header_json);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("tensor header: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::Parse, "tensor header is not an object");
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto mt = it.value().begin(); mt != it.value().end(); ++mt) {
                m.metadata[mt.key()] = mt.value().is_string() ? mt.value().get<std::string>() : mt.value().dump();
            }
            continue;
        }
        TensorInfo info;
        try {
            info.dtype = it.value().at("dtype").get<std::string>();
            info.shape = it.value().at("shape").get<std::vector<std::size_t>>();
            auto off = it.value().at("data_offsets").get<std::vector<std::size_t>>();
            if (off.size() != 2) throw Error(ErrorKind::Parse, it.key() + ": data_offsets needs two entries");
            info.begin = off[0];
            info.end = off[1];
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, it.key() + ": " + e.what());
        }
        // Unknown dtypes are kept in the manifest and rejected only when read.
        bool known = info.dtype == "F32" || info.dtype == "F16" || info.dtype == "BF16" || info.dtype == "F64";
        if (info.end < info.begin || info.end > payload_size) {
            throw Error(ErrorKind::ShapeMismatch, it.key() + ": data offsets outside payload");
        }
        if (known && info.end - info.begin != info.numel() * dtype_size(info.dtype)) {
            throw Error(ErrorKind::ShapeMismatch, it.key() + ": byte size does not match shape");
        }
        ranges.emplace_back(info.begin, info.end);
        m.tensors.emplace(it.key(), std::move(info));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) throw Error(ErrorKind::ShapeMismatch, "tensor data ranges overlap");
    }
    return m;
}

namespace {

std::uint64_t read_header_len(std::istream& in, const std::string& path) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorKind::IO, path + ": truncated header");
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | buf[i];
    return n;
}

}  // namespace

TensorManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    const std::uint64_t n = read_header_len(in, path);
    if (n > file_size - 8) throw Error(ErrorKind::IO, path + ": header longer than file");
    std::string header(n, '\0');
    in.read(header.data(), static_cast<std::streamsize>(n));
    auto m = parse_manifest(header, file_size - 8 - n);
    m.payload_offset = 8 + n;
    return m;
}

TensorFile::TensorFile(const std::string& path) : path_(path), manifest_(read_manifest(path)) {
    std::ifstream in(path, std::ios::binary);
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in.tellg());
    in.seekg(static_cast<std::streamoff>(manifest_.payload_offset));
    payload_.resize(file_size - manifest_.payload_offset);
    if (!payload_.empty() && !in.read(reinterpret_cast<char*>(payload_.data()), static_cast<std::streamsize>(payload_.size()))) {
        throw Error(ErrorKind::IO, path + ": cannot read payload");
    }
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000) << 16;
    std::uint32_t exp = (h >> 10) & 0x1F;
    std::uint32_t mant = h & 0x3FF;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            exp = 127 - 15 + 1;
            while ((mant & 0x400) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FF;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000 | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bfloat16_to_float(std::uint16_t b) { return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16); }

std::uint16_t float_to_half(float f) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t sign = (x >> 16) & 0x8000;
    const int exp = static_cast<int>((x >> 23) & 0xFF) - 127 + 15;
    std::uint32_t mant = x & 0x7FFFFF;
    if (((x >> 23) & 0xFF) == 0xFF) return static_cast<std::uint16_t>(sign | 0x7C00 | (mant ? 0x200 : 0));
    if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00);
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign);
        mant |= 0x800000;
        const int shift = 14 - exp;
        std::uint32_t half = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t mid = 1u << (shift - 1);
        if (rem > mid || (rem == mid && (half & 1))) ++half;
        return static_cast<std::uint16_t>(sign | half);
    }
    std::uint32_t half = sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1FFF;
    if (rem > 0x1000 || (rem == 0x1000 && (half & 1))) ++half;
    return static_cast<std::uint16_t>(half);
}

std::vector<float> TensorFile::read_f32(const std::string& name) const {
    const auto& info = manifest_.at(name);
    const std::size_t n = info.numel();
    std::vector<float> out(n);
    const unsigned char* p = payload_.data() + info.begin;
    if (info.dtype == "F32") {
        std::memcpy(out.data(), p, n * 4);
    } else if (info.dtype == "F64") {
        for (std::size_t i = 0; i < n; ++i) {
            double d;
            std::memcpy(&d, p + 8 * i, 8);
            out[i] = static_cast<float>(d);
        }
    } else if (info.dtype == "F16" || info.dtype == "BF16") {
        const bool bf = info.dtype == "BF16";
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t h;
            std::memcpy(&h, p + 2 * i, 2);
            out[i] = bf ? bfloat16_to_float(h) : half_to_float(h);
        }
    } else {
        throw Error(ErrorKind::UnsupportedDtype, name + " has dtype " + info.dtype);
    }
    return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IO, "cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(ErrorKind::IO, "write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw Error(ErrorKind::IO, "cannot rename " + tmp + " to " + path);
    }
}

void write_tensor_file(const std::string& path, const std::map<std::string, TensorData>& tensors,
                       const std::map<std::string, std::string>& metadata) {
    nlohmann::ordered_json header;
    if (!metadata.empty()) {
        nlohmann::ordered_json md;
        for (const auto& [k, v] : metadata) md[k] = v;
        header["__metadata__"] = md;
    }
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        std::size_t n = 1;
        for (auto d : t.shape) n *= d;
        if (n != t.values.size()) throw Error(ErrorKind::ShapeMismatch, name + ": values do not match shape");
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + 4 * n}}};
        offset += 4 * n;
    }
    std::string h = header.dump();
    while ((h.size() + 8) % 8 != 0) h.push_back(' ');
    std::string out;
    out.reserve(8 + h.size() + offset);
    std::uint64_t len = h.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    out += h;
    for (const auto& [name, t] : tensors) {
        out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * 4);
    }
    write_file_atomic(path, out);
}

}  // namespace tokweight
