#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tokweight {

// Named-tensor container: u64 little-endian header length, JSON header mapping
// names to {dtype, shape, data_offsets}, then the raw little-endian payload.
struct TensorInfo {
    std::string dtype;  // F32, F16, BF16, F64
    std::vector<std::size_t> shape;
    std::size_t begin = 0;  // offsets relative to the payload start
    std::size_t end = 0;

    std::size_t numel() const;
};

struct TensorManifest {
    std::map<std::string, TensorInfo> tensors;
    std::map<std::string, std::string> metadata;
    std::size_t payload_offset = 0;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const TensorInfo& at(const std::string& name) const;
};

std::size_t dtype_size(const std::string& dtype);

// Parses the JSON header only; validates offsets against payload_size when given.
TensorManifest parse_manifest(const std::string& header_json, std::size_t payload_size = SIZE_MAX);
TensorManifest read_manifest(const std::string& path);

class TensorFile {
public:
    explicit TensorFile(const std::string& path);

    const TensorManifest& manifest() const { return manifest_; }
    // Any supported dtype, converted to float32.
    std::vector<float> read_f32(const std::string& name) const;

private:
    std::string path_;
    TensorManifest manifest_;
    std::vector<unsigned char> payload_;
};

struct TensorData {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

// Writes F32 tensors in name order with an 8-byte aligned header.
void write_tensor_file(const std::string& path, const std::map<std::string, TensorData>& tensors,
                       const std::map<std::string, std::string>& metadata = {});

float half_to_float(std::uint16_t h);
float bfloat16_to_float(std::uint16_t b);
std::uint16_t float_to_half(float f);

// Writes to a temporary file then renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace tokweight
