#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokweight/encoder.hpp"
#include "tokweight/safetensors.hpp"

namespace tokweight {

// Where one internal parameter lives in a checkpoint. Names may contain "{i}"
// for the 0-based block index.
struct TensorSource {
    std::string name;
    bool transpose = false;  // checkpoint stores [out, in]
    int part = 0;            // row block of a fused tensor, e.g. q/k/v of in_proj
    int parts = 1;
};

struct NameMap {
    std::string family;
    std::map<std::string, TensorSource> tensors;  // internal name -> source
    std::optional<int> num_heads;
    std::optional<int> head_dim;
    std::optional<Activation> activation;
    std::optional<std::string> logit_scale;
    // Prefixes of tensors that belong to other towers and are skipped quietly.
    std::vector<std::string> ignore_prefixes;
};

NameMap parse_name_map(const std::string& json_text);
NameMap load_name_map(const std::string& path);
// Layout written by save_model.
NameMap native_name_map();

// Internal parameter names for a model with the given block count.
std::vector<std::string> internal_tensor_names(int num_blocks);

// Architecture read from tensor shapes alone.
EncoderConfig infer_config(const TensorManifest& manifest, const NameMap& map);

struct LoadedModel {
    EncoderModel model;
    EncoderConfig config;
    std::vector<std::string> warnings;
};

LoadedModel load_model(const std::string& path, const NameMap& map);
// Uses the native layout.
LoadedModel load_model(const std::string& path);

void save_model(const EncoderModel& model, const std::string& path);

}  // namespace tokweight
