#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace tokweight::cli {

struct ModelArgs {
    std::string model;
    std::string name_map;
    std::string vocab;
    std::string merges;
    int reweight_start = 0;  // 0 keeps the model's default
    std::string reweight_mode = "from";
    std::string method = "reweight";
    int inject_block = 0;
};

struct EncodeArgs {
    ModelArgs m;
    std::string prompt;
    std::string spans;
    std::string out;
};

struct TrainArgs {
    ModelArgs m;
    std::string prompts;
    std::string data;
    std::string eval_data;
    std::string weights_out = "trained_weights.json";
    std::string loss_out = "loss.csv";
    int shots = 16;
    int epochs = 100;
    double lr = 0.05;
    double tau = 0.01;
    int batch_size = 256;
    std::uint64_t seed = 0;
};

struct StoreArgs {
    std::string store;
    std::string metadata;
    std::string attrs;  // comma separated
    std::string target;
    int sample = 0;  // items per category, 0 = all
    std::uint64_t seed = 0;
};

struct RetrieveArgs {
    ModelArgs m;
    StoreArgs s;
    std::string prompt;
    std::string spans;
    std::size_t top_k = 100;
    std::string out;
};

struct EvalArgs {
    ModelArgs m;
    StoreArgs s;
    std::string prompt;
    std::string spans;
    std::string grid = "1";
    std::size_t k = 0;
    std::string out;
    std::string curves_out;
};

struct AblateArgs {
    ModelArgs m;
    StoreArgs s;
    std::string prompt;
    std::string spans;
    std::string grid = "0,0.5,1,1.5,2";
    std::string out;
};

struct InspectArgs {
    std::string weights;
};

struct BenchArgs {
    ModelArgs m;
    std::string prompt;
    std::size_t iterations = 1000;
    bool plain_only = false;
};

struct ServeArgs {
    ModelArgs m;
    std::vector<std::string> stores;
    std::vector<std::string> metadata;
    std::string attrs;
    std::string addr = "127.0.0.1:8080";
    std::string static_dir;
    std::size_t top_k = 100;
};

struct MakeToyArgs {
    std::string out = "toy";
    std::uint64_t seed = 0;
};

// Written atomically when --manifest is given.
struct RunManifest {
    std::string path;  // empty: not written
    std::string command;
    nlohmann::ordered_json config;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;
    std::vector<std::string> outputs;
    std::map<std::string, double> timings;

    nlohmann::ordered_json to_json() const;
    void write() const;
};

// Relative paths that do not exist are looked up under $STORI_DATA_DIR.
std::string resolve_input(const std::string& path);

int cmd_encode(const EncodeArgs& a, RunManifest& man);
int cmd_train(const TrainArgs& a, RunManifest& man);
int cmd_retrieve(const RetrieveArgs& a, RunManifest& man);
int cmd_eval(const EvalArgs& a, RunManifest& man);
int cmd_ablate(const AblateArgs& a, RunManifest& man);
int cmd_inspect(const InspectArgs& a, RunManifest& man);
int cmd_bench(const BenchArgs& a, RunManifest& man);
int cmd_serve(const ServeArgs& a, RunManifest& man);
int cmd_make_toy(const MakeToyArgs& a, RunManifest& man);

}  // namespace tokweight::cli
