#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "tokweight/bench.hpp"
#include "tokweight/error.hpp"
#include "tokweight/fixtures.hpp"
#include "tokweight/model_io.hpp"
#include "tokweight/random.hpp"
#include "tokweight/retrieval.hpp"
#include "tokweight/safetensors.hpp"
#include "tokweight/service.hpp"
#include "tokweight/trainer.hpp"

namespace fs = std::filesystem;

namespace tokweight::cli {

namespace {

using clock_type = std::chrono::steady_clock;

double elapsed(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    std::ostringstream ss;
    ss << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

std::string input(const std::string& path, RunManifest& man) {
    const auto p = resolve_input(path);
    man.input_digests[p] = digest(p);
    return p;
}

void write_output(const std::string& path, const std::string& content, RunManifest& man) {
    write_file_atomic(path, content);
    man.outputs.push_back(path);
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size()) throw Error(ErrorKind::InvalidArgument, "bad grid value: " + item);
        if (!(v >= 0.0)) throw Error(ErrorKind::InvalidArgument, "grid values must be >= 0");
        out.push_back(v);
    }
    if (out.empty()) throw Error(ErrorKind::InvalidArgument, "weight grid is empty");
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Bundle {
    EncoderModel model;
    EncoderConfig cfg;
    Vocabulary vocab;
    QueryOptions query;
};

std::string sibling_or_default(const std::string& model_path, const std::string& file, const std::string& fallback) {
    const auto sib = fs::path(model_path).parent_path() / file;
    if (fs::exists(sib)) return sib.string();
    return fallback;
}

Bundle load_bundle(const ModelArgs& a, RunManifest& man) {
    if (a.model.empty()) throw Error(ErrorKind::InvalidArgument, "--model is required");
    const auto model_path = input(a.model, man);
    const NameMap map = a.name_map.empty() ? native_name_map() : load_name_map(input(a.name_map, man));
    auto loaded = load_model(model_path, map);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    Bundle b;
    b.model = std::move(loaded.model);
    b.cfg = loaded.config;
    if (a.reweight_start > 0) b.cfg.reweight_start_block = a.reweight_start;
    b.cfg.reweight_mode = parse_reweight_mode(a.reweight_mode);
    b.cfg.validate();
    const auto vocab_path =
        input(a.vocab.empty() ? sibling_or_default(model_path, "vocab.json", "clip/vocab.json") : a.vocab, man);
    const auto merges_path =
        input(a.merges.empty() ? sibling_or_default(model_path, "merges.txt", "clip/merges.txt") : a.merges, man);
    b.vocab = load_vocabulary(vocab_path, merges_path, b.cfg.context_length);
    b.query.method = parse_weighting_method(a.method);
    b.query.inject_block = a.inject_block;
    man.config["model"] = model_path;
    man.config["vocab"] = vocab_path;
    man.config["merges"] = merges_path;
    man.config["resolved_reweight_start"] = b.cfg.reweight_start_block;
    man.config["resolved_reweight_mode"] = to_string(b.cfg.reweight_mode);
    man.config["model_checksum"] = b.model.checksum();
    return b;
}

SpanWeightSpec load_spans(const std::string& spans, RunManifest& man) {
    if (spans.empty()) return {};
    if (spans.front() == '{') return parse_span_spec(spans);
    return load_span_spec(input(spans, man));
}

EvalSet load_eval_set(const StoreArgs& a, RunManifest& man) {
    if (a.store.empty() || a.metadata.empty()) throw Error(ErrorKind::InvalidArgument, "--store and --metadata are required");
    const auto store_path = input(a.store, man);
    const auto metadata_path = input(a.metadata, man);
    auto ing = ingest(store_path, metadata_path);
    if (ing.report.renormalized) {
        std::cerr << "note: renormalized " << ing.report.renormalized << " embeddings (max norm deviation "
                  << ing.report.max_norm_deviation << ")\n";
    }
    const auto attrs = split_list(a.attrs);
    if (attrs.empty()) {
        if (!a.target.empty()) throw Error(ErrorKind::InvalidArgument, "--target needs --attrs");
        EvalSet e;
        e.store = std::move(ing.store);
        return e;
    }
    std::optional<std::size_t> sample;
    if (a.sample > 0) sample = static_cast<std::size_t>(a.sample);
    const auto part = partition(ing.attributes, attrs, sample, a.seed);
    return make_eval_set(ing.store, ing.attributes, part, a.target);
}

std::string ranking_csv(const QueryResult& r, const EvalSet& eval, std::size_t top_k) {
    std::ostringstream ss;
    ss << std::setprecision(17) << "rank,item_id,score\n";
    for (std::size_t i = 0; i < std::min(top_k, r.ranking.size()); ++i) {
        ss << i + 1 << ',' << eval.store.item_ids[r.ranking.rows[i]] << ',' << r.ranking.scores[i] << '\n';
    }
    return ss.str();
}

void emit(const std::string& out, const std::string& content, RunManifest& man) {
    if (out.empty()) {
        std::cout << content;
    } else {
        write_output(out, content, man);
    }
}

void print_tokens(const TokenSequence& seq, const TokenWeights& w, const Vocabulary& vocab) {
    std::cout << "index\ttoken\tweight\n";
    for (std::size_t i = 0; i < seq.n; ++i) {
        std::cout << i << '\t' << token_text(seq.ids[i + 1], vocab) << '\t' << w.values[i + 1] << '\n';
    }
}

FewShotBatch load_batch(const std::string& path) {
    TensorFile f(path);
    const auto& info = f.manifest().at("images");
    if (info.shape.size() != 2) throw Error(ErrorKind::ShapeMismatch, path + ": images must be 2-D");
    const auto images = f.read_f32("images");
    const auto labels = f.read_f32("labels");
    if (labels.size() != info.shape[0]) throw Error(ErrorKind::CountMismatch, path + ": labels and images differ");
    FewShotBatch b;
    b.images = Matrix<double>(info.shape[0], info.shape[1]);
    for (std::size_t r = 0; r < info.shape[0]; ++r) {
        std::vector<double> x(images.begin() + static_cast<long>(r * info.shape[1]),
                              images.begin() + static_cast<long>((r + 1) * info.shape[1]));
        x = normalized(x);
        std::copy(x.begin(), x.end(), b.images.row(r));
        b.labels.push_back(static_cast<int>(std::lround(labels[r])));
    }
    return b;
}

void save_batch(const FewShotBatch& b, const std::string& path) {
    std::vector<float> labels(b.labels.begin(), b.labels.end());
    write_tensor_file(path, {{"images", TensorData{{b.images.rows, b.images.cols}, cast_vector<float>(b.images.data)}},
                             {"labels", TensorData{{labels.size()}, labels}}});
}

// Keeps `shots` rows per label, chosen by a seeded shuffle.
FewShotBatch take_shots(const FewShotBatch& b, int shots, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < b.size(); ++i) by_label[b.labels[i]].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (auto& [label, rows] : by_label) {
        rng.shuffle(rows);
        if (rows.size() > static_cast<std::size_t>(shots)) rows.resize(static_cast<std::size_t>(shots));
        keep.insert(keep.end(), rows.begin(), rows.end());
    }
    std::sort(keep.begin(), keep.end());
    return b.subset(keep);
}

std::vector<ClassPromptSet> load_prompts(const std::string& path, const Vocabulary& vocab) {
    nlohmann::json j = nlohmann::json::parse(read_text(path));
    std::vector<ClassPromptSet> sets;
    for (const auto& c : j) {
        ClassPromptSet s;
        s.label = c.at("label").get<int>();
        s.name = c.value("name", std::to_string(s.label));
        for (const auto& p : c.at("prompts")) s.prompts.push_back(make_prompt(p.get<std::string>(), vocab));
        if (s.prompts.empty()) throw Error(ErrorKind::EmptyClass, "class " + s.name + " has no prompts");
        sets.push_back(std::move(s));
    }
    return sets;
}

}  // namespace

nlohmann::ordered_json RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["input_digests"] = input_digests;
    j["outputs"] = outputs;
    j["timings_seconds"] = timings;
    return j;
}

void RunManifest::write() const { write_file_atomic(path, to_json().dump(2) + "\n"); }

std::string resolve_input(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute() || fs::exists(path)) return path;
    if (const char* root = std::getenv("STORI_DATA_DIR"); root && *root) {
        const auto candidate = fs::path(root) / path;
        if (fs::exists(candidate)) return candidate.string();
    }
    return path;
}

int cmd_encode(const EncodeArgs& a, RunManifest& man) {
    auto t0 = clock_type::now();
    const auto b = load_bundle(a.m, man);
    man.timings["load"] = elapsed(t0);
    t0 = clock_type::now();
    const auto seq = tokenize(a.prompt, b.vocab);
    const auto w = map_span_weights(seq, load_spans(a.spans, man));
    const auto e = encode_query(seq, w, b.model, b.cfg, b.vocab, b.query);
    man.timings["encode"] = elapsed(t0);
    print_tokens(seq, w, b.vocab);
    if (a.out.empty()) {
        std::cout << "embedding";
        std::cout << std::setprecision(9);
        for (float x : e.vector) std::cout << ' ' << x;
        std::cout << '\n';
    } else {
        write_tensor_file(a.out, {{"embedding", TensorData{{e.vector.size()}, e.vector}}}, {{"prompt", a.prompt}});
        man.outputs.push_back(a.out);
    }
    return 0;
}

int cmd_train(const TrainArgs& a, RunManifest& man) {
    auto t0 = clock_type::now();
    const auto b = load_bundle(a.m, man);
    auto sets = load_prompts(input(a.prompts, man), b.vocab);
    const auto data = take_shots(load_batch(input(a.data, man)), a.shots, a.seed);
    std::optional<FewShotBatch> eval;
    if (!a.eval_data.empty()) eval = load_batch(input(a.eval_data, man));
    man.timings["load"] = elapsed(t0);

    TrainingConfig tc;
    tc.learning_rate = a.lr;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch_size;
    tc.temperature = a.tau;
    tc.shots_per_class = a.shots;
    tc.seed = a.seed;
    man.seed = a.seed;
    EncoderConfig ec = b.cfg;
    ec.temperature = a.tau;
    t0 = clock_type::now();
    const auto md = b.model.cast<double>();
    const auto result = train<double>(sets, data, md, tc, ec, eval ? &*eval : nullptr);
    man.timings["train"] = elapsed(t0);
    write_output(a.weights_out, trained_weights_json(result.sets, b.vocab), man);
    write_output(a.loss_out, loss_history_csv(result.history), man);
    if (!result.history.empty()) {
        std::cout << "loss " << result.history.front().loss << " -> " << result.history.back().loss << '\n';
    }
    if (result.eval_accuracy) std::cout << "eval accuracy " << *result.eval_accuracy << '\n';
    return 0;
}

int cmd_retrieve(const RetrieveArgs& a, RunManifest& man) {
    auto t0 = clock_type::now();
    const auto b = load_bundle(a.m, man);
    const auto eval = load_eval_set(a.s, man);
    man.timings["load"] = elapsed(t0);
    t0 = clock_type::now();
    const auto seq = tokenize(a.prompt, b.vocab);
    const auto w = map_span_weights(seq, load_spans(a.spans, man));
    const auto r = run_query(seq, w, b.model, b.cfg, b.vocab, eval, b.query);
    man.timings["query"] = elapsed(t0);
    emit(a.out, ranking_csv(r, eval, a.top_k), man);
    return 0;
}

int cmd_eval(const EvalArgs& a, RunManifest& man) {
    auto t0 = clock_type::now();
    const auto b = load_bundle(a.m, man);
    const auto eval = load_eval_set(a.s, man);
    man.timings["load"] = elapsed(t0);
    const auto spec = load_spans(a.spans, man);
    if (spec.entries.empty()) throw Error(ErrorKind::InvalidArgument, "eval needs --spans naming the span to sweep");
    const auto seq = tokenize(a.prompt, b.vocab);
    SweepConfig sc;
    sc.grid = parse_grid(a.grid);
    sc.k = a.k;
    sc.query = b.query;
    t0 = clock_type::now();
    const auto rows = weight_sweep(seq, spec, sc, b.model, b.cfg, b.vocab, eval);
    man.timings["sweep"] = elapsed(t0);
    emit(a.out, sweep_csv(rows, eval.labels), man);
    if (!a.curves_out.empty()) {
        std::ostringstream ss;
        ss << "weight," << "category,label,n,f\n";
        for (double g : sc.grid) {
            SpanWeightSpec s = spec;
            for (auto& e : s.entries) e.weight = g;
            const auto r = run_query(seq, map_span_weights(seq, s), b.model, b.cfg, b.vocab, eval, b.query);
            std::istringstream lines(curves_csv(r.curves));
            std::string line;
            std::getline(lines, line);
            while (std::getline(lines, line)) ss << g << ',' << line << '\n';
        }
        write_output(a.curves_out, ss.str(), man);
    }
    return 0;
}

int cmd_ablate(const AblateArgs& a, RunManifest& man) {
    auto b = load_bundle(a.m, man);
    const auto eval = load_eval_set(a.s, man);
    const auto spec = load_spans(a.spans, man);
    if (spec.entries.empty()) throw Error(ErrorKind::InvalidArgument, "ablate needs --spans naming the span to sweep");
    const auto seq = tokenize(a.prompt, b.vocab);
    SweepConfig sc;
    sc.grid = parse_grid(a.grid);
    sc.query = b.query;
    std::ostringstream ss;
    ss << std::setprecision(10) << "mode,start_block,weight,ap,p_k";
    for (const auto& l : eval.labels) ss << ",\"auc[" << l << "]\"";
    ss << '\n';
    const auto t0 = clock_type::now();
    for (auto mode : {ReweightMode::FromBlockOnward, ReweightMode::SingleBlock}) {
        for (int start = 1; start <= b.cfg.num_blocks; ++start) {
            EncoderConfig cfg = b.cfg;
            cfg.reweight_mode = mode;
            cfg.reweight_start_block = start;
            for (const auto& row : weight_sweep(seq, spec, sc, b.model, cfg, b.vocab, eval)) {
                ss << to_string(mode) << ',' << start << ',' << row.weight << ',';
                if (row.ap) ss << *row.ap;
                ss << ',';
                if (row.pk) ss << *row.pk;
                for (double v : row.auc) ss << ',' << v;
                ss << '\n';
            }
        }
    }
    man.timings["ablate"] = elapsed(t0);
    emit(a.out, ss.str(), man);
    return 0;
}

int cmd_inspect(const InspectArgs& a, RunManifest& man) {
    const auto j = nlohmann::json::parse(read_text(input(a.weights, man)));
    std::cout << std::setprecision(6);
    for (const auto& p : j) {
        std::cout << "class " << p.at("class").get<std::string>() << ": " << p.at("prompt_text").get<std::string>()
                  << '\n';
        const auto toks = p.at("token_strings").get<std::vector<std::string>>();
        const auto w = p.at("weights").get<std::vector<double>>();
        if (toks.size() != w.size() || toks.size() < 2) throw Error(ErrorKind::CountMismatch, "malformed weights file");
        double total = 0.0;
        for (std::size_t i = 1; i + 1 < w.size(); ++i) total += w[i];
        std::cout << "  position\ttoken\traw\tnormalized\n";
        for (std::size_t i = 1; i + 1 < w.size(); ++i) {
            std::cout << "  " << i << '\t' << toks[i] << '\t' << w[i] << '\t' << (total > 0 ? w[i] / total : 0.0)
                      << '\n';
        }
    }
    return 0;
}

int cmd_bench(const BenchArgs& a, RunManifest& man) {
    auto b = load_bundle(a.m, man);
    const auto seq = tokenize(a.prompt, b.vocab);
    std::vector<float> w(seq.size(), 1.0f);
    for (std::size_t i = 1; i + 1 < w.size(); ++i) w[i] = 0.5f + 0.25f * static_cast<float>(i % 5);
    if (a.plain_only) b.cfg.reweight_start_block = b.cfg.num_blocks + 1;
    const auto r = bench_encode(b.model, b.cfg, seq.ids, w, a.iterations);
    man.timings["plain"] = r.plain_seconds;
    man.timings["reweighted"] = r.reweighted_seconds;
    man.config["ratio"] = r.ratio;
    man.config["median_round_ratio"] = r.median_round_ratio;
    std::cout << std::setprecision(6) << "iterations " << r.iterations << '\n'
              << "plain_mean_ms " << 1e3 * r.plain_seconds / static_cast<double>(r.iterations) << '\n'
              << "reweighted_mean_ms " << 1e3 * r.reweighted_seconds / static_cast<double>(r.iterations) << '\n'
              << "ratio " << r.ratio << '\n'
              << "median_round_ratio " << r.median_round_ratio << '\n';
    return 0;
}

int cmd_serve(const ServeArgs& a, RunManifest& man) {
    const auto b = load_bundle(a.m, man);
    if (a.stores.size() != a.metadata.size()) {
        throw Error(ErrorKind::InvalidArgument, "give one --metadata per --store");
    }
    ServiceOptions so;
    so.top_k = a.top_k;
    so.query = b.query;
    Service service(b.model, b.cfg, b.vocab, so);
    for (std::size_t i = 0; i < a.stores.size(); ++i) {
        StoreArgs sa;
        sa.store = a.stores[i];
        sa.metadata = a.metadata[i];
        sa.attrs = a.attrs;
        auto eval = load_eval_set(sa, man);
        const auto id = eval.store.id;
        service.add_store(id, std::move(eval));
        std::cerr << "loaded store " << id << '\n';
    }
    const auto colon = a.addr.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--serve-addr must be host:port");
    int port = 0;
    try {
        port = std::stoi(a.addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument, "bad port in " + a.addr);
    }
    HttpServer server(service, a.static_dir.empty() ? "" : resolve_input(a.static_dir));
    const int bound = server.bind(a.addr.substr(0, colon), port);
    man.config["bound_port"] = bound;
    if (!man.path.empty()) man.write();
    std::cout << "listening on " << a.addr.substr(0, colon) << ':' << bound << std::endl;
    server.listen();
    return 0;
}

int cmd_make_toy(const MakeToyArgs& a, RunManifest& man) {
    fs::create_directories(a.out);
    const auto dir = fs::path(a.out);
    man.seed = a.seed;
    const auto vocab = make_word_vocabulary(fixture_words(), 24);
    SemanticModelOptions mo;
    mo.seed = a.seed;
    const auto model = make_semantic_model(vocab, fixture_words(), mo);
    auto out = [&](const char* name) {
        const auto p = (dir / name).string();
        man.outputs.push_back(p);
        return p;
    };
    save_model(model, out("model.safetensors"));
    save_vocabulary(vocab, out("vocab.json"), out("merges.txt"));

    SyntheticStoreOptions so;
    so.seed = a.seed;
    const auto store = make_synthetic_store(model, vocab, so);
    write_store(store.store, store.attributes, out("store.safetensors"), out("store.jsonl"));
    nlohmann::json spans = {{"default", 1.0}, {"entries", {{{"text", store.span}, {"weight", 1.5}}}}};
    write_file_atomic(out("spans.json"), spans.dump(2) + "\n");
    write_file_atomic(out("prompt.txt"), store.prompt + "\n");

    FewShotOptions fo;
    fo.seed = a.seed;
    const auto task = make_fewshot_task(model, vocab, fo);
    save_batch(task.train, out("fewshot_train.safetensors"));
    save_batch(task.test, out("fewshot_test.safetensors"));
    nlohmann::json prompts = nlohmann::json::array();
    for (const auto& s : task.sets) {
        prompts.push_back({{"label", s.label}, {"name", s.name}, {"prompts", {s.prompts[0].text}}});
    }
    write_file_atomic(out("prompts.json"), prompts.dump(2) + "\n");
    std::cout << "wrote toy model, vocabulary, store and few-shot data to " << a.out << '\n'
              << "prompt: " << store.prompt << '\n'
              << "attributes: female,blonde,eyeglasses\n";
    return 0;
}

}  // namespace tokweight::cli
