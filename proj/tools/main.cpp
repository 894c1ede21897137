#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "tokweight/error.hpp"

using namespace tokweight::cli;

namespace {

void add_model_options(CLI::App* sub, ModelArgs& m) {
    sub->add_option("--model", m.model, "Model weights (tensor container)")->required();
    sub->add_option("--name-map", m.name_map, "Tensor name map JSON for foreign checkpoints");
    sub->add_option("--vocab", m.vocab, "BPE vocabulary JSON (default: next to the model, else clip/vocab.json)");
    sub->add_option("--merges", m.merges, "BPE merges file");
    sub->add_option("--reweight-start", m.reweight_start, "First reweighted block, 1-based (0 = model default)");
    sub->add_option("--reweight-mode", m.reweight_mode, "from | single")->capture_default_str();
    sub->add_option("--method", m.method, "reweight | blend")->capture_default_str();
    sub->add_option("--inject-block", m.inject_block, "Block where blending is applied (0 = reweight start)");
}

void add_store_options(CLI::App* sub, StoreArgs& s) {
    sub->add_option("--store", s.store, "Store embeddings (tensor container with 'embeddings')")->required();
    sub->add_option("--metadata", s.metadata, "Store metadata JSONL")->required();
    sub->add_option("--attrs", s.attrs, "Comma-separated attributes defining categories");
    sub->add_option("--target", s.target, "Attribute whose items count as relevant for AP and P@k");
    sub->add_option("--sample", s.sample, "Items per category (0 = all)");
    sub->add_option("--seed", s.seed, "Sampling seed");
}

nlohmann::ordered_json snapshot(const CLI::App* sub) {
    nlohmann::ordered_json j;
    for (const auto* opt : sub->get_options()) {
        const auto name = opt->get_single_name();
        if (name.empty() || name == "help") continue;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            j[name] = res.size() == 1 ? nlohmann::ordered_json(res[0]) : nlohmann::ordered_json(res);
        } else {
            j[name] = opt->get_default_str();
        }
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token-weighted text encoding, training and retrieval"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML config file; flags override it")->check(CLI::ExistingFile);
    std::string manifest_path;
    app.add_option("--manifest", manifest_path, "Write a JSON run manifest here");

    EncodeArgs enc;
    auto* s_encode = app.add_subcommand("encode", "Encode a prompt with span weights");
    add_model_options(s_encode, enc.m);
    s_encode->add_option("--prompt", enc.prompt)->required();
    s_encode->add_option("--spans", enc.spans, "Span weight spec (JSON file or inline JSON)");
    s_encode->add_option("--out", enc.out, "Write the embedding to this tensor file");

    TrainArgs tr;
    auto* s_train = app.add_subcommand("train", "Learn token weights from few-shot data");
    add_model_options(s_train, tr.m);
    s_train->add_option("--prompts", tr.prompts, "Class prompts JSON")->required();
    s_train->add_option("--data", tr.data, "Training images/labels tensor file")->required();
    s_train->add_option("--eval-data", tr.eval_data, "Held-out images/labels tensor file");
    s_train->add_option("--weights-out", tr.weights_out)->capture_default_str();
    s_train->add_option("--loss-out", tr.loss_out)->capture_default_str();
    s_train->add_option("--shots", tr.shots)->capture_default_str();
    s_train->add_option("--epochs", tr.epochs)->capture_default_str();
    s_train->add_option("--lr", tr.lr)->capture_default_str();
    s_train->add_option("--tau", tr.tau)->capture_default_str();
    s_train->add_option("--batch-size", tr.batch_size)->capture_default_str();
    s_train->add_option("--seed", tr.seed)->capture_default_str();

    RetrieveArgs rt;
    auto* s_retrieve = app.add_subcommand("retrieve", "Rank a store against a weighted prompt");
    add_model_options(s_retrieve, rt.m);
    add_store_options(s_retrieve, rt.s);
    s_retrieve->add_option("--prompt", rt.prompt)->required();
    s_retrieve->add_option("--spans", rt.spans);
    s_retrieve->add_option("--top-k", rt.top_k)->capture_default_str();
    s_retrieve->add_option("--out", rt.out, "CSV output (default stdout)");

    EvalArgs ev;
    auto* s_eval = app.add_subcommand("eval", "Sweep a span weight and report retrieval metrics");
    add_model_options(s_eval, ev.m);
    add_store_options(s_eval, ev.s);
    s_eval->add_option("--prompt", ev.prompt)->required();
    s_eval->add_option("--spans", ev.spans)->required();
    s_eval->add_option("--grid", ev.grid, "Comma-separated weights")->capture_default_str();
    s_eval->add_option("--k", ev.k, "Cutoff for P@k (0 = number of positives)");
    s_eval->add_option("--out", ev.out, "Metrics CSV (default stdout)");
    s_eval->add_option("--curves-out", ev.curves_out, "Per-category retrieval curves CSV");

    AblateArgs ab;
    auto* s_ablate = app.add_subcommand("ablate", "Sweep every reweight start block in both modes");
    add_model_options(s_ablate, ab.m);
    add_store_options(s_ablate, ab.s);
    s_ablate->add_option("--prompt", ab.prompt)->required();
    s_ablate->add_option("--spans", ab.spans)->required();
    s_ablate->add_option("--grid", ab.grid)->capture_default_str();
    s_ablate->add_option("--out", ab.out);

    InspectArgs in;
    auto* s_inspect = app.add_subcommand("inspect", "Show trained token weights");
    s_inspect->add_option("--weights", in.weights, "Trained weights JSON")->required();

    BenchArgs bn;
    auto* s_bench = app.add_subcommand("bench", "Time reweighted against plain encoding");
    add_model_options(s_bench, bn.m);
    s_bench->add_option("--prompt", bn.prompt)->required();
    s_bench->add_option("--iterations", bn.iterations)->capture_default_str();
    s_bench->add_flag("--plain-only", bn.plain_only, "Time plain against plain");

    ServeArgs sv;
    auto* s_serve = app.add_subcommand("serve", "Serve the interactive JSON API");
    add_model_options(s_serve, sv.m);
    s_serve->add_option("--store", sv.stores)->required();
    s_serve->add_option("--metadata", sv.metadata)->required();
    s_serve->add_option("--attrs", sv.attrs);
    s_serve->add_option("--serve-addr", sv.addr)->capture_default_str();
    s_serve->add_option("--static", sv.static_dir, "Directory of static UI assets");
    s_serve->add_option("--top-k", sv.top_k)->capture_default_str();

    MakeToyArgs mt;
    auto* s_toy = app.add_subcommand("make-toy", "Write the toy model, store and few-shot data");
    s_toy->add_option("--out", mt.out)->capture_default_str();
    s_toy->add_option("--seed", mt.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    RunManifest man;
    man.path = manifest_path;
    const auto t0 = std::chrono::steady_clock::now();
    int rc = 0;
    try {
        for (auto* sub : app.get_subcommands()) {
            man.command = sub->get_name();
            man.config = snapshot(sub);
            if (sub == s_encode) rc = cmd_encode(enc, man);
            else if (sub == s_train) rc = cmd_train(tr, man);
            else if (sub == s_retrieve) rc = cmd_retrieve(rt, man);
            else if (sub == s_eval) rc = cmd_eval(ev, man);
            else if (sub == s_ablate) rc = cmd_ablate(ab, man);
            else if (sub == s_inspect) rc = cmd_inspect(in, man);
            else if (sub == s_bench) rc = cmd_bench(bn, man);
            else if (sub == s_serve) rc = cmd_serve(sv, man);
            else if (sub == s_toy) rc = cmd_make_toy(mt, man);
        }
        man.timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!man.path.empty()) man.write();
    } catch (const tokweight::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.is_validation() ? 2 : 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: Parse: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return rc;
}
