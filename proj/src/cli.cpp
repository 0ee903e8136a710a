#include "mbrec/cli.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbrec/common.hpp"
#include "mbrec/dataset.hpp"
#include "mbrec/decode.hpp"
#include "mbrec/eval.hpp"
#include "mbrec/io.hpp"
#include "mbrec/model.hpp"
#include "mbrec/rng.hpp"
#include "mbrec/synthetic.hpp"
#include "mbrec/tokenizer.hpp"
#include "mbrec/train.hpp"

namespace mbrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json RunManifest::to_json() const {
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["threads"] = threads;
    j["config"] = config;
    j["inputs"] = inputs;
    j["artifacts"] = artifacts;
    return j;
}

void RunManifest::write(const fs::path& out_dir) const {
    atomic_write_file(out_dir / "manifest.json", to_json().dump(2) + "\n");
}

namespace {

struct GlobalArgs {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::size_t threads = 1;
    json file_config = json::object();
};

fs::path ensure_out_dir(const GlobalArgs& g) {
    fs::path dir(g.out_dir);
    fs::create_directories(dir);
    return dir;
}

RunManifest start_manifest(const GlobalArgs& g, const std::string& command) {
    RunManifest man;
    man.command = command;
    man.seed = g.seed;
    man.threads = g.threads;
    return man;
}

void note_input(RunManifest& man, const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("input file not found: " + path);
    man.inputs[path] = file_hash_hex(path);
}

std::string read_input(RunManifest& man, const std::string& path) {
    note_input(man, path);
    return read_text_file(path);
}

void write_artifact(RunManifest& man, const fs::path& dir, const std::string& name,
                    const std::string& content) {
    atomic_write_file(dir / name, content);
    man.artifacts[name] = file_hash_hex(dir / name);
}

void note_artifact(RunManifest& man, const fs::path& dir, const std::string& name) {
    man.artifacts[name] = file_hash_hex(dir / name);
}

data::InteractionDataset load_dataset(RunManifest& man, const std::string& path) {
    data::IngestOptions opt;
    opt.min_count = 0;  // canonical exports are already filtered
    return data::ingest_text(read_input(man, path), opt);
}

template <typename Cfg>
Cfg section_config(const json& file_config, const char* key) {
    if (file_config.contains(key)) return Cfg::from_json(file_config.at(key));
    return Cfg{};
}

// ---- synth-data -------------------------------------------------------------

struct SynthArgs {
    std::string spec_path;
    std::size_t users = 2000;
};

int run_synth_data(const GlobalArgs& g, const SynthArgs& a) {
    RunManifest man = start_manifest(g, "synth-data");
    data::SyntheticSpec spec;
    if (!a.spec_path.empty()) {
        spec = data::SyntheticSpec::from_json(json::parse(read_input(man, a.spec_path)));
    } else {
        spec = data::planted_spec(a.users, g.seed);
    }
    spec.seed = g.seed;
    spec.validate();
    man.config["spec"] = spec.to_json();

    data::SyntheticOutput out = data::generate_synthetic(spec);
    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "dataset.tsv", out.dataset.export_text());
    write_artifact(man, dir, "features.tsv", data::features_to_tsv(out.dataset, out.features));
    write_artifact(man, dir, "bayes.json", out.bayes.to_json().dump(2) + "\n");
    man.write(dir);
    std::cout << "synth-data: " << out.dataset.user_count() << " users, "
              << out.dataset.item_count() << " items, " << out.dataset.total_events()
              << " events -> " << dir.string() << "\n";
    return 0;
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
    std::string input;
    int min_count = 5;
    std::string delimiter;
    std::vector<std::string> behaviors;
    std::string target;
    std::size_t max_users = 0;
};

int run_ingest(const GlobalArgs& g, const IngestArgs& a) {
    RunManifest man = start_manifest(g, "ingest");
    data::IngestOptions opt;
    opt.min_count = a.min_count;
    if (!a.delimiter.empty()) {
        if (a.delimiter.size() != 1) throw ConfigError("--delimiter takes a single character");
        opt.delimiter = a.delimiter[0];
    }
    opt.behavior_names = a.behaviors;
    opt.target_behavior = a.target;
    opt.max_users = a.max_users;
    man.config = {{"min_count", a.min_count},   {"delimiter", a.delimiter},
                  {"behaviors", a.behaviors},    {"target", a.target},
                  {"max_users", a.max_users}};

    data::InteractionDataset ds = data::ingest_text(read_input(man, a.input), opt);
    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "dataset.tsv", ds.export_text());
    man.write(dir);
    std::cout << "ingest: " << ds.user_count() << " users, " << ds.item_count() << " items, "
              << ds.total_events() << " events, target behavior '"
              << ds.behavior_names[static_cast<std::size_t>(ds.target_behavior)] << "' -> "
              << (dir / "dataset.tsv").string() << "\n";
    return 0;
}

// ---- fit-tokenizer ----------------------------------------------------------

struct FitArgs {
    std::string data;
    std::string features;
    bool sid = false;
    bool cid = false;
    bool rqvae = false;
    tok::TokenizerConfig cfg;
};

int run_fit_tokenizer(const GlobalArgs& g, const FitArgs& a) {
    const int kinds = static_cast<int>(a.sid) + static_cast<int>(a.cid) + static_cast<int>(a.rqvae);
    if (kinds != 1) throw ConfigError("choose exactly one of --sid, --cid, --rqvae");
    const std::string kind = a.sid ? "sid" : a.cid ? "cid" : "rqvae";

    RunManifest man = start_manifest(g, "fit-tokenizer");
    data::InteractionDataset ds = load_dataset(man, a.data);
    std::vector<std::vector<double>> features;
    if (kind != "cid") {
        if (a.features.empty())
            throw ConfigError("--features is required for --" + kind + " tokenizers");
        features = data::features_from_tsv(ds, read_input(man, a.features));
    }
    tok::TokenizerConfig cfg = a.cfg;
    cfg.seed = g.seed;
    cfg.validate();
    man.config = {{"kind", kind}, {"tokenizer", cfg.to_json()}};

    tok::TokenizerState state = tok::fit_tokenizer(ds, features, cfg, kind);
    const fs::path dir = ensure_out_dir(g);
    state.save(dir / "tokenizer.bin");
    note_artifact(man, dir, "tokenizer.bin");
    write_artifact(man, dir, "code_table.tsv", state.export_code_table());
    man.write(dir);
    std::cout << "fit-tokenizer: " << kind << " codes for " << state.codes.item_count()
              << " items (" << state.codes.levels << " levels, base " << state.codes.base
              << ", " << (state.codes.is_injective() ? "injective" : "with collisions") << ") -> "
              << (dir / "tokenizer.bin").string() << "\n";
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string tokenizer;
    model::ModelConfig mcfg;
    model::TrainConfig tcfg;
};

int run_train(const GlobalArgs& g, const TrainArgs& a) {
    RunManifest man = start_manifest(g, "train");
    data::InteractionDataset ds = load_dataset(man, a.data);
    note_input(man, a.tokenizer);
    tok::TokenizerState state = tok::TokenizerState::load(a.tokenizer);

    model::ModelConfig mcfg = a.mcfg;
    mcfg.set_vocabulary(state.vocabulary());
    mcfg.seed = g.seed;
    mcfg.validate();
    model::TrainConfig tcfg = a.tcfg;
    tcfg.seed = g.seed;
    tcfg.validate();
    man.config = {{"model", mcfg.to_json()}, {"train", tcfg.to_json()}};

    model::Model m(mcfg);
    model::TrainResult res = model::train(m, ds, state, tcfg);

    const fs::path dir = ensure_out_dir(g);
    m.save(dir / "model.ckpt", {{"best_valid_ndcg10", res.best_valid_ndcg10},
                                {"best_step", res.best_step},
                                {"steps_run", res.steps_run},
                                {"final_epoch_loss", res.final_epoch_loss}});
    note_artifact(man, dir, "model.ckpt");
    write_artifact(man, dir, "train_log.csv", model::train_log_csv(res.log));
    man.write(dir);
    std::cout << "train: " << res.steps_run << " steps, final epoch loss "
              << format_double(res.final_epoch_loss) << ", best validation NDCG@10 "
              << format_double(res.best_valid_ndcg10) << " at step " << res.best_step << " -> "
              << (dir / "model.ckpt").string() << "\n";
    return 0;
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
    std::string data;
    std::string tokenizer;
    std::string model;
    std::string task = "behavior-item";
    std::string split = "test";
    std::size_t beams = 50;
    std::size_t top_n = 10;
    std::size_t max_history = 50;
    std::size_t user_cap = 0;
    bool corpus_probs = false;
};

int run_predict(const GlobalArgs& g, const PredictArgs& a) {
    RunManifest man = start_manifest(g, "predict");
    if (a.model.empty() || !fs::exists(a.model))
        throw ConfigError("predict: model checkpoint not found: " + a.model);
    note_input(man, a.model);
    model::Model m = model::Model::load(a.model);
    data::InteractionDataset ds = load_dataset(man, a.data);
    note_input(man, a.tokenizer);
    tok::TokenizerState state = tok::TokenizerState::load(a.tokenizer);

    const eval::Task task = eval::task_from_name(a.task);
    const bool use_test = a.split == "test";
    if (!use_test && a.split != "valid")
        throw ConfigError("--split must be 'test' or 'valid', got '" + a.split + "'");
    man.config = {{"task", a.task},
                  {"split", a.split},
                  {"n_beams", a.beams},
                  {"top_n", a.top_n},
                  {"max_history", a.max_history},
                  {"user_cap", a.user_cap},
                  {"corpus_behavior_probs", a.corpus_probs}};

    const tok::Vocabulary vocab = state.vocabulary();
    const std::vector<std::size_t> rows = state.align_items(ds);
    const decode::CodeTrie trie(state.codes);
    std::vector<double> corpus_probs;
    if (a.corpus_probs) corpus_probs = eval::corpus_behavior_frequencies(ds);

    std::vector<std::size_t> users;
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        const data::Interaction& held = use_test ? ds.test_event(u) : ds.valid_event(u);
        if (task == eval::Task::target && held.behavior != ds.target_behavior) continue;
        users.push_back(u);
    }
    if (users.empty()) throw DataError("predict: no user qualifies for task '" + a.task + "'");
    if (a.user_cap > 0 && users.size() > a.user_cap) {
        Rng rng(derive_seed(g.seed, "predict-users", 0));
        rng.shuffle(users);
        users.resize(a.user_cap);
        std::sort(users.begin(), users.end());
    }

    std::ostringstream csv;
    csv << "user,rank,behavior,item,score\n";
    for (std::size_t u : users) {
        const data::UserHistory& user = ds.users[u];
        const std::vector<data::Interaction> history =
            use_test ? ds.history_for_test(u, a.max_history)
                     : ds.history_for_valid(u, a.max_history);
        const data::Interaction& held = use_test ? ds.test_event(u) : ds.valid_event(u);
        const std::vector<int> enc =
            tok::encoder_tokens_for(vocab, state.codes, rows, user.raw_id, history);
        decode::ModelSession session(m, enc);
        decode::RankedPrediction pred;
        switch (task) {
            case eval::Task::target:
                pred = decode::predict_target_behavior(session, trie, ds.target_behavior, a.beams,
                                                       a.top_n);
                break;
            case eval::Task::behavior_specific:
                pred = decode::predict_behavior_specific(session, trie, held.behavior, a.beams,
                                                         a.top_n);
                break;
            case eval::Task::behavior_item:
                pred = decode::predict_behavior_item(session, trie, a.beams, a.top_n);
                break;
            case eval::Task::behavior_aware:
                pred = decode::behavior_aware_sampling(session, trie, a.top_n, a.beams,
                                                       a.corpus_probs ? &corpus_probs : nullptr);
                break;
        }
        for (std::size_t r = 0; r < pred.entries.size(); ++r) {
            const decode::RankedEntry& e = pred.entries[r];
            csv << user.raw_id << ',' << (r + 1) << ','
                << state.behavior_names[static_cast<std::size_t>(e.behavior)] << ','
                << state.item_raw_ids[e.item] << ',' << format_double(e.score) << '\n';
        }
    }

    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "predictions.csv", csv.str());
    man.write(dir);
    std::cout << "predict: " << a.task << " on " << users.size() << " users -> "
              << (dir / "predictions.csv").string() << "\n";
    return 0;
}

// ---- evaluate ---------------------------------------------------------------

struct EvalArgs {
    std::string data;
    std::string tokenizer;
    std::string model;
    std::string task;
    std::string split;
    eval::EvalConfig cfg;
    std::vector<std::string> checks;
};

double metric_by_name(const eval::MetricsReport& report, const std::string& name) {
    if (name == "hr5") return report.hr5;
    if (name == "hr10") return report.hr10;
    if (name == "ndcg5") return report.ndcg5;
    if (name == "ndcg10") return report.ndcg10;
    if (name == "behavior_accuracy") return report.behavior_accuracy;
    throw ConfigError("unknown --check metric '" + name +
                      "' (expected hr5, hr10, ndcg5, ndcg10, or behavior_accuracy)");
}

int run_evaluate(const GlobalArgs& g, const EvalArgs& a) {
    RunManifest man = start_manifest(g, "evaluate");
    if (a.model.empty() || !fs::exists(a.model))
        throw ConfigError("evaluate: model checkpoint not found: " + a.model);
    note_input(man, a.model);
    model::Model m = model::Model::load(a.model);
    data::InteractionDataset ds = load_dataset(man, a.data);
    note_input(man, a.tokenizer);
    tok::TokenizerState state = tok::TokenizerState::load(a.tokenizer);

    eval::EvalConfig cfg = a.cfg;
    if (!a.task.empty()) cfg.task = eval::task_from_name(a.task);
    if (!a.split.empty()) {
        if (a.split != "test" && a.split != "valid")
            throw ConfigError("--split must be 'test' or 'valid', got '" + a.split + "'");
        cfg.use_test = a.split == "test";
    }
    cfg.seed = g.seed;
    man.config = {{"eval", cfg.to_json()}};

    const eval::MetricsReport report = eval::evaluate_task(m, ds, state, cfg);
    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "metrics.json", report.to_json().dump(2) + "\n");
    write_artifact(man, dir, "metrics.csv", report.to_csv());
    man.write(dir);
    std::cout << report.to_json().dump(2) << "\n";

    int code = 0;
    for (const std::string& check : a.checks) {
        const std::size_t eq = check.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--check expects metric=minimum, got '" + check + "'");
        const std::string name = check.substr(0, eq);
        const double minimum = std::stod(check.substr(eq + 1));
        const double actual = metric_by_name(report, name);
        if (actual + 1e-12 < minimum) {
            std::cout << "check failed: " << name << " = " << format_double(actual) << " < "
                      << format_double(minimum) << "\n";
            code = 1;
        } else {
            std::cout << "check passed: " << name << " = " << format_double(actual) << " >= "
                      << format_double(minimum) << "\n";
        }
    }
    return code;
}

// ---- analyze-codes ----------------------------------------------------------

struct AnalyzeArgs {
    std::string tokenizer;
};

int run_analyze_codes(const GlobalArgs& g, const AnalyzeArgs& a) {
    RunManifest man = start_manifest(g, "analyze-codes");
    note_input(man, a.tokenizer);
    tok::TokenizerState state = tok::TokenizerState::load(a.tokenizer);

    const std::vector<tok::CodeLevelStats> stats = tok::code_distribution_stats(state.codes);
    std::ostringstream csv;
    csv << "level,bins,variance,minimal_variance,max_count,nonempty_bins\n";
    for (const tok::CodeLevelStats& s : stats) {
        csv << s.level << ',' << format_double(s.bins) << ',' << format_double(s.variance) << ','
            << format_double(s.minimal_variance) << ',' << s.max_count << ',' << s.nonempty_bins
            << '\n';
    }
    const std::size_t collisions = tok::count_full_code_collisions(state.codes);
    json summary = {{"kind", state.kind},
                    {"items", state.codes.item_count()},
                    {"levels", state.codes.levels},
                    {"base", state.codes.base},
                    {"injective", state.codes.is_injective()},
                    {"full_code_collisions", collisions}};
    man.config = {{"tokenizer_kind", state.kind}};

    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "code_stats.csv", csv.str());
    write_artifact(man, dir, "code_summary.json", summary.dump(2) + "\n");
    man.write(dir);
    std::cout << csv.str() << summary.dump(2) << "\n";
    return 0;
}

// ---- sweep-beams ------------------------------------------------------------

struct SweepArgs {
    std::string data;
    std::string tokenizer;
    std::string model;
    std::string split;
    std::vector<std::size_t> beams = {10, 20, 50};
    eval::EvalConfig cfg;
};

int run_sweep_beams(const GlobalArgs& g, const SweepArgs& a) {
    RunManifest man = start_manifest(g, "sweep-beams");
    if (a.model.empty() || !fs::exists(a.model))
        throw ConfigError("sweep-beams: model checkpoint not found: " + a.model);
    note_input(man, a.model);
    model::Model m = model::Model::load(a.model);
    data::InteractionDataset ds = load_dataset(man, a.data);
    note_input(man, a.tokenizer);
    tok::TokenizerState state = tok::TokenizerState::load(a.tokenizer);

    eval::EvalConfig cfg = a.cfg;
    if (!a.split.empty()) {
        if (a.split != "test" && a.split != "valid")
            throw ConfigError("--split must be 'test' or 'valid', got '" + a.split + "'");
        cfg.use_test = a.split == "test";
    }
    cfg.seed = g.seed;
    man.config = {{"eval", cfg.to_json()}, {"beams", a.beams}};

    const std::string csv = eval::beam_count_sweep(m, ds, state, cfg, a.beams);
    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "beam_sweep.csv", csv);
    man.write(dir);
    std::cout << csv;
    return 0;
}

// ---- count-flops ------------------------------------------------------------

struct FlopsArgs {
    std::string model;
    model::ModelConfig mcfg;
    std::size_t encoder_len = 0;
    std::size_t decoder_len = 0;
};

int run_count_flops(const GlobalArgs& g, const FlopsArgs& a) {
    RunManifest man = start_manifest(g, "count-flops");
    model::ModelConfig cfg = a.mcfg;
    if (!a.model.empty()) {
        note_input(man, a.model);
        cfg = model::Model::load(a.model).config();
    }
    cfg.validate();
    const std::size_t enc_len = a.encoder_len > 0 ? a.encoder_len : cfg.max_encoder_len;
    const std::size_t dec_len = a.decoder_len > 0 ? a.decoder_len : cfg.max_decoder_len;
    const model::ParamFlopCounts counts = model::count_params_flops(cfg, enc_len, dec_len);
    man.config = {{"model", cfg.to_json()}, {"encoder_len", enc_len}, {"decoder_len", dec_len}};

    json out = {{"parameters", counts.parameters},
                {"forward_macs", counts.forward_macs},
                {"encoder_len", enc_len},
                {"decoder_len", dec_len}};
    const fs::path dir = ensure_out_dir(g);
    write_artifact(man, dir, "flops.json", out.dump(2) + "\n");
    man.write(dir);
    std::cout << out.dump(2) << "\n";
    return 0;
}

void add_model_options(CLI::App* sub, model::ModelConfig& cfg) {
    sub->add_option("--d-model", cfg.d_model, "residual stream width");
    sub->add_option("--d-inner", cfg.d_inner, "feed-forward hidden width");
    sub->add_option("--heads", cfg.heads, "attention heads");
    sub->add_option("--head-dim", cfg.head_dim, "width per attention head");
    sub->add_option("--encoder-layers", cfg.encoder_layers, "encoder depth");
    sub->add_option("--decoder-layers", cfg.decoder_layers, "decoder depth");
    sub->add_option("--experts", cfg.experts, "experts per sparse decoder feed-forward");
    sub->add_option("--inject-layers", cfg.inject_layers,
                    "leading layers that receive behavior context");
    sub->add_option("--d-behavior", cfg.d_behavior, "behavior embedding width");
    sub->add_option("--dropout", cfg.dropout, "training dropout rate");
    sub->add_option("--max-encoder-len", cfg.max_encoder_len, "encoder position table size");
    sub->add_option("--max-decoder-len", cfg.max_decoder_len, "decoder position table size");
}

}  // namespace

int run(int argc, const char* const* argv) {
    GlobalArgs g;

    // The config file is honored before flag parsing so explicit flags win.
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i] ? argv[i] : "";
        if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
        else if (arg.rfind("--config=", 0) == 0) config_path = arg.substr(9);
    }
    try {
        if (!config_path.empty()) {
            if (!fs::exists(config_path))
                throw ConfigError("config file not found: " + config_path);
            g.file_config = json::parse(read_text_file(config_path));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"multi-behavior generative recommendation pipeline"};
    app.require_subcommand(1);
    std::string config_flag;
    app.add_option("--config", config_flag, "JSON config file; explicit flags override it");
    app.add_option("--seed", g.seed, "global random seed for every stage");
    app.add_option("--out", g.out_dir, "output directory for artifacts and the run manifest")
        ->envname("MBREC_OUT");
    app.add_option("--threads", g.threads, "worker threads for module internals")
        ->check(CLI::PositiveNumber);

    int code = 0;
    auto make_sub = [&](const std::string& name, const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        return sub;
    };

    SynthArgs synth;
    CLI::App* synth_sub = make_sub("synth-data", "generate a planted-structure interaction log");
    synth_sub->add_option("--spec", synth.spec_path, "generator spec as JSON (default: planted)");
    synth_sub->add_option("--users", synth.users, "users for the default planted spec");
    synth_sub->callback([&] { code = run_synth_data(g, synth); });

    IngestArgs ingest;
    CLI::App* ingest_sub = make_sub("ingest", "parse an interaction log into canonical form");
    ingest_sub->add_option("--input", ingest.input, "raw interaction file")->required();
    ingest_sub->add_option("--min-count", ingest.min_count,
                           "drop items below this training-region count (0 keeps all)");
    ingest_sub->add_option("--delimiter", ingest.delimiter, "field separator (default: detect)");
    ingest_sub->add_option("--behaviors", ingest.behaviors, "behavior vocabulary, in order")
        ->delimiter(',');
    ingest_sub->add_option("--target", ingest.target, "target behavior name");
    ingest_sub->add_option("--max-users", ingest.max_users, "keep only the first N users");
    ingest_sub->callback([&] { code = run_ingest(g, ingest); });

    FitArgs fit;
    fit.cfg = section_config<tok::TokenizerConfig>(g.file_config, "tokenizer");
    CLI::App* fit_sub = make_sub("fit-tokenizer", "fit item codes and the token vocabulary");
    fit_sub->add_option("--data", fit.data, "canonical dataset")->required();
    fit_sub->add_option("--features", fit.features, "item feature TSV (sid and rqvae)");
    fit_sub->add_flag("--sid", fit.sid, "balanced semantic ids from item features");
    fit_sub->add_flag("--cid", fit.cid, "balanced collision-free ids, feature-free");
    fit_sub->add_flag("--rqvae", fit.rqvae, "residual-quantizer baseline ids");
    fit_sub->add_option("--levels", fit.cfg.levels, "digits per item code");
    fit_sub->add_option("--codes-per-level", fit.cfg.codes_per_level, "code values per digit");
    fit_sub->add_option("--user-buckets", fit.cfg.user_buckets, "hashed user token pool");
    fit_sub->callback([&] { code = run_fit_tokenizer(g, fit); });

    TrainArgs train;
    train.mcfg = section_config<model::ModelConfig>(g.file_config, "model");
    train.tcfg = section_config<model::TrainConfig>(g.file_config, "train");
    CLI::App* train_sub = make_sub("train", "train the sequence model on a tokenized dataset");
    train_sub->add_option("--data", train.data, "canonical dataset")->required();
    train_sub->add_option("--tokenizer", train.tokenizer, "fitted tokenizer state")->required();
    add_model_options(train_sub, train.mcfg);
    train_sub->add_option("--epochs", train.tcfg.epochs, "training epochs");
    train_sub->add_option("--batch-size", train.tcfg.batch_size, "examples per optimizer step");
    train_sub->add_option("--lr", train.tcfg.learning_rate, "peak learning rate");
    train_sub->add_option("--weight-decay", train.tcfg.weight_decay, "decoupled weight decay");
    train_sub->add_option("--warmup", train.tcfg.warmup_steps, "linear warmup steps");
    train_sub->add_flag("--sliding-window", train.tcfg.sliding_window,
                        "one example per training position");
    train_sub->add_option("--max-history", train.tcfg.max_history, "encoder history length");
    train_sub->add_option("--eval-every", train.tcfg.eval_every,
                          "steps between validations (0: each epoch end)");
    train_sub->add_option("--valid-beams", train.tcfg.valid_beams, "beams for validation decoding");
    train_sub->add_option("--valid-user-cap", train.tcfg.valid_user_cap,
                          "validation subsample size (0: all users)");
    train_sub->callback([&] { code = run_train(g, train); });

    PredictArgs predict;
    CLI::App* predict_sub = make_sub("predict", "dump ranked predictions per user as CSV");
    predict_sub->add_option("--data", predict.data, "canonical dataset")->required();
    predict_sub->add_option("--tokenizer", predict.tokenizer, "fitted tokenizer state")->required();
    predict_sub->add_option("--model", predict.model, "trained checkpoint")->required();
    predict_sub->add_option("--task", predict.task,
                            "target, behavior-specific, behavior-item, or behavior-aware");
    predict_sub->add_option("--split", predict.split, "test or valid");
    predict_sub->add_option("--beams", predict.beams, "beam width");
    predict_sub->add_option("--top-n", predict.top_n, "entries per user");
    predict_sub->add_option("--max-history", predict.max_history, "encoder history length");
    predict_sub->add_option("--users", predict.user_cap, "user subsample size (0: all users)");
    predict_sub->add_flag("--corpus-probs", predict.corpus_probs,
                          "allocate behavior-aware slots from training frequencies");
    predict_sub->callback([&] { code = run_predict(g, predict); });

    EvalArgs evaluate;
    evaluate.cfg = section_config<eval::EvalConfig>(g.file_config, "eval");
    CLI::App* eval_sub = make_sub("evaluate", "leave-one-out metrics for one task");
    eval_sub->add_option("--data", evaluate.data, "canonical dataset")->required();
    eval_sub->add_option("--tokenizer", evaluate.tokenizer, "fitted tokenizer state")->required();
    eval_sub->add_option("--model", evaluate.model, "trained checkpoint")->required();
    eval_sub->add_option("--task", evaluate.task,
                         "target, behavior-specific, behavior-item, or behavior-aware");
    eval_sub->add_option("--split", evaluate.split, "test or valid");
    eval_sub->add_option("--beams", evaluate.cfg.n_beams, "beam width");
    eval_sub->add_option("--top-n", evaluate.cfg.top_n, "ranking cutoff");
    eval_sub->add_option("--max-history", evaluate.cfg.max_history, "encoder history length");
    eval_sub->add_option("--users", evaluate.cfg.user_cap, "user subsample size (0: all users)");
    eval_sub->add_flag("--corpus-probs", evaluate.cfg.corpus_behavior_probs,
                       "allocate behavior-aware slots from training frequencies");
    eval_sub->add_option("--check", evaluate.checks,
                         "metric=minimum; any failed check exits with status 1");
    eval_sub->callback([&] { code = run_evaluate(g, evaluate); });

    AnalyzeArgs analyze;
    CLI::App* analyze_sub = make_sub("analyze-codes", "code distribution statistics per level");
    analyze_sub->add_option("--tokenizer", analyze.tokenizer, "fitted tokenizer state")
        ->required();
    analyze_sub->callback([&] { code = run_analyze_codes(g, analyze); });

    SweepArgs sweep;
    sweep.cfg = section_config<eval::EvalConfig>(g.file_config, "eval");
    CLI::App* sweep_sub = make_sub("sweep-beams", "behavior-item metrics across beam widths");
    sweep_sub->add_option("--data", sweep.data, "canonical dataset")->required();
    sweep_sub->add_option("--tokenizer", sweep.tokenizer, "fitted tokenizer state")->required();
    sweep_sub->add_option("--model", sweep.model, "trained checkpoint")->required();
    sweep_sub->add_option("--beams", sweep.beams, "beam widths to sweep")->delimiter(',');
    sweep_sub->add_option("--split", sweep.split, "test or valid");
    sweep_sub->add_option("--top-n", sweep.cfg.top_n, "ranking cutoff");
    sweep_sub->add_option("--max-history", sweep.cfg.max_history, "encoder history length");
    sweep_sub->add_option("--users", sweep.cfg.user_cap, "user subsample size (0: all users)");
    sweep_sub->callback([&] { code = run_sweep_beams(g, sweep); });

    FlopsArgs flops;
    flops.mcfg = section_config<model::ModelConfig>(g.file_config, "model");
    CLI::App* flops_sub = make_sub("count-flops", "closed-form parameter and compute accounting");
    flops_sub->add_option("--model", flops.model, "checkpoint to read the configuration from");
    add_model_options(flops_sub, flops.mcfg);
    flops_sub->add_option("--encoder-len", flops.encoder_len,
                          "encoder tokens per forward (default: table size)");
    flops_sub->add_option("--decoder-len", flops.decoder_len,
                          "decoder tokens per forward (default: table size)");
    flops_sub->callback([&] { code = run_count_flops(g, flops); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int parse_code = app.exit(e);
        return parse_code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return code;
}

}  // namespace mbrec::cli
