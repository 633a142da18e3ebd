// mapn: command-line driver for the MAPN library.
//
//   mapn generate  --kind homophilous-sbm ...    synthetic dataset bundle
//   mapn ingest    --nodes --edges --features     normalized dataset bundle
//   mapn train     --dataset synth-sbm ...        checkpoint + metrics
//   mapn embed     --run <train dir>              embeddings.tsv
//   mapn eval      --run <train dir> | --dataset  probe accuracy
//   mapn diagnose  curvature|theorem1|theorem2|smoothing
//   mapn sweep-k   --k-list 1,2,3,4               K,accuracy_mean,accuracy_std
//
// Every run writes into a fresh directory <out-dir>/<timestamp>-seed<N>
// (or --run-id). Settings come from built-in defaults, then --config, then
// flags.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mapn/mapn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mapn;

namespace {

// ------------------------------------------------------------ settings

struct Setting {
    std::string section, key, flag, help;
};

// Order here is the order of --help and of the config echo.
const std::vector<Setting> kSettings = {
    {"data", "dataset", "--dataset",
     "dataset: synth-sbm | synth-sbm-hetero | synth-academic | cycle<N> | complete<N> | circulant<N>-<j1,j2..> | "
     "bundle directory"},
    {"data", "meta_paths", "--meta-paths", "comma-separated meta-paths type-rel-type[...]; empty = defaults"},
    {"data", "corpus", "--corpus", "graph corpus: cycle-star or a corpus manifest.json"},
    {"model", "d", "--d", "embedding dimension (even)"},
    {"model", "K", "--K", "hop count of the asynchronous layers"},
    {"model", "L", "--L", "number of asynchronous layers"},
    {"model", "ssm_state", "--ssm-state", "SSM state size per channel"},
    {"model", "ssm_init_scale", "--ssm-init-scale", "std of SSM B, C and gate weights at init"},
    {"model", "ssm_input", "--ssm-input", "SSM input items: weighted | raw"},
    {"model", "hop_skip", "--hop-skip", "hop-level skip connection"},
    {"model", "layer_skip", "--layer-skip", "layer-level (initial) skip connection"},
    {"model", "lap_pe", "--lap-pe", "append Laplacian positional encodings"},
    {"model", "lap_pe_k", "--lap-pe-k", "number of Laplacian eigenvectors"},
    {"train", "lr", "--lr", "AdamW learning rate"},
    {"train", "weight_decay", "--weight-decay", "decoupled weight decay"},
    {"train", "epochs", "--epochs", "maximum number of epochs"},
    {"train", "scheduler", "--scheduler", "cosine-warm-restarts | reduce-on-plateau | none"},
    {"train", "cosine_t0", "--cosine-t0", "epochs in the first cosine cycle"},
    {"train", "cosine_t_mult", "--cosine-t-mult", "cycle length multiplier"},
    {"train", "cosine_lr_min", "--cosine-lr-min", "cosine floor"},
    {"train", "plateau_factor", "--plateau-factor", "lr factor on plateau"},
    {"train", "plateau_patience", "--plateau-patience", "non-improving epochs before a cut"},
    {"train", "negatives", "--negatives", "negatives per positive pair"},
    {"train", "window", "--window", "co-occurrence window of the meta-path walks"},
    {"train", "resample_every", "--resample-every", "redraw samples every E epochs (0 = never)"},
    {"train", "supervised", "--supervised", "add a cross-entropy head on the probe training rows"},
    {"walk", "restart_p", "--restart-p", "RWR restart probability"},
    {"walk", "walk_length", "--walk-length", "RWR walk length"},
    {"walk", "walks_per_node", "--walks-per-node", "RWR walks per node"},
    {"walk", "k", "--k-neighbors", "sampled neighbors per type"},
    {"probe", "train_frac", "--train-frac", "probe training fraction"},
    {"probe", "val_frac", "--val-frac", "probe validation fraction"},
    {"probe", "test_frac", "--test-frac", "probe test fraction"},
    {"probe", "splits", "--splits", "random probe splits"},
    {"probe", "folds", "--folds", "cross-validation folds (graph task)"},
    {"diagnose", "laziness", "--laziness", "curvature: self mass of the neighborhood measure"},
    {"diagnose", "p", "--p", "Jacobian p-norm"},
    {"diagnose", "layers", "--layers", "layers of the reference model"},
    {"diagnose", "nodes", "--nodes", "nodes of the generated regular graph"},
    {"diagnose", "dim", "--dim", "feature dimension of the reference model"},
    {"diagnose", "weights", "--weights", "reference weights: identity | scaled-orthogonal"},
    {"diagnose", "activation", "--activation", "identity | tanh | leaky-relu"},
    {"sweep", "k_list", "--k-list", "comma-separated hop counts"},
};

json default_settings() {
    const TrainConfig t;
    const ProbeConfig p;
    json j;
    j["data"] = {{"dataset", ""}, {"meta_paths", ""}, {"corpus", "cycle-star"}};
    j["model"] = {{"d", t.model.d},
                  {"K", t.model.K},
                  {"L", t.model.L},
                  {"ssm_state", t.model.ssm_state},
                  {"ssm_init_scale", t.model.ssm_init_scale},
                  {"ssm_input", to_string(t.model.ssm_input)},
                  {"hop_skip", t.model.hop_skip},
                  {"layer_skip", t.model.layer_skip},
                  {"lap_pe", t.model.use_lap_pe},
                  {"lap_pe_k", t.model.lap_pe_k}};
    j["train"] = {{"lr", t.learning_rate},
                  {"weight_decay", t.weight_decay},
                  {"epochs", t.max_epochs},
                  {"scheduler", to_string(t.scheduler)},
                  {"cosine_t0", t.cosine_T0},
                  {"cosine_t_mult", t.cosine_T_mult},
                  {"cosine_lr_min", t.cosine_lr_min},
                  {"plateau_factor", t.plateau_factor},
                  {"plateau_patience", t.plateau_patience},
                  {"negatives", t.negatives_per_positive},
                  {"window", t.window},
                  {"resample_every", t.resample_every},
                  {"supervised", t.supervised}};
    j["walk"] = {{"restart_p", t.walk.restart_p},
                 {"walk_length", t.walk.walk_length},
                 {"walks_per_node", t.walk.walks_per_node},
                 {"k", t.walk.default_k}};
    j["probe"] = {{"train_frac", p.train_frac}, {"val_frac", p.val_frac}, {"test_frac", p.test_frac},
                  {"splits", p.splits},         {"folds", 10}};
    j["diagnose"] = {{"laziness", 0.0}, {"p", 2.0},      {"layers", 2},
                     {"nodes", 12},     {"dim", 4},       {"weights", "scaled-orthogonal"},
                     {"activation", "identity"}};
    j["sweep"] = {{"k_list", "1,2,3,4"}};
    return j;
}

std::string display(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

/// Sets j[section][key] from flag text, typed after the default value.
void set_from_text(json& j, const Setting& s, const std::string& text) {
    json& slot = j[s.section][s.key];
    try {
        if (slot.is_boolean()) {
            if (text == "true" || text == "1" || text == "on") slot = true;
            else if (text == "false" || text == "0" || text == "off") slot = false;
            else fail(ErrorCode::usage, s.flag + ": expected true or false, got '" + text + "'");
        } else if (slot.is_number_unsigned() || slot.is_number_integer()) {
            std::size_t pos = 0;
            const long long v = std::stoll(text, &pos);
            require(pos == text.size(), ErrorCode::usage, s.flag + ": expected an integer, got '" + text + "'");
            require(v >= 0, ErrorCode::usage, s.flag + ": must be non-negative");
            slot = static_cast<std::uint64_t>(v);
        } else if (slot.is_number()) {
            std::size_t pos = 0;
            const double v = std::stod(text, &pos);
            require(pos == text.size(), ErrorCode::usage, s.flag + ": expected a number, got '" + text + "'");
            slot = v;
        } else {
            slot = text;
        }
    } catch (const std::invalid_argument&) {
        fail(ErrorCode::usage, s.flag + ": cannot parse '" + text + "'");
    } catch (const std::out_of_range&) {
        fail(ErrorCode::usage, s.flag + ": value out of range");
    }
}

/// Merges a config file into the defaults. Unknown sections/keys and type
/// changes are rejected.
void merge_config(json& j, const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::io, "cannot open config file '" + path.string() + "'");
    json file;
    try {
        in >> file;
    } catch (const json::exception& e) {
        fail(ErrorCode::parse, path.string() + ": " + e.what());
    }
    require(file.is_object(), ErrorCode::parse, path.string() + ": expected a JSON object");
    for (const auto& [section, body] : file.items()) {
        require(j.contains(section), ErrorCode::usage, path.string() + ": unknown section '" + section + "'");
        require(body.is_object(), ErrorCode::parse, path.string() + ": section '" + section + "' must be an object");
        for (const auto& [key, v] : body.items()) {
            require(j[section].contains(key), ErrorCode::usage,
                    path.string() + ": unknown key '" + section + "." + key + "'");
            json& slot = j[section][key];
            const bool ok = (slot.is_boolean() && v.is_boolean()) || (slot.is_string() && v.is_string()) ||
                            (slot.is_number_integer() && v.is_number_integer() && v.get<long long>() >= 0) ||
                            (slot.is_number_float() && v.is_number());
            require(ok, ErrorCode::usage,
                    path.string() + ": '" + section + "." + key + "' has the wrong type (default " + slot.dump() + ")");
            slot = slot.is_number_float() ? json(v.get<double>()) : v;
        }
    }
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        require(!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos, ErrorCode::usage,
                what + ": expected comma-separated non-negative integers, got '" + text + "'");
        out.push_back(std::stoull(tok));
    }
    require(!out.empty(), ErrorCode::usage, what + ": empty list");
    return out;
}

TrainConfig train_config(const json& j, std::uint64_t seed, std::size_t workers) {
    TrainConfig t;
    const auto& m = j["model"];
    t.model.d = m["d"];
    t.model.K = m["K"];
    t.model.L = m["L"];
    t.model.ssm_state = m["ssm_state"];
    t.model.ssm_init_scale = m["ssm_init_scale"];
    t.model.ssm_input = parse_ssm_input(m["ssm_input"]);
    t.model.hop_skip = m["hop_skip"];
    t.model.layer_skip = m["layer_skip"];
    t.model.use_lap_pe = m["lap_pe"];
    t.model.lap_pe_k = m["lap_pe_k"];
    const auto& r = j["train"];
    t.learning_rate = r["lr"];
    t.weight_decay = r["weight_decay"];
    t.max_epochs = r["epochs"];
    t.scheduler = parse_scheduler(r["scheduler"]);
    t.cosine_T0 = r["cosine_t0"];
    t.cosine_T_mult = r["cosine_t_mult"];
    t.cosine_lr_min = r["cosine_lr_min"];
    t.plateau_factor = r["plateau_factor"];
    t.plateau_patience = r["plateau_patience"];
    t.negatives_per_positive = r["negatives"];
    t.window = r["window"];
    t.resample_every = r["resample_every"];
    t.supervised = r["supervised"];
    const auto& w = j["walk"];
    t.walk.restart_p = w["restart_p"];
    t.walk.walk_length = w["walk_length"];
    t.walk.walks_per_node = w["walks_per_node"];
    t.walk.default_k = w["k"];
    t.seed = seed;
    t.walk.seed = seed;
    t.workers = workers;
    t.validate();
    return t;
}

ProbeConfig probe_config(const json& j, std::uint64_t seed) {
    ProbeConfig p;
    p.train_frac = j["probe"]["train_frac"];
    p.val_frac = j["probe"]["val_frac"];
    p.test_frac = j["probe"]["test_frac"];
    p.splits = j["probe"]["splits"];
    p.seed = seed;
    require(p.splits >= 1, ErrorCode::usage, "--splits must be >= 1");
    require(std::abs(p.train_frac + p.val_frac + p.test_frac - 1.0) < 1e-9, ErrorCode::usage,
            "probe: split fractions must sum to 1");
    return p;
}

// ------------------------------------------------------------ datasets

std::size_t parse_count(const std::string& text, const std::string& name) {
    require(!text.empty() && text.find_first_not_of("0123456789") == std::string::npos, ErrorCode::usage,
            "dataset '" + name + "': bad node count");
    return std::stoull(text);
}

/// Built-in names or a bundle directory (as written by generate/ingest).
HeteroGraph load_dataset(const std::string& name, std::uint64_t seed) {
    if (name == "synth-sbm" || name == "synth-sbm-hetero" || name == "synth-academic") {
        const auto kind = name == "synth-sbm"         ? SyntheticKind::homophilous_sbm
                          : name == "synth-sbm-hetero" ? SyntheticKind::heterophilous_sbm
                                                       : SyntheticKind::hetero_academic;
        SyntheticSpec s = SyntheticSpec::for_kind(kind);
        s.seed = seed;
        return generate_synthetic(s);
    }
    if (name.rfind("circulant", 0) == 0) {
        const auto dash = name.find('-');
        require(dash != std::string::npos, ErrorCode::usage, "dataset '" + name + "': expected circulant<N>-<j1,j2,..>");
        const std::size_t n = parse_count(name.substr(9, dash - 9), name);
        const auto jumps = parse_size_list(name.substr(dash + 1), "dataset '" + name + "'");
        for (auto j : jumps) require(j >= 1 && 2 * j <= n, ErrorCode::usage, "dataset '" + name + "': jump out of range");
        return make_circulant(n, jumps, 1, seed);
    }
    if (name.rfind("cycle", 0) == 0 && name.size() > 5 && name != "cycle-star") {
        const std::size_t n = parse_count(name.substr(5), name);
        require(n >= 3, ErrorCode::usage, "dataset '" + name + "': a cycle needs >= 3 nodes");
        return make_cycle(n, 1, seed);
    }
    if (name.rfind("complete", 0) == 0 && name.size() > 8) {
        const std::size_t n = parse_count(name.substr(8), name);
        require(n >= 2, ErrorCode::usage, "dataset '" + name + "': needs >= 2 nodes");
        return make_complete(n, 1, seed);
    }
    const fs::path dir(name);
    if (fs::exists(dir / "nodes.tsv")) return load_graph_dir(dir);
    if (fs::exists(dir / "dataset" / "nodes.tsv")) return load_graph_dir(dir / "dataset");
    fail(ErrorCode::usage, "unknown dataset '" + name + "' (not a built-in name or a bundle directory)");
}

std::vector<HeteroGraph> load_graph_corpus(const std::string& name, std::uint64_t seed) {
    if (name == "cycle-star") return make_cycle_star_corpus(50, 6, 12, 2, seed);
    fs::path p(name);
    if (fs::is_directory(p)) p = fs::exists(p / "corpus" / "manifest.json") ? p / "corpus" / "manifest.json"
                                                                           : p / "manifest.json";
    return load_corpus(p);
}

std::vector<MetaPath> meta_paths_for(const HeteroGraph& g, const std::string& text) {
    if (text.empty()) return default_meta_paths(g);
    std::vector<MetaPath> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(parse_meta_path(g, tok));
    require(!out.empty(), ErrorCode::usage, "--meta-paths: no meta-path given");
    return out;
}

// ------------------------------------------------------------ output

struct Run {
    fs::path dir;
};

Run make_run(const fs::path& out_dir, const std::string& run_id, std::uint64_t seed) {
    fs::create_directories(out_dir);
    Run r;
    if (!run_id.empty()) {
        r.dir = out_dir / run_id;
        require(!fs::exists(r.dir), ErrorCode::io, "run directory '" + r.dir.string() + "' already exists");
    } else {
        const std::time_t now = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream os;
        os << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << "-seed" << seed;
        r.dir = out_dir / os.str();
        for (int i = 1; fs::exists(r.dir); ++i) r.dir = out_dir / (os.str() + "-" + std::to_string(i));
    }
    fs::create_directories(r.dir);
    return r;
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    require(out.good(), ErrorCode::io, "cannot write '" + p.string() + "'");
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    require(in.good(), ErrorCode::io, "cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse, p.string() + ": " + e.what());
    }
}

class CsvWriter {
public:
    CsvWriter(const fs::path& p, const std::string& header) : out_(p) {
        require(out_.good(), ErrorCode::io, "cannot write '" + p.string() + "'");
        out_ << header << '\n';
        out_ << std::setprecision(17);
    }
    template <class... T>
    void row(const T&... xs) {
        bool first = true;
        ((out_ << (first ? "" : ",") << xs, first = false), ...);
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

json report_json(const ClassificationReport& r) {
    return {{"accuracy_mean", r.mean}, {"accuracy_std", r.std}, {"accuracies", r.accuracies},
            {"chosen_l2", r.chosen_l2}, {"redraws", r.redraws},  {"degenerate", r.degenerate}};
}

// ------------------------------------------------------------ commands

struct Globals {
    std::string config;
    std::uint64_t seed = 7;
    std::size_t workers = 1;
    std::string out_dir = "runs";
    std::string run_id;
    bool dump_samples = false;
};

struct Context {
    Globals g;
    json settings;  // effective settings
};

json config_echo(const Context& c, const std::string& command) {
    json e = c.settings;
    e["run"] = {{"command", command}, {"seed", c.g.seed}, {"workers", c.g.workers}};
    return e;
}

std::string dataset_or(const Context& c, const std::string& fallback) {
    const std::string d = c.settings["data"]["dataset"];
    return d.empty() ? fallback : d;
}

struct Trained {
    HeteroGraph graph;
    std::vector<MetaPath> paths;
    TrainConfig cfg;
    TrainResult result;
};

/// Trains on the configured dataset, writing metrics into `run`.
Trained train_model(const Context& c, const Run& run, const std::vector<std::size_t>& supervised_rows = {}) {
    Trained t{load_dataset(dataset_or(c, "synth-sbm"), c.g.seed), {}, train_config(c.settings, c.g.seed, c.g.workers), {}};
    t.paths = meta_paths_for(t.graph, c.settings["data"]["meta_paths"]);
    std::ofstream metrics(run.dir / "metrics.jsonl"), timing(run.dir / "timing.jsonl");
    require(metrics.good() && timing.good(), ErrorCode::io, "cannot write metrics into '" + run.dir.string() + "'");
    t.result = train(t.graph, t.paths, t.cfg, supervised_rows, [&](const EpochRecord& r) {
        metrics << json{{"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}}.dump() << '\n';
        timing << json{{"epoch", r.epoch}, {"wall_ms", r.wall_ms}}.dump() << '\n';
    });
    if (c.g.dump_samples) {
        dump_neighbor_sets((run.dir / "neighbors.tsv").string(), t.graph, t.result.data.samples);
        for (std::size_t p = 0; p < t.result.data.triples.size(); ++p)
            dump_triples((run.dir / ("triples_" + std::to_string(p) + ".tsv")).string(), t.graph,
                         t.result.data.triples[p]);
    }
    return t;
}

json training_summary(const Trained& t) {
    const Metrics& m = t.result.metrics;
    json paths = json::array();
    for (std::size_t p = 0; p < t.paths.size(); ++p)
        paths.push_back({{"name", t.paths[p].name},
                         {"triples", m.triples_per_path[p]},
                         {"self_filled", m.self_filled_per_path[p]}});
    return {{"epochs_run", m.epochs.size()},
            {"initial_loss", m.epochs.empty() ? 0.0 : m.epochs.front().loss},
            {"final_loss", m.epochs.empty() ? 0.0 : m.epochs.back().loss},
            {"best_loss", m.best_loss},
            {"best_epoch", m.best_epoch},
            {"stopped_early", m.stopped_early},
            {"stop_reason", m.stop_reason},
            {"parameters", t.result.params.scalar_count()},
            {"nodes", t.graph.num_nodes()},
            {"meta_paths", paths}};
}

void write_embeddings(const fs::path& p, const HeteroGraph& g, const ad::Tensor& Z) {
    std::ofstream out(p);
    require(out.good(), ErrorCode::io, "cannot write '" + p.string() + "'");
    out << std::setprecision(17);
    const std::size_t d = Z.shape[1];
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        out << g.original_id(v);
        for (std::size_t j = 0; j < d; ++j) out << '\t' << Z.values[v * d + j];
        out << '\n';
    }
}

int cmd_train(const Context& c) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    write_json(run.dir / "config.json", config_echo(c, "train"));
    std::vector<std::size_t> rows;
    if (c.settings["train"]["supervised"].get<bool>()) {
        // labeled rows of the first probe split's training part
        const HeteroGraph g = load_dataset(dataset_or(c, "synth-sbm"), c.g.seed);
        rows = supervised_training_rows(g.labels(), probe_config(c.settings, c.g.seed));
    }
    const Trained t = train_model(c, run, rows);
    t.result.params.save((run.dir / "checkpoint.bin").string());
    write_json(run.dir / "summary.json", training_summary(t));
    std::cout << run.dir.string() << '\n';
    return 0;
}

/// Rebuilds graph, context and parameters of a finished training run.
struct Loaded {
    HeteroGraph graph;
    TrainConfig cfg;
    TrainingData data;
    ad::ParamStore params;
};

Loaded load_run(const fs::path& dir, std::size_t workers) {
    const json echo = read_json(dir / "config.json");
    require(echo.contains("run") && echo["run"]["command"] == "train", ErrorCode::validation,
            "'" + dir.string() + "' is not a train run");
    const std::uint64_t seed = echo["run"]["seed"];
    json settings = default_settings();
    for (const auto& [section, body] : settings.items())
        for (const auto& [key, _] : body.items())
            if (echo.contains(section) && echo[section].contains(key)) settings[section][key] = echo[section][key];
    Loaded l{load_dataset(settings["data"]["dataset"].get<std::string>().empty() ? "synth-sbm"
                                                                                  : settings["data"]["dataset"].get<std::string>(),
                          seed),
             train_config(settings, seed, workers),
             {},
             {}};
    const auto paths = meta_paths_for(l.graph, settings["data"]["meta_paths"]);
    if (l.cfg.supervised) l.cfg.model.supervised_classes = l.graph.num_classes();
    l.data = prepare_training_data(l.graph, paths, l.cfg, sample_seed(l.cfg.seed, 0));
    Rng rng(stream_key({seed, 0x1417}));
    register_model(l.params, l.graph, paths.size(), l.cfg.model, rng);
    l.params.assign_from(ad::ParamStore::load((dir / "checkpoint.bin").string()));
    return l;
}

int cmd_embed(const Context& c, const std::string& run_from) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    write_json(run.dir / "config.json", config_echo(c, "embed"));
    if (!run_from.empty()) {
        const Loaded l = load_run(run_from, c.g.workers);
        write_embeddings(run.dir / "embeddings.tsv", l.graph, embed(l.data.ctx, l.params, l.cfg.model));
    } else {
        const Trained t = train_model(c, run);
        write_embeddings(run.dir / "embeddings.tsv", t.graph, embed(t.result.data.ctx, t.result.params, t.cfg.model));
        write_json(run.dir / "summary.json", training_summary(t));
    }
    std::cout << run.dir.string() << '\n';
    return 0;
}

int cmd_eval(const Context& c, const std::string& run_from, const std::string& task) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    write_json(run.dir / "config.json", config_echo(c, "eval"));
    json out;
    if (task == "node") {
        const ProbeConfig pc = probe_config(c.settings, c.g.seed);
        if (!run_from.empty()) {
            const Loaded l = load_run(run_from, c.g.workers);
            require(l.graph.has_labels(), ErrorCode::validation, "eval: dataset has no node labels");
            out = report_json(eval_node_classification(embed(l.data.ctx, l.params, l.cfg.model), l.graph.labels(), pc));
        } else {
            const Trained t = train_model(c, run);
            require(t.graph.has_labels(), ErrorCode::validation, "eval: dataset has no node labels");
            out = report_json(
                eval_node_classification(embed(t.result.data.ctx, t.result.params, t.cfg.model), t.graph.labels(), pc));
            out["training"] = training_summary(t);
        }
        out["task"] = "node-classification";
    } else if (task == "graph") {
        require(run_from.empty(), ErrorCode::usage, "eval --task graph trains its own model; drop --run");
        const auto corpus = load_graph_corpus(c.settings["data"]["corpus"], c.g.seed);
        const TrainConfig cfg = train_config(c.settings, c.g.seed, c.g.workers);
        std::vector<MetaPath> paths;
        const auto res = eval_graph_classification(corpus, cfg, c.settings["probe"]["folds"], paths);
        out = report_json(res.report);
        out["task"] = "graph-classification";
        out["graphs"] = corpus.size();
        out["best_loss"] = res.training.best_loss;
    } else {
        fail(ErrorCode::usage, "--task must be node or graph, got '" + task + "'");
    }
    write_json(run.dir / "eval.json", out);
    std::cout << run.dir.string() << '\n';
    return 0;
}

int cmd_sweep_k(const Context& c) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    write_json(run.dir / "config.json", config_echo(c, "sweep-k"));
    const auto ks = parse_size_list(c.settings["sweep"]["k_list"], "--k-list");
    const HeteroGraph g = load_dataset(dataset_or(c, "synth-sbm"), c.g.seed);
    require(g.has_labels(), ErrorCode::validation, "sweep-k: dataset has no node labels");
    const auto paths = meta_paths_for(g, c.settings["data"]["meta_paths"]);
    const ProbeConfig pc = probe_config(c.settings, c.g.seed);
    CsvWriter csv(run.dir / "sweep_k.csv", "K,accuracy_mean,accuracy_std");
    json rows = json::array();
    for (std::size_t K : ks) {
        require(K >= 1, ErrorCode::usage, "--k-list: K must be >= 1");
        TrainConfig cfg = train_config(c.settings, c.g.seed, c.g.workers);
        cfg.model.K = K;
        const auto res = train(g, paths, cfg);
        const auto rep = eval_node_classification(embed(res.data.ctx, res.params, cfg.model), g.labels(), pc);
        csv.row(K, rep.mean, rep.std);
        json r = report_json(rep);
        r["K"] = K;
        r["best_loss"] = res.metrics.best_loss;
        rows.push_back(r);
    }
    write_json(run.dir / "sweep_k.json", rows);
    std::cout << run.dir.string() << '\n';
    return 0;
}

// ---- diagnose

/// Regular graph for the theorem checks: the configured dataset, or a
/// circulant graph with `nodes` nodes and degree K (jumps 1..K/2, plus n/2
/// for odd K).
HeteroGraph regular_graph(const Context& c) {
    const std::string d = c.settings["data"]["dataset"];
    if (!d.empty()) return load_dataset(d, c.g.seed);
    const std::size_t K = c.settings["model"]["K"], n = c.settings["diagnose"]["nodes"];
    require(K >= 2 && K < n, ErrorCode::usage, "diagnose: need 2 <= K < nodes for the generated regular graph");
    require(K % 2 == 0 || n % 2 == 0, ErrorCode::usage, "diagnose: odd K needs an even node count");
    std::vector<std::size_t> jumps;
    for (std::size_t j = 1; j <= K / 2; ++j) jumps.push_back(j);
    if (K % 2 == 1) jumps.push_back(n / 2);
    return make_circulant(n, jumps, 1, c.g.seed);
}

/// Reference weights: W = I, or W = Q / sqrt(d) with Q a random orthogonal
/// matrix, so that the entrywise 2-norm of W is 1.
std::vector<ad::Tensor> reference_weights(const std::string& kind, std::size_t d, std::size_t layers,
                                          std::uint64_t seed) {
    if (kind == "identity") return {};
    require(kind == "scaled-orthogonal", ErrorCode::usage, "--weights must be identity or scaled-orthogonal");
    Rng rng(stream_key({seed, 0x0a7}));
    std::vector<ad::Tensor> out;
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd A(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
        const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
        ad::Tensor w(ad::Shape::mat(d, d));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                w.values[i * d + j] = Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) /
                                      std::sqrt(static_cast<double>(d));
        out.push_back(std::move(w));
    }
    return out;
}

ad::Tensor random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(stream_key({seed, 0xfea7}));
    ad::Tensor h(ad::Shape::mat(n, d));
    for (auto& x : h.values) x = rng.normal();
    return h;
}

int cmd_diagnose(const Context& c, const std::string& what) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    write_json(run.dir / "config.json", config_echo(c, "diagnose " + what));
    const auto& dg = c.settings["diagnose"];
    if (what == "curvature") {
        const HeteroGraph g = load_dataset(dataset_or(c, "synth-sbm"), c.g.seed);
        const auto rep = curvature_report(g, dg["laziness"]);
        CsvWriter csv(run.dir / "curvature.csv", "a,b,kappa,w1");
        json edges = json::array();
        for (const auto& e : rep.edges) {
            csv.row(g.original_id(e.a), g.original_id(e.b), e.kappa, e.w1);
            edges.push_back({{"a", g.original_id(e.a)}, {"b", g.original_id(e.b)}, {"kappa", e.kappa}, {"w1", e.w1}});
        }
        write_json(run.dir / "curvature.json", {{"edges", edges},
                                                 {"min", rep.min},
                                                 {"mean", rep.mean},
                                                 {"max", rep.max},
                                                 {"max_residual", rep.max_residual},
                                                 {"laziness", dg["laziness"]}});
    } else if (what == "theorem1") {
        const HeteroGraph g = regular_graph(c);
        const std::size_t L = dg["layers"], d = dg["dim"];
        require(L >= 1 && d >= 1, ErrorCode::usage, "theorem1: layers and dim must be >= 1");
        const MeanModel m{reference_weights(dg["weights"], d, L, c.g.seed), parse_activation(dg["activation"]), L};
        const ad::Tensor h0 = random_features(g.num_nodes(), d, c.g.seed);
        CsvWriter csv(run.dir / "theorem1.csv", "l,l_from,b,lhs,rhs,C,holds");
        json rows = json::array();
        bool all = true;
        for (std::size_t l = 1; l <= L; ++l)
            for (std::size_t lf = 0; lf < l; ++lf)
                for (NodeId b = 0; b < g.num_nodes(); ++b) {
                    const auto r = theorem1_check(m, g, h0, l, lf, b, dg["p"]);
                    all = all && r.holds;
                    csv.row(l, lf, g.original_id(b), r.lhs, r.rhs, r.C, r.holds ? 1 : 0);
                    rows.push_back({{"l", l}, {"l_from", lf}, {"b", g.original_id(b)}, {"lhs", r.lhs},
                                    {"rhs", r.rhs}, {"C", r.C}, {"c", r.c}, {"K", r.K}, {"holds", r.holds}});
                }
        write_json(run.dir / "theorem1.json", {{"checks", rows}, {"all_hold", all}});
    } else if (what == "theorem2") {
        const HeteroGraph g = regular_graph(c);
        CsvWriter csv(run.dir / "theorem2.csv", "v,one_hop_sum,two_hop_sum,eta,threshold,precondition,holds");
        json rows = json::array();
        bool all = true;
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            const auto r = theorem2_check(g, v, 0, dg["p"], dg["dim"]);
            if (r.precondition) all = all && r.holds;
            csv.row(g.original_id(v), r.one_hop_sum, r.two_hop_sum, r.eta, r.threshold, r.precondition ? 1 : 0,
                    r.holds ? 1 : 0);
            rows.push_back({{"v", g.original_id(v)},   {"one_hop_sum", r.one_hop_sum}, {"two_hop_sum", r.two_hop_sum},
                            {"eta", r.eta},            {"threshold", r.threshold},     {"K", r.K},
                            {"precondition", r.precondition}, {"holds", r.holds}});
        }
        write_json(run.dir / "theorem2.json", {{"checks", rows}, {"all_hold_where_precondition", all}});
    } else if (what == "smoothing") {
        const HeteroGraph g = load_dataset(dataset_or(c, "synth-sbm"), c.g.seed);
        const TrainConfig cfg = train_config(c.settings, c.g.seed, c.g.workers);
        const std::size_t L = dg["layers"];
        const auto s = smoothing_comparison(g, L, cfg.model, c.g.seed);
        CsvWriter csv(run.dir / "smoothing.csv", "layer,mean_model,mapn_skip,mapn_no_skip");
        for (std::size_t l = 0; l <= L; ++l) csv.row(l, s.mean_model[l], s.with_skip[l], s.without_skip[l]);
        write_json(run.dir / "smoothing.json",
                   {{"mean_model", s.mean_model}, {"mapn_skip", s.with_skip}, {"mapn_no_skip", s.without_skip}});
    } else {
        fail(ErrorCode::usage, "unknown diagnose target '" + what + "'");
    }
    std::cout << run.dir.string() << '\n';
    return 0;
}

// ---- data

json graph_counts(const HeteroGraph& g) {
    json types = json::object(), dims = json::object();
    for (TypeId t = 0; t < g.num_types(); ++t) {
        types[g.type_name(t)] = g.nodes_of_type(t).size();
        dims[g.type_name(t)] = g.feature_dim(t);
    }
    json rels = json::array();
    for (RelationId r = 0; r < g.num_relations(); ++r) rels.push_back(g.relation_name(r));
    std::size_t labeled = 0;
    for (int l : g.labels()) labeled += l >= 0;
    return {{"nodes", g.num_nodes()}, {"edges", g.edges().size()}, {"node_types", types},
            {"relations", rels},      {"feature_dims", dims},      {"labeled_nodes", labeled}};
}

json checksums(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json out = json::object();
    for (const auto& f : files) out[fs::relative(f, root).generic_string()] = file_checksum(f);
    return out;
}

int cmd_ingest(const Context& c, const std::string& nodes, const std::string& edges, const std::string& features,
               const std::string& labels) {
    require(!nodes.empty() && !edges.empty(), ErrorCode::usage, "ingest: --nodes and --edges are required");
    for (const auto& p : {nodes, edges})
        require(fs::exists(p), ErrorCode::io, "ingest: file '" + p + "' does not exist");
    require(features.empty() || fs::is_directory(features), ErrorCode::io,
            "ingest: features directory '" + features + "' does not exist");
    require(labels.empty() || fs::exists(labels), ErrorCode::io, "ingest: labels file '" + labels + "' does not exist");
    const HeteroGraph g = load_graph(nodes, edges, features,
                                     labels.empty() ? std::nullopt : std::optional<fs::path>(labels));
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    save_graph(g, run.dir / "dataset");
    write_json(run.dir / "manifest.json", {{"counts", graph_counts(g)}, {"checksums", checksums(run.dir / "dataset")}});
    std::cout << run.dir.string() << '\n';
    return 0;
}

struct GenerateArgs {
    std::string kind = "homophilous-sbm";
    std::optional<std::size_t> nodes, classes, feature_dim;
    std::optional<double> p_in, p_out, feature_signal;
    std::size_t per_class = 50, min_nodes = 6, max_nodes = 12;
};

int cmd_generate(const Context& c, const GenerateArgs& a) {
    const Run run = make_run(c.g.out_dir, c.g.run_id, c.g.seed);
    json manifest;
    if (a.kind == "cycle-star") {
        require(a.min_nodes >= 3 && a.min_nodes <= a.max_nodes, ErrorCode::usage,
                "generate: need 3 <= --min-nodes <= --max-nodes");
        const auto corpus = make_cycle_star_corpus(a.per_class, a.min_nodes, a.max_nodes, 2, c.g.seed);
        save_corpus(corpus, run.dir / "corpus");
        manifest = {{"kind", a.kind}, {"graphs", corpus.size()}, {"checksums", checksums(run.dir / "corpus")}};
    } else {
        SyntheticSpec s = SyntheticSpec::for_kind(parse_synthetic_kind(a.kind));
        s.seed = c.g.seed;
        if (a.nodes) s.n_nodes = *a.nodes;
        if (a.classes) s.n_classes = *a.classes;
        if (a.feature_dim) s.feature_dim = *a.feature_dim;
        if (a.p_in) s.p_in = *a.p_in;
        if (a.p_out) s.p_out = *a.p_out;
        if (a.feature_signal) s.feature_signal = *a.feature_signal;
        const HeteroGraph g = generate_synthetic(s);
        save_graph(g, run.dir / "dataset");
        manifest = {{"kind", a.kind},
                    {"spec",
                     {{"n_nodes", s.n_nodes},
                      {"n_classes", s.n_classes},
                      {"p_in", s.p_in},
                      {"p_out", s.p_out},
                      {"feature_dim", s.feature_dim},
                      {"feature_signal", s.feature_signal},
                      {"seed", s.seed}}},
                    {"counts", graph_counts(g)},
                    {"checksums", checksums(run.dir / "dataset")}};
    }
    write_json(run.dir / "manifest.json", manifest);
    std::cout << run.dir.string() << '\n';
    return 0;
}

int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::usage: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::parse: return 4;
    default: return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MAPN: meta-path sampling, selective state-space aggregation and diagnostics"};
    app.require_subcommand(1);
    app.fallthrough();
    app.get_formatter()->column_width(34);

    Globals g;
    app.add_option("--config", g.config, "JSON config file (sections: data, model, train, walk, probe, diagnose, sweep)");
    app.add_option("--seed", g.seed, "seed for every stochastic component")->capture_default_str();
    app.add_option("--workers", g.workers, "worker threads; 1 is deterministic")->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "parent directory of run directories")->capture_default_str();
    app.add_option("--run-id", g.run_id, "run directory name (default <timestamp>-seed<N>)");
    app.add_flag("--dump-samples", g.dump_samples, "write sampled neighbors and triples (train)");

    // shared settings, registered on every subcommand that uses them
    const json defaults = default_settings();
    std::map<std::string, std::string> flag_text;            // "section.key" -> raw text
    std::map<std::string, std::vector<CLI::Option*>> bound;  // "section.key" -> options writing flag_text
    auto add_settings = [&](CLI::App* sub, std::initializer_list<const char*> sections,
                            const std::map<std::string, std::string>& shown = {}) {
        for (const auto& s : kSettings) {
            if (std::find_if(sections.begin(), sections.end(), [&](const char* x) { return s.section == x; }) ==
                sections.end())
                continue;
            const std::string key = s.section + "." + s.key;
            const json& dv = defaults[s.section][s.key];
            std::string def = display(dv);
            if (auto it = shown.find(key); it != shown.end()) def = it->second;
            else if (key == "data.dataset") def = "synth-sbm";
            else if (key == "data.meta_paths") def = "all defaults";
            bound[key].push_back(
                sub->add_option(s.flag, flag_text[key], s.help)
                    ->default_str(def)
                    ->type_name(dv.is_boolean() ? "BOOL" : dv.is_number_integer() ? "UINT" : dv.is_number() ? "FLOAT" : "TEXT"));
        }
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic dataset bundle");
    GenerateArgs gen;
    generate->add_option("--kind", gen.kind, "homophilous-sbm | heterophilous-sbm | hetero-academic | cycle-star")
        ->capture_default_str();
    generate->add_option("--nodes", gen.nodes, "node count (default 90)");
    generate->add_option("--classes", gen.classes, "class count (default 3)");
    generate->add_option("--p-in", gen.p_in, "within-class edge probability (default 0.3; 0.02 heterophilous)");
    generate->add_option("--p-out", gen.p_out, "cross-class edge probability (default 0.02; 0.3 heterophilous)");
    generate->add_option("--feature-dim", gen.feature_dim, "feature dimension (default 8)");
    generate->add_option("--feature-signal", gen.feature_signal,
                         "class-mean scale relative to unit noise (default 1; 0.3 heterophilous)");
    generate->add_option("--per-class", gen.per_class, "cycle-star: graphs per class")->capture_default_str();
    generate->add_option("--min-nodes", gen.min_nodes, "cycle-star: smallest graph")->capture_default_str();
    generate->add_option("--max-nodes", gen.max_nodes, "cycle-star: largest graph")->capture_default_str();

    auto* ingest = app.add_subcommand("ingest", "validate text files and write a normalized dataset bundle");
    std::string in_nodes, in_edges, in_features, in_labels;
    ingest->add_option("--nodes", in_nodes, "nodes.tsv: node_id<TAB>type")->required();
    ingest->add_option("--edges", in_edges, "edges.tsv: src<TAB>dst<TAB>relation[<TAB>directed]")->required();
    ingest->add_option("--features", in_features, "directory with <type>.csv per node type");
    ingest->add_option("--labels", in_labels, "labels.tsv: node_id<TAB>class");

    auto* trn = app.add_subcommand("train", "train MAPN with the negative-sampling objective");
    add_settings(trn, {"data", "model", "train", "walk", "probe"});

    auto* emb = app.add_subcommand("embed", "write node embeddings as TSV");
    std::string embed_run;
    emb->add_option("--run", embed_run, "finished train run directory (otherwise trains first)");
    add_settings(emb, {"data", "model", "train", "walk"});

    auto* ev = app.add_subcommand("eval", "probe accuracy on frozen embeddings");
    std::string eval_run, eval_task = "node";
    ev->add_option("--run", eval_run, "finished train run directory (node task)");
    ev->add_option("--task", eval_task, "node | graph")->capture_default_str();
    add_settings(ev, {"data", "model", "train", "walk", "probe"});

    auto* diag = app.add_subcommand("diagnose", "curvature, theorem checks and smoothing profiles");
    std::string diag_what;
    diag->add_option("target", diag_what, "curvature | theorem1 | theorem2 | smoothing")->required();
    add_settings(diag, {"data", "model", "diagnose"},
                 {{"data.dataset", "synth-sbm; theorem checks: circulant with --nodes and --K"}});

    auto* sweep = app.add_subcommand("sweep-k", "train and probe for each hop count K");
    add_settings(sweep, {"data", "model", "train", "walk", "probe", "sweep"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        if (app.get_subcommands().empty() && !app.remaining().empty())
            msg = "unknown subcommand '" + app.remaining().front() + "'";
        std::cerr << "ERROR usage: " << msg << '\n';
        return 2;
    }

    try {
        Context c{g, defaults};
        if (!g.config.empty()) merge_config(c.settings, g.config);
        for (const auto& s : kSettings) {
            const auto it = flag_text.find(s.section + "." + s.key);
            if (it == flag_text.end()) continue;
            bool given = false;
            for (auto* opt : bound[it->first]) given = given || opt->count() > 0;
            if (given) set_from_text(c.settings, s, it->second);
        }
        require(c.g.workers >= 1, ErrorCode::usage, "--workers must be >= 1");
        // settings errors surface before a run directory exists
        if (*trn || *emb || *ev || *sweep) train_config(c.settings, c.g.seed, c.g.workers).validate();
        if (*trn || *ev || *sweep) probe_config(c.settings, c.g.seed);

        if (*generate) return cmd_generate(c, gen);
        if (*ingest) return cmd_ingest(c, in_nodes, in_edges, in_features, in_labels);
        if (*trn) return cmd_train(c);
        if (*emb) return cmd_embed(c, embed_run);
        if (*ev) return cmd_eval(c, eval_run, eval_task);
        if (*diag) return cmd_diagnose(c, diag_what);
        if (*sweep) return cmd_sweep_k(c);
    } catch (const Error& e) {
        std::cerr << "ERROR " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "ERROR internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
