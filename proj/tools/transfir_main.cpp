// transfir: ingest | split | train | eval | diagnose | synth

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "transfir/chain.hpp"
#include "transfir/checkpoint.hpp"
#include "transfir/data.hpp"
#include "transfir/error.hpp"
#include "transfir/eval.hpp"
#include "transfir/model.hpp"
#include "transfir/synth.hpp"
#include "transfir/trainer.hpp"

namespace fs = std::filesystem;
using namespace transfir;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kInputError = 2, kDiverged = 3, kIncompatible = 4 };

struct DataArgs {
    std::string dir;
    std::string embeddings;
    std::size_t granularity = 0;
    std::vector<double> ratios{0.5, 0.2, 0.3};
};

void add_data_options(CLI::App* cmd, DataArgs& args, bool with_embeddings) {
    cmd->add_option("--data", args.dir, "Dataset directory (entity2id.txt, relation2id.txt, facts or train/valid/test)")
        ->required();
    if (with_embeddings) {
        cmd->add_option("--embeddings", args.embeddings, "Entity embedding file (default <data>/embeddings.txt)");
    }
    cmd->add_option("--granularity", args.granularity, "Raw time units per snapshot (0 = gcd of raw times)");
    cmd->add_option("--ratios", args.ratios, "Chronological train/valid/test ratios")->expected(3);
}

struct Dataset {
    data::TemporalKG graph;
    data::Split split;
};

Dataset load_dataset(const DataArgs& args) {
    Dataset ds;
    ds.graph = data::load_dataset_dir(args.dir, data::LoadOptions{args.granularity});
    ds.split = data::chronological_split(ds.graph, args.ratios[0], args.ratios[1], args.ratios[2]);
    return ds;
}

numerics::Tensor load_embedding_table(const DataArgs& args, std::size_t entities) {
    const fs::path path = args.embeddings.empty() ? fs::path(args.dir) / "embeddings.txt" : fs::path(args.embeddings);
    return data::load_embeddings(path, entities).matrix;
}

// Applies `key = value` lines from a config file to options not given on the
// command line.
void apply_config(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    if (!fs::exists(path)) throw IoError("config file not found: " + path);
    for (const auto& item : CLI::ConfigINI().from_file(path)) {
        const std::string key = item.fullname();
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt || key == "config") throw ConfigError(path + ": unknown key '" + key + "'");
        if (opt->count() > 0) continue;
        for (const auto& value : item.inputs) opt->add_result(value);
        opt->run_callback();
    }
}

struct HpArgs {
    model::Hyperparams hp;
    std::string scope = "all";
};

void add_hp_options(CLI::App* cmd, HpArgs& a) {
    auto& hp = a.hp;
    auto* g = cmd->add_option_group("Model");
    g->add_option("--codebook_size", hp.codebook_size, "Codebook size K")->capture_default_str();
    g->add_option("--chain_length", hp.chain_length, "Interaction chain length k")->capture_default_str();
    g->add_option("--window", hp.window, "History window T (snapshots)")->capture_default_str();
    g->add_option("--dim", hp.dim, "Model width d (0 = embedding width)")->capture_default_str();
    g->add_option("--layers", hp.layers, "Transformer layers L")->capture_default_str();
    g->add_option("--heads", hp.heads, "Attention heads H")->capture_default_str();
    g->add_option("--alpha", hp.alpha, "Codebook loss weight")->capture_default_str();
    g->add_option("--beta", hp.beta, "Commitment loss weight")->capture_default_str();
    g->add_option("--lambda", hp.lambda, "Weight of the VQ objective")->capture_default_str();
    g->add_option("--learning_rate", hp.learning_rate, "Adam learning rate")->capture_default_str();
    g->add_option("--epochs", hp.epochs, "Maximum epochs")->capture_default_str();
    g->add_option("--seed", hp.seed, "Random seed")->capture_default_str();
    g->add_option("--transfer_scope", a.scope, "Entities receiving transfer")
        ->check(CLI::IsMember({"all", "non-query"}))
        ->capture_default_str();
    g->add_option("--channels", hp.channels, "Scorer convolution channels C")->capture_default_str();
    g->add_option("--kernel_width", hp.kernel_width, "Scorer kernel width w (odd)")->capture_default_str();
    g->add_option("--clip_norm", hp.clip_norm, "Global gradient norm limit (0 = off)")->capture_default_str();
    g->add_option("--patience", hp.patience, "Early-stopping patience in epochs")->capture_default_str();
    g->add_option("--cache_assignments", hp.cache_assignments, "Assign clusters once per epoch")
        ->capture_default_str();
}

std::size_t default_threads() { return std::max(1U, std::thread::hardware_concurrency()); }

checkpoint::Checkpoint open_checkpoint(const std::string& path, const data::TemporalKG& g) {
    checkpoint::Checkpoint ckpt = [&] {
        try {
            return checkpoint::load_checkpoint(path);
        } catch (const IntegrityError& e) {
            throw IncompatibleError(e.what());
        }
    }();
    if (ckpt.model.num_entities != g.num_entities() || ckpt.model.num_relations != g.num_relations()) {
        throw IncompatibleError("checkpoint was trained on " + std::to_string(ckpt.model.num_entities) +
                                " entities / " + std::to_string(ckpt.model.num_relations) +
                                " relations; dataset has " + std::to_string(g.num_entities()) + " / " +
                                std::to_string(g.num_relations()));
    }
    return ckpt;
}

void print_kv(std::ostream& os, const std::string& key, double value) {
    os << key << '=' << std::setprecision(10) << value << '\n';
}

// ---- ingest -----------------------------------------------------------------

int cmd_ingest(const DataArgs& args, const std::string& format) {
    const Dataset ds = load_dataset(args);
    const auto stats = eval::emergence_stats(ds.graph, ds.split);
    const auto& g = ds.graph;
    if (format == "kv") {
        std::cout << "entities=" << g.num_entities() << "\nrelations=" << g.num_relations()
                  << "\ntimestamps=" << g.num_timestamps() << "\nfacts=" << g.fact_count()
                  << "\ntrain=" << ds.split.train.begin << ',' << ds.split.train.end
                  << "\nvalid=" << ds.split.valid.begin << ',' << ds.split.valid.end
                  << "\ntest=" << ds.split.test.begin << ',' << ds.split.test.end
                  << "\noccurring_entities=" << stats.total_entities
                  << "\nemerging_entities=" << stats.emerging_entities << '\n';
        print_kv(std::cout, "emerging_fraction", stats.emerging_fraction);
        std::cout << "new_entities=";
        for (std::size_t i = 0; i < stats.new_entities.size(); ++i)
            std::cout << (i ? "," : "") << stats.new_entities[i];
        std::cout << '\n';
    } else {
        std::cout << "entities    " << g.num_entities() << "\nrelations   " << g.num_relations()
                  << "\ntimestamps  " << g.num_timestamps() << "\nfacts       " << g.fact_count() << "\nsplit       train ["
                  << ds.split.train.begin << ", " << ds.split.train.end << ")  valid [" << ds.split.valid.begin
                  << ", " << ds.split.valid.end << ")  test [" << ds.split.test.begin << ", " << ds.split.test.end
                  << ")\nemerging    " << stats.emerging_entities << " of " << stats.total_entities << " ("
                  << std::fixed << std::setprecision(1) << 100.0 * stats.emerging_fraction << "%)\n";
    }
    return kOk;
}

// ---- split ------------------------------------------------------------------

int cmd_split(const DataArgs& args, const std::string& out_dir) {
    const Dataset ds = load_dataset(args);
    const fs::path out(out_dir);
    fs::create_directories(out);
    ds.graph.vocab().save(out);
    const std::size_t scale = args.granularity ? args.granularity : 1;
    const std::pair<const char*, data::Interval> parts[] = {
        {"train.txt", ds.split.train}, {"valid.txt", ds.split.valid}, {"test.txt", ds.split.test}};
    for (const auto& [name, range] : parts) {
        std::ofstream f(out / name);
        if (!f) throw IoError("cannot write " + (out / name).string());
        std::size_t n = 0;
        for (data::Timestamp t = range.begin; t < range.end; ++t)
            for (const auto& q : ds.graph.facts_at(t)) {
                f << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << q.timestamp * scale << '\n';
                ++n;
            }
        std::cout << name << ' ' << n << " facts, snapshots [" << range.begin << ", " << range.end << ")\n";
    }
    return kOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const DataArgs& args, HpArgs& hp_args, const std::string& out, std::string log_path,
              std::size_t threads) {
    hp_args.hp.set("transfer_scope", hp_args.scope);
    const Dataset ds = load_dataset(args);
    const auto embeddings = load_embedding_table(args, ds.graph.num_entities());
    const auto augmented = data::add_inverse_relations(ds.graph);
    const chain::HistoryIndex history(augmented);

    auto model = model::Model::init(hp_args.hp, ds.graph.num_relations(), embeddings);
    trainer::Adam optimizer(model.params.parameters(), model.hp.learning_rate);
    if (log_path.empty()) log_path = out + ".log";
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError("cannot open log " + log_path);

    trainer::TrainOptions options;
    options.threads = threads;
    options.on_epoch = [&](const trainer::EpochReport& r) {
        log << r.to_log_line() << '\n' << std::flush;
        std::cerr << r.to_log_line() << " seconds=" << std::fixed << std::setprecision(1) << r.seconds << '\n'
                  << std::defaultfloat;
    };
    const trainer::TrainingData td{augmented, history, embeddings, ds.split};
    std::size_t best = 0;
    if (model.hp.epochs > 0) best = trainer::train(model, optimizer, td, options).best_epoch;
    checkpoint::save_checkpoint(out, model, &optimizer);
    log << "best_epoch=" << best << '\n';
    std::cerr << "best_epoch=" << best << "\ncheckpoint " << out << '\n';
    return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::vector<std::string> modes{"vanilla", "emerging", "unknown"};
    std::string side = "query";
    std::string range = "test";
    std::string ablate;
    std::string format = "text";
    std::string out;
    std::size_t threads = default_threads();
};

int cmd_eval(const DataArgs& args, const EvalArgs& ea) {
    const Dataset ds = load_dataset(args);
    const auto embeddings = load_embedding_table(args, ds.graph.num_entities());
    const auto ckpt = open_checkpoint(ea.checkpoint, ds.graph);
    const auto augmented = data::add_inverse_relations(ds.graph);
    const data::Interval range = ea.range == "valid" ? ds.split.valid : ds.split.test;
    eval::EvalOptions options;
    options.ablate_transfer = ea.ablate == "no-transfer";
    options.threads = ea.threads;

    std::ostringstream report;
    for (const auto& name : ea.modes) {
        const eval::EvalMode mode{eval::parse_mode(name), eval::parse_side(ea.side)};
        const auto metrics = eval::evaluate(ckpt.model, augmented, embeddings, range, mode, options);
        report << (ea.format == "kv" ? metrics.to_kv() : metrics.to_text());
    }
    std::cout << report.str();
    if (!ea.out.empty()) {
        std::ofstream f(ea.out);
        if (!f) throw IoError("cannot write " + ea.out);
        f << report.str();
    }
    return kOk;
}

// ---- diagnose ---------------------------------------------------------------

int cmd_diagnose(const DataArgs& args, const std::string& checkpoint_path, std::string projection,
                 std::size_t threads) {
    const Dataset ds = load_dataset(args);
    const auto embeddings = load_embedding_table(args, ds.graph.num_entities());
    const auto ckpt = open_checkpoint(checkpoint_path, ds.graph);
    eval::EvalOptions options;
    options.threads = threads;
    const auto diag = eval::diagnose_collapse(ckpt.model, ds.graph, embeddings, ds.split, options);
    std::cout << "n_emerging=" << diag.emerging.size() << "\nn_known=" << diag.known.size() << '\n';
    if (!diag.defined) {
        std::cout << "collapse_ratio=undefined (fewer than 2 entities in a set)\n";
        return kOk;
    }
    print_kv(std::cout, "collapse_ratio", diag.raw);
    std::cout << "projection_dims=" << diag.dims << '\n';
    print_kv(std::cout, "collapse_ratio_projected", diag.projected);
    print_kv(std::cout, "input_collapse_ratio_projected", diag.input_projected);
    if (projection.empty()) projection = checkpoint_path + ".projection.txt";
    std::vector<data::EntityId> ids(ds.graph.num_entities());
    std::iota(ids.begin(), ids.end(), data::EntityId{0});
    eval::emit_projection(diag.transferred, ids, diag.labels, projection);
    std::cout << "projection=" << projection << '\n';
    return kOk;
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(const synth::SynthSpec& spec, const std::string& out) {
    const auto inst = synth::generate(spec);
    synth::write_instance(inst, out);
    const auto stats = eval::emergence_stats(inst.graph, inst.split);
    std::cout << "entities=" << inst.graph.num_entities() << "\nrelations=" << inst.graph.num_relations()
              << "\ntimestamps=" << inst.graph.num_timestamps() << "\nfacts=" << inst.graph.fact_count() << '\n';
    print_kv(std::cout, "emerging_fraction", stats.emerging_fraction);
    print_kv(std::cout, "oracle_best_mrr", synth::oracle_best_mrr(inst.truth, inst.graph, inst.split));
    print_kv(std::cout, "random_mrr", eval::random_mrr(inst.graph.num_entities()));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("Emerging-entity link prediction on temporal knowledge graphs");
    app.require_subcommand(1);
    app.set_version_flag("--version", "transfir 1.0");

    DataArgs data_args;
    std::string format = "text";
    auto* ingest = app.add_subcommand("ingest", "Load a dataset and print its statistics");
    add_data_options(ingest, data_args, false);
    ingest->add_option("--format", format)->check(CLI::IsMember({"text", "kv"}));

    std::string split_out;
    auto* split = app.add_subcommand("split", "Write train/valid/test files of a chronological split");
    add_data_options(split, data_args, false);
    split->add_option("--out", split_out, "Output directory")->required();

    HpArgs hp_args;
    std::string ckpt_out, log_path, train_config;
    std::size_t train_threads = 1;
    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
    add_data_options(train, data_args, true);
    add_hp_options(train, hp_args);
    train->add_option("--out", ckpt_out, "Checkpoint path")->required();
    train->add_option("--log", log_path, "Epoch log (appended; default <out>.log)");
    train->add_option("--threads", train_threads, "Worker threads for validation")->capture_default_str();
    train->add_option("--config", train_config, "File of `key = value` defaults");

    EvalArgs eval_args;
    std::string eval_config;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_data_options(evalc, data_args, true);
    evalc->add_option("--checkpoint", eval_args.checkpoint)->required();
    evalc->add_option("--mode", eval_args.modes, "vanilla | emerging | unknown")
        ->check(CLI::IsMember({"vanilla", "emerging", "unknown"}));
    evalc->add_option("--side", eval_args.side, "Emerging entity on the query side or either side")
        ->check(CLI::IsMember({"query", "either"}));
    evalc->add_option("--range", eval_args.range)->check(CLI::IsMember({"valid", "test"}));
    evalc->add_option("--ablate", eval_args.ablate, "no-transfer: zero all prototypes")
        ->check(CLI::IsMember({"no-transfer"}));
    evalc->add_option("--format", eval_args.format)->check(CLI::IsMember({"text", "kv"}));
    evalc->add_option("--out", eval_args.out, "Also write the report here");
    evalc->add_option("--threads", eval_args.threads)->capture_default_str();
    evalc->add_option("--config", eval_config, "File of `key = value` defaults");

    std::string diag_ckpt, diag_out;
    std::size_t diag_threads = default_threads();
    auto* diagnose = app.add_subcommand("diagnose", "Collapse ratio and 2-D projection of transferred embeddings");
    add_data_options(diagnose, data_args, true);
    diagnose->add_option("--checkpoint", diag_ckpt)->required();
    diagnose->add_option("--out", diag_out, "Projection file (default <checkpoint>.projection.txt)");
    diagnose->add_option("--threads", diag_threads)->capture_default_str();

    synth::SynthSpec spec;
    std::string synth_out;
    auto* synthc = app.add_subcommand("synth", "Generate a synthetic instance with planted patterns");
    synthc->add_option("--out", synth_out, "Output directory")->required();
    synthc->add_option("--types", spec.types)->capture_default_str();
    synthc->add_option("--entities_per_type", spec.entities_per_type)->capture_default_str();
    synthc->add_option("--anchors_per_type", spec.anchors_per_type)->capture_default_str();
    synthc->add_option("--timestamps", spec.timestamps)->capture_default_str();
    synthc->add_option("--emergence", spec.emergence_fraction)->capture_default_str();
    synthc->add_option("--valid_emergence", spec.valid_emergence_fraction)->capture_default_str();
    synthc->add_option("--noise", spec.noise)->capture_default_str();
    synthc->add_option("--activity", spec.activity)->capture_default_str();
    synthc->add_option("--answers_per_pattern", spec.answers_per_pattern)->capture_default_str();
    synthc->add_option("--dim", spec.dim)->capture_default_str();
    synthc->add_option("--jitter", spec.jitter)->capture_default_str();
    synthc->add_option("--seed", spec.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    try {
        if (*ingest) return cmd_ingest(data_args, format);
        if (*split) return cmd_split(data_args, split_out);
        if (*train) {
            apply_config(train, train_config);
            return cmd_train(data_args, hp_args, ckpt_out, log_path, train_threads);
        }
        if (*evalc) {
            apply_config(evalc, eval_config);
            return cmd_eval(data_args, eval_args);
        }
        if (*diagnose) return cmd_diagnose(data_args, diag_ckpt, diag_out, diag_threads);
        if (*synthc) return cmd_synth(spec, synth_out);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const IncompatibleError& e) {
        std::cerr << "error: incompatible checkpoint: " << e.what() << '\n';
        return kIncompatible;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const ContractError& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kFailure;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
