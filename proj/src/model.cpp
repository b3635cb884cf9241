#include "transfir/model.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "transfir/error.hpp"

namespace transfir::model {

namespace ops = numerics;

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
        throw ConfigError("'" + key + "' expects a real number, got '" + value + "'");
    }
    return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("'" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace

std::map<std::string, std::string> Hyperparams::to_map() const {
    return {
        {"codebook_size", std::to_string(codebook_size)},
        {"chain_length", std::to_string(chain_length)},
        {"window", std::to_string(window)},
        {"dim", std::to_string(dim)},
        {"layers", std::to_string(layers)},
        {"heads", std::to_string(heads)},
        {"alpha", format_double(alpha)},
        {"beta", format_double(beta)},
        {"lambda", format_double(lambda)},
        {"learning_rate", format_double(learning_rate)},
        {"epochs", std::to_string(epochs)},
        {"seed", std::to_string(seed)},
        {"transfer_scope", scope == transfer::TransferScope::AllEntities ? "all" : "non-query"},
        {"channels", std::to_string(channels)},
        {"kernel_width", std::to_string(kernel_width)},
        {"clip_norm", format_double(clip_norm)},
        {"patience", std::to_string(patience)},
        {"cache_assignments", cache_assignments ? "true" : "false"},
    };
}

std::string Hyperparams::to_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
    return out;
}

void Hyperparams::set(const std::string& key, const std::string& value) {
    if (key == "codebook_size") codebook_size = parse_count(key, value);
    else if (key == "chain_length") chain_length = parse_count(key, value);
    else if (key == "window") window = parse_count(key, value);
    else if (key == "dim") dim = parse_count(key, value);
    else if (key == "layers") layers = parse_count(key, value);
    else if (key == "heads") heads = parse_count(key, value);
    else if (key == "alpha") alpha = parse_real(key, value);
    else if (key == "beta") beta = parse_real(key, value);
    else if (key == "lambda") lambda = parse_real(key, value);
    else if (key == "learning_rate") learning_rate = parse_real(key, value);
    else if (key == "epochs") epochs = parse_count(key, value);
    else if (key == "seed") seed = parse_count(key, value);
    else if (key == "transfer_scope") {
        if (value == "all") scope = transfer::TransferScope::AllEntities;
        else if (value == "non-query") scope = transfer::TransferScope::NonQueryEntities;
        else throw ConfigError("transfer_scope must be 'all' or 'non-query'");
    } else if (key == "channels") channels = parse_count(key, value);
    else if (key == "kernel_width") kernel_width = parse_count(key, value);
    else if (key == "clip_norm") clip_norm = parse_real(key, value);
    else if (key == "patience") patience = parse_count(key, value);
    else if (key == "cache_assignments") cache_assignments = parse_flag(key, value);
    else throw ConfigError("unknown hyperparameter '" + key + "'");
}

Hyperparams Hyperparams::from_text(const std::string& text) {
    Hyperparams hp;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("hyperparameter line without '=': " + line);
        hp.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return hp;
}

void Hyperparams::validate() const {
    if (codebook_size == 0) throw ConfigError("codebook_size must be positive");
    if (chain_length == 0) throw ConfigError("chain_length must be positive");
    if (window == 0) throw ConfigError("window must be positive");
    if (layers > 4) throw ConfigError("layers must be in 0..4");
    if (heads == 0) throw ConfigError("heads must be positive");
    if (!(alpha > 0) || !(beta > 0)) throw ConfigError("alpha and beta must be positive");
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (channels == 0) throw ConfigError("channels must be positive");
    if (kernel_width % 2 == 0) throw ConfigError("kernel_width must be odd");
    if (clip_norm < 0) throw ConfigError("clip_norm must be non-negative");
}

numerics::ParamList ModelParams::parameters() const {
    numerics::ParamList out;
    out.emplace_back("relations", relations);
    encoder.collect("encoder", out);
    transfer.collect("transfer", out);
    scorer.collect("scorer", out);
    out.emplace_back("codebook", codebook.codewords);
    return out;
}

Model Model::init(const Hyperparams& hp_in, std::size_t num_relations, const Tensor& entity_embeddings) {
    Hyperparams hp = hp_in;
    hp.validate();
    const std::size_t d = entity_embeddings.cols();
    if (hp.dim == 0) hp.dim = d;
    if (hp.dim != d) {
        throw ConfigError("dim=" + std::to_string(hp.dim) + " but entity embeddings have width " + std::to_string(d));
    }
    std::mt19937_64 rng(hp.seed);
    Model m;
    m.hp = hp;
    m.num_entities = entity_embeddings.rows();
    m.num_relations = num_relations;
    m.params.relations = numerics::xavier_uniform(2 * num_relations, d, rng);
    m.params.encoder = encoder::EncoderParams::init(d, hp.layers, hp.heads, rng);
    m.params.transfer = transfer::TransferParams::init(d, rng);
    m.params.scorer = scorer::ScorerParams::init(d, hp.channels, hp.kernel_width, rng);
    m.params.codebook = codebook::init_codebook(entity_embeddings, hp.codebook_size, rng(), hp.alpha, hp.beta);
    return m;
}

std::vector<chain::Query> snapshot_queries(const data::TemporalKG& augmented, data::Timestamp t,
                                           std::vector<data::EntityId>* answers) {
    std::vector<chain::Query> queries;
    if (answers) answers->clear();
    for (const auto& q : augmented.facts_at(t)) {
        queries.push_back({q.subject, q.relation, t});
        if (answers) answers->push_back(q.object);
    }
    return queries;
}

SnapshotOutput forward_snapshot(Tape& tape, const Model& model, const chain::HistoryIndex& history,
                                const Tensor& entity_embeddings, std::span<const chain::Query> queries,
                                std::span<const data::EntityId> answers, PrototypeState& state,
                                const ForwardOptions& options) {
    const auto& p = model.params;
    const auto& hp = model.hp;
    const std::size_t k = p.codebook.size(), d = model.dim();
    if (entity_embeddings.rows() != model.num_entities || entity_embeddings.cols() != d) {
        throw ShapeError("entity embeddings " + ops::shape_to_string(entity_embeddings.shape()) +
                         " do not match the model");
    }
    if (!answers.empty() && answers.size() != queries.size()) throw ShapeError("one answer per query is required");

    SnapshotOutput out;
    // (1) classification
    out.assignment = options.cached_assignment ? *options.cached_assignment
                                               : codebook::assign(p.codebook, entity_embeddings);
    const Tensor cb = codebook::codebook_loss(tape, p.codebook, entity_embeddings, out.assignment);
    const Tensor commit = codebook::commitment_loss(tape, p.codebook, entity_embeddings, out.assignment);
    out.cb_value = cb.item();
    out.commit_value = commit.item();
    out.vq_loss = ops::add(tape, ops::scale(tape, cb, p.codebook.alpha), ops::scale(tape, commit, p.codebook.beta));

    // (2) representation
    const auto chains = chain::build_chains_for_snapshot(history, queries, hp.window, hp.chain_length, p.relations);
    auto pooled = encoder::encode_chains(tape, p.encoder, entity_embeddings, p.relations, chains);
    out.empty_chains = pooled.empty;

    // (3) generalization
    std::vector<data::EntityId> query_entities;
    query_entities.reserve(queries.size());
    for (const auto& q : queries) query_entities.push_back(q.entity);
    if (options.zero_prototypes) {
        out.prototypes = Tensor::zeros({k, d});
    } else {
        auto protos = transfer::cluster_pool(tape, pooled.reps, pooled.empty, query_entities, out.assignment, k,
                                             state.values);
        out.prototypes = protos.values;
        state.values = protos.values.detach();
    }
    out.transferred = transfer::transfer_all(tape, p.transfer, entity_embeddings, out.prototypes, out.assignment,
                                             hp.scope, query_entities);

    // (4) ranking
    std::vector<std::size_t> rels;
    rels.reserve(queries.size());
    for (const auto& q : queries) rels.push_back(q.relation);
    const Tensor subject_rows = ops::gather_rows(tape, out.transferred, query_entities);
    const Tensor relation_rows = ops::gather_rows(tape, p.relations, rels);
    out.logits = scorer::score_all(tape, p.scorer, subject_rows, relation_rows, out.transferred);
    if (!answers.empty()) out.lp_loss = ops::cross_entropy_logits(tape, out.logits, answers);
    return out;
}

}  // namespace transfir::model
