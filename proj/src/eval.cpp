#include "transfir/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "transfir/error.hpp"

namespace transfir::eval {

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::Vanilla: return "vanilla";
        case Mode::Emerging: return "emerging";
        case Mode::Unknown: return "unknown";
    }
    return "?";
}

std::string to_string(Side side) { return side == Side::QuerySide ? "query" : "either"; }

Mode parse_mode(const std::string& name) {
    if (name == "vanilla") return Mode::Vanilla;
    if (name == "emerging") return Mode::Emerging;
    if (name == "unknown") return Mode::Unknown;
    throw ConfigError("unknown evaluation mode '" + name + "' (vanilla|emerging|unknown)");
}

Side parse_side(const std::string& name) {
    if (name == "query") return Side::QuerySide;
    if (name == "either") return Side::EitherSide;
    throw ConfigError("unknown emerging side '" + name + "' (query|either)");
}

// ---- ranks & metrics --------------------------------------------------------

RankResult rank_from_scores(std::span<const double> scores, EntityId answer, std::span<const EntityId> co_true) {
    if (answer >= scores.size()) throw VocabError("answer entity " + std::to_string(answer) + " outside vocabulary");
    std::vector<bool> skip(scores.size(), false);
    for (EntityId e : co_true)
        if (e < scores.size() && e != answer) skip[e] = true;
    const double target = scores[answer];
    RankResult r;
    r.answer = answer;
    r.raw_rank = 1;
    r.filtered_rank = 1;
    for (std::size_t c = 0; c < scores.size(); ++c) {
        if (c == answer || !(scores[c] >= target)) continue;
        ++r.raw_rank;
        if (!skip[c]) ++r.filtered_rank;
    }
    return r;
}

Metrics metrics_from_ranks(std::span<const std::size_t> ranks) {
    Metrics m;
    m.n_queries = ranks.size();
    if (ranks.empty()) return m;
    for (std::size_t r : ranks) {
        if (r == 0) throw ContractError("ranks start at 1");
        m.mrr += 1.0 / static_cast<double>(r);
        m.hits1 += r <= 1 ? 1.0 : 0.0;
        m.hits3 += r <= 3 ? 1.0 : 0.0;
        m.hits10 += r <= 10 ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(ranks.size());
    m.mrr /= n;
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    return m;
}

MetricsReport report_from_ranks(std::span<const RankResult> ranks, EvalMode mode) {
    std::vector<std::size_t> fwd, inv;
    for (const auto& r : ranks) (r.inverse ? inv : fwd).push_back(r.filtered_rank);
    MetricsReport rep;
    rep.mode = mode;
    rep.forward = metrics_from_ranks(fwd);
    rep.inverse = metrics_from_ranks(inv);
    if (rep.forward.n_queries == 0 || rep.inverse.n_queries == 0) {
        rep.average = rep.forward.n_queries ? rep.forward : rep.inverse;
    } else {
        rep.average.mrr = 0.5 * (rep.forward.mrr + rep.inverse.mrr);
        rep.average.hits1 = 0.5 * (rep.forward.hits1 + rep.inverse.hits1);
        rep.average.hits3 = 0.5 * (rep.forward.hits3 + rep.inverse.hits3);
        rep.average.hits10 = 0.5 * (rep.forward.hits10 + rep.inverse.hits10);
    }
    rep.average.n_queries = rep.forward.n_queries + rep.inverse.n_queries;
    return rep;
}

std::string MetricsReport::to_kv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    const std::string prefix = to_string(mode.mode);
    auto emit = [&](const char* dir, const Metrics& m) {
        const std::string p = prefix + "." + dir + ".";
        os << p << "n_queries=" << m.n_queries << '\n';
        os << p << "mrr=" << m.mrr << '\n';
        os << p << "hits1=" << m.hits1 << '\n';
        os << p << "hits3=" << m.hits3 << '\n';
        os << p << "hits10=" << m.hits10 << '\n';
    };
    emit("forward", forward);
    emit("inverse", inverse);
    emit("avg", average);
    return os.str();
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << to_string(mode.mode) << " (" << to_string(mode.side) << "-side)\n";
    auto line = [&](const char* dir, const Metrics& m) {
        os << "  " << std::left << std::setw(8) << dir << " n=" << m.n_queries;
        if (m.n_queries) os << "  MRR " << m.mrr << "  H@1 " << m.hits1 << "  H@3 " << m.hits3 << "  H@10 " << m.hits10;
        os << '\n';
    };
    line("forward", forward);
    line("inverse", inverse);
    line("average", average);
    return os.str();
}

double random_mrr(std::size_t n) {
    double h = 0.0;
    for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
    return n ? h / static_cast<double>(n) : 0.0;
}

// ---- query selection --------------------------------------------------------

bool selected(const EvalMode& mode, const chain::Query& query, EntityId answer,
              const std::map<EntityId, data::Timestamp>& first_seen, const data::Interval& range) {
    if (mode.mode == Mode::Vanilla) return true;
    auto matches = [&](EntityId e) {
        auto it = first_seen.find(e);
        if (it == first_seen.end()) return false;
        const data::Timestamp first = it->second;
        if (mode.mode == Mode::Emerging) return first == query.timestamp && range.contains(first);
        // Unknown: unseen before the evaluated range, at a later occurrence.
        return first >= range.begin && first < query.timestamp;
    };
    if (matches(query.entity)) return true;
    return mode.side == Side::EitherSide && matches(answer);
}

// ---- ranking over an interval -----------------------------------------------

IntervalRanks rank_interval(const model::Model& model, const data::TemporalKG& augmented,
                            const Tensor& entity_embeddings, const data::Interval& range, const EvalMode& mode,
                            const EvalOptions& options) {
    if (!augmented.augmented()) throw ContractError("evaluation expects a graph with inverse relations");
    const auto first_seen = data::first_appearance(augmented);
    const chain::HistoryIndex history(augmented);
    auto state = model::PrototypeState::zeros(model.params.codebook.size(), model.dim());
    model::ForwardOptions fwd;
    fwd.zero_prototypes = options.ablate_transfer;
    const std::size_t r_count = augmented.num_relations();

    IntervalRanks out;
    for (data::Timestamp t = range.begin; t < range.end && t < augmented.num_timestamps(); ++t) {
        std::vector<EntityId> answers;
        const auto queries = model::snapshot_queries(augmented, t, &answers);
        if (queries.empty()) continue;
        numerics::Tape tape(false);
        const auto snap = model::forward_snapshot(tape, model, history, entity_embeddings, queries, {}, state, fwd);
        out.final_transferred = snap.transferred;

        std::vector<std::size_t> picked;
        for (std::size_t i = 0; i < queries.size(); ++i)
            if (selected(mode, queries[i], answers[i], first_seen, range)) picked.push_back(i);
        if (picked.empty()) continue;

        const std::size_t n_ent = snap.logits.cols();
        const auto logits = snap.logits.values();
        std::vector<RankResult> ranks(picked.size());
        auto work = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t j = lo; j < hi; ++j) {
                const std::size_t i = picked[j];
                std::vector<EntityId> co_true;
                for (std::size_t o = 0; o < queries.size(); ++o)
                    if (queries[o].entity == queries[i].entity && queries[o].relation == queries[i].relation)
                        co_true.push_back(answers[o]);
                ranks[j] = rank_from_scores(logits.subspan(i * n_ent, n_ent), answers[i], co_true);
                ranks[j].query = queries[i];
                ranks[j].inverse = queries[i].relation >= r_count;
            }
        };
        const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, picked.size()));
        if (threads == 1) {
            work(0, picked.size());
        } else {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (picked.size() + threads - 1) / threads;
            for (std::size_t lo = 0; lo < picked.size(); lo += chunk)
                pool.emplace_back(work, lo, std::min(picked.size(), lo + chunk));
        }
        out.ranks.insert(out.ranks.end(), ranks.begin(), ranks.end());
    }
    return out;
}

MetricsReport evaluate(const model::Model& model, const data::TemporalKG& augmented, const Tensor& entity_embeddings,
                       const data::Interval& range, const EvalMode& mode, const EvalOptions& options) {
    const auto ranked = rank_interval(model, augmented, entity_embeddings, range, mode, options);
    return report_from_ranks(ranked.ranks, mode);
}

// ---- statistics -------------------------------------------------------------

EmergenceStats emergence_stats(const data::TemporalKG& g, const data::Split& split) {
    EmergenceStats s;
    s.new_entities.assign(g.num_timestamps(), 0);
    for (const auto& [e, t] : data::first_appearance(g)) {
        ++s.new_entities[t];
        ++s.total_entities;
        if (split.test.contains(t)) ++s.emerging_entities;
    }
    std::size_t running = 0;
    for (std::size_t n : s.new_entities) s.cumulative_entities.push_back(running += n);
    s.emerging_fraction = s.total_entities
                              ? static_cast<double>(s.emerging_entities) / static_cast<double>(s.total_entities)
                              : 0.0;
    return s;
}

// ---- collapse diagnostics ---------------------------------------------------

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(const Tensor& x) {
    return Eigen::Map<const Matrix>(x.values().data(), static_cast<Eigen::Index>(x.rows()),
                                    static_cast<Eigen::Index>(x.cols()));
}

Eigen::MatrixXd covariance(const Matrix& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - mean;
    return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

constexpr double kEigenFloor = 1e-8;

// Eigenvectors sorted by decreasing eigenvalue.
Eigen::MatrixXd principal_axes(const Matrix& x) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance(x));
    return solver.eigenvectors().rowwise().reverse();
}

}  // namespace

double generalized_spread(const Tensor& x) {
    if (x.rows() < 2) throw ContractError("generalized spread needs at least 2 points");
    const Matrix m = to_matrix(x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance(m), Eigen::EigenvaluesOnly);
    const auto& eig = solver.eigenvalues();
    double log_sum = 0.0;
    for (Eigen::Index i = 0; i < eig.size(); ++i) log_sum += std::log(std::max(eig[i], kEigenFloor));
    return std::exp(log_sum / (2.0 * static_cast<double>(eig.size())));
}

double collapse_ratio(const Tensor& emerging, const Tensor& reference) {
    if (emerging.cols() != reference.cols()) throw ShapeError("collapse ratio: sets differ in dimension");
    return generalized_spread(emerging) / generalized_spread(reference);
}

Tensor project_principal(const Tensor& x, const Tensor& basis_source, std::size_t dims) {
    if (basis_source.rows() < 2) throw ContractError("principal axes need at least 2 points");
    if (x.cols() != basis_source.cols()) throw ShapeError("projection: dimension mismatch");
    const Matrix src = to_matrix(basis_source);
    const Eigen::RowVectorXd mean = src.colwise().mean();
    const Eigen::MatrixXd axes = principal_axes(src);
    const auto keep = static_cast<Eigen::Index>(std::min<std::size_t>(dims, x.cols()));
    const Matrix proj = (to_matrix(x).rowwise() - mean) * axes.leftCols(keep);
    Matrix padded = Matrix::Zero(proj.rows(), static_cast<Eigen::Index>(dims));
    padded.leftCols(keep) = proj;
    return Tensor::from({x.rows(), dims}, std::vector<double>(padded.data(), padded.data() + padded.size()));
}

double projected_collapse_ratio(const Tensor& emerging, const Tensor& reference, std::size_t dims) {
    if (emerging.cols() != reference.cols()) throw ShapeError("collapse ratio: sets differ in dimension");
    std::vector<double> pooled(emerging.values().begin(), emerging.values().end());
    pooled.insert(pooled.end(), reference.values().begin(), reference.values().end());
    const Tensor both = Tensor::from({emerging.rows() + reference.rows(), emerging.cols()}, std::move(pooled));
    dims = std::min(dims, emerging.cols());
    return collapse_ratio(project_principal(emerging, both, dims), project_principal(reference, both, dims));
}

void emit_projection(const Tensor& x, std::span<const EntityId> ids, std::span<const std::string> labels,
                     const std::filesystem::path& path) {
    if (x.rows() < 2) throw ContractError("projection needs at least 2 points");
    if (ids.size() != x.rows() || labels.size() != x.rows()) throw ShapeError("projection: ids/labels per row required");
    const Tensor coords = project_principal(x, x, 2);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "entity_id label x y\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < x.rows(); ++i)
        out << ids[i] << ' ' << labels[i] << ' ' << coords.at(i, 0) << ' ' << coords.at(i, 1) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

CollapseDiagnostics diagnose_collapse(const model::Model& model, const data::TemporalKG& graph,
                                      const Tensor& entity_embeddings, const data::Split& split,
                                      const EvalOptions& options) {
    const auto augmented = graph.augmented() ? graph : data::add_inverse_relations(graph);
    const auto ranked =
        rank_interval(model, augmented, entity_embeddings, split.test, {Mode::Vanilla, Side::QuerySide}, options);
    CollapseDiagnostics out;
    out.transferred = ranked.final_transferred.defined() ? ranked.final_transferred : entity_embeddings;

    const auto first_seen = data::first_appearance(graph);
    for (EntityId e = 0; e < graph.num_entities(); ++e) {
        auto it = first_seen.find(e);
        std::string label = "unseen";
        if (it != first_seen.end()) {
            if (split.train.contains(it->second)) label = "known";
            else if (split.valid.contains(it->second)) label = "valid-new";
            else label = "emerging";
        }
        if (label == "known") out.known.push_back(e);
        if (label == "emerging") out.emerging.push_back(e);
        out.labels.push_back(label);
    }
    if (out.emerging.size() < 2 || out.known.size() < 2) return out;

    numerics::Tape tape(false);
    const auto em = numerics::gather_rows(tape, out.transferred, out.emerging);
    const auto kn = numerics::gather_rows(tape, out.transferred, out.known);
    out.dims = std::max<std::size_t>(
        1, std::min(out.transferred.cols(), std::min(out.emerging.size(), out.known.size()) / 4));
    out.defined = true;
    out.raw = collapse_ratio(em, kn);
    out.projected = projected_collapse_ratio(em, kn, out.dims);
    out.input_projected =
        projected_collapse_ratio(numerics::gather_rows(tape, entity_embeddings, out.emerging),
                                 numerics::gather_rows(tape, entity_embeddings, out.known), out.dims);
    return out;
}

}  // namespace transfir::eval
