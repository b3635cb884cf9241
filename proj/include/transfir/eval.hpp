#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "transfir/chain.hpp"
#include "transfir/data.hpp"
#include "transfir/model.hpp"
#include "transfir/numerics.hpp"

namespace transfir::eval {

using data::EntityId;
using numerics::Tensor;

enum class Mode { Vanilla, Emerging, Unknown };

// Which side of a query must be the new entity.
enum class Side { QuerySide, EitherSide };

struct EvalMode {
    Mode mode = Mode::Vanilla;
    Side side = Side::QuerySide;
};

std::string to_string(Mode mode);
std::string to_string(Side side);
Mode parse_mode(const std::string& name);
Side parse_side(const std::string& name);

struct RankResult {
    chain::Query query;
    EntityId answer = 0;
    std::size_t filtered_rank = 1;
    std::size_t raw_rank = 1;
    bool inverse = false;
};

struct Metrics {
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits3 = 0.0;
    double hits10 = 0.0;
    std::size_t n_queries = 0;
};

struct MetricsReport {
    EvalMode mode;
    Metrics forward, inverse, average;

    bool empty() const { return average.n_queries == 0; }
    // `<mode>.<direction>.<metric>=value` lines.
    std::string to_kv() const;
    std::string to_text() const;
};

// Rank of `answer` under `scores`; candidates scoring equal to the answer
// are placed ahead of it. co_true lists other correct answers for the same
// (entity, relation, timestamp); they are skipped by the filtered rank.
RankResult rank_from_scores(std::span<const double> scores, EntityId answer, std::span<const EntityId> co_true);

Metrics metrics_from_ranks(std::span<const std::size_t> ranks);
// Forward and inverse are reported separately; the average is their mean
// (or the only non-empty one).
MetricsReport report_from_ranks(std::span<const RankResult> ranks, EvalMode mode);

// Expected MRR of uniformly random ranks among n candidates, H_n / n.
double random_mrr(std::size_t n);

// Whether a query in `range` belongs to the evaluated population.
bool selected(const EvalMode& mode, const chain::Query& query, EntityId answer,
              const std::map<EntityId, data::Timestamp>& first_seen, const data::Interval& range);

struct EvalOptions {
    bool ablate_transfer = false;  // zero every prototype
    std::size_t threads = 1;
};

struct IntervalRanks {
    std::vector<RankResult> ranks;
    Tensor final_transferred;  // transferred embeddings at the last snapshot scored
};

// Walks the snapshots of `range` in order, carrying prototypes from zero.
// `augmented` must carry inverse relations.
IntervalRanks rank_interval(const model::Model& model, const data::TemporalKG& augmented,
                            const Tensor& entity_embeddings, const data::Interval& range, const EvalMode& mode,
                            const EvalOptions& options = {});

MetricsReport evaluate(const model::Model& model, const data::TemporalKG& augmented, const Tensor& entity_embeddings,
                       const data::Interval& range, const EvalMode& mode, const EvalOptions& options = {});

// ---- dataset statistics -----------------------------------------------------

struct EmergenceStats {
    std::vector<std::size_t> new_entities;         // first appearances per timestamp
    std::vector<std::size_t> cumulative_entities;  // entities seen up to each timestamp
    std::size_t total_entities = 0;                // entities occurring anywhere
    std::size_t emerging_entities = 0;             // first appearing in test
    double emerging_fraction = 0.0;
};

EmergenceStats emergence_stats(const data::TemporalKG& g, const data::Split& split);

// ---- collapse diagnostics ---------------------------------------------------

// exp((1/2d) Σ log λ_i) over covariance eigenvalues clamped at 1e-8.
double generalized_spread(const Tensor& x);
double collapse_ratio(const Tensor& emerging, const Tensor& reference);

// Coordinates of x on the top `dims` principal axes of `basis_source`
// (centered on its mean).
Tensor project_principal(const Tensor& x, const Tensor& basis_source, std::size_t dims);

// Collapse ratio after projecting both sets onto the top `dims` principal
// axes of their union.
double projected_collapse_ratio(const Tensor& emerging, const Tensor& reference, std::size_t dims);

// Writes `entity_id label x y` rows from the top-2 principal components.
void emit_projection(const Tensor& x, std::span<const EntityId> ids, std::span<const std::string> labels,
                     const std::filesystem::path& path);

struct CollapseDiagnostics {
    Tensor transferred;  // |E|×d after the last test snapshot
    std::vector<EntityId> emerging, known;
    std::vector<std::string> labels;  // known | valid-new | emerging | unseen, per entity
    std::size_t dims = 0;             // projection width
    bool defined = false;             // false when either set has fewer than 2 entities
    double raw = 0.0;
    double projected = 0.0;
    double input_projected = 0.0;  // same measure on the frozen input embeddings
};

// Runs the test range and compares the transferred embeddings of emerging
// entities with those of entities first seen in training. The projection
// keeps max(1, min(d, n_min/4)) principal axes of their union.
CollapseDiagnostics diagnose_collapse(const model::Model& model, const data::TemporalKG& graph,
                                      const Tensor& entity_embeddings, const data::Split& split,
                                      const EvalOptions& options = {});

}  // namespace transfir::eval
