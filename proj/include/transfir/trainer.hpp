#pragma once

// Chronological training: one optimizer step per training snapshot, epochs
// with early stopping on validation MRR.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "transfir/chain.hpp"
#include "transfir/data.hpp"
#include "transfir/eval.hpp"
#include "transfir/model.hpp"
#include "transfir/numerics.hpp"

namespace transfir::trainer {

using numerics::ParamList;
using numerics::Tensor;

// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
public:
    Adam(ParamList params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one bias-corrected update from the current gradients, then
    // clears them. Every parameter must hold a gradient.
    void step();

    const ParamList& params() const { return params_; }
    double learning_rate() const { return lr_; }
    std::uint64_t steps() const { return step_; }
    void set_steps(std::uint64_t steps) { step_ = steps; }

    // Moment buffers, one per parameter in list order.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    ParamList params_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_, v_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm (0
// disables). Returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

// What a training step reads: the inverse-augmented graph, its history
// index, the frozen entity table and the split.
struct TrainingData {
    const data::TemporalKG& augmented;
    const chain::HistoryIndex& history;
    const Tensor& embeddings;
    data::Split split;
};

struct StepLosses {
    double total = 0.0;
    double lp = 0.0;
    double codebook = 0.0;    // α·L_cb + β·L_commit
    double cb = 0.0;
    double commit = 0.0;
    std::size_t queries = 0;  // 0 when the snapshot was empty
};

// One optimizer step on all queries at timestamp t. Non-finite losses raise
// NumericError naming t.
StepLosses train_timestamp(model::Model& model, Adam& optimizer, const TrainingData& data, data::Timestamp t,
                           model::PrototypeState& state, const codebook::AssignmentMap* cached_assignment = nullptr);

struct EpochReport {
    std::size_t epoch = 0;
    double loss = 0.0;  // means over non-empty training snapshots
    double lp = 0.0;
    double codebook = 0.0;
    std::size_t steps = 0;
    std::size_t dead_codes = 0;
    std::vector<data::Timestamp> visited;
    std::optional<double> valid_mrr;
    double seconds = 0.0;

    // `key=value` pairs separated by spaces; wall-clock time is left out.
    std::string to_log_line() const;
};

// Visits the training snapshots in ascending order with prototypes reset.
EpochReport train_epoch(model::Model& model, Adam& optimizer, const TrainingData& data, std::size_t epoch = 1);

struct TrainOptions {
    bool validate = true;
    eval::Side valid_side = eval::Side::QuerySide;
    std::size_t threads = 1;
    std::function<void(const EpochReport&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochReport> epochs;
    std::size_t best_epoch = 0;
    double best_valid_mrr = 0.0;
    eval::Mode selection_mode = eval::Mode::Emerging;
};

// Trains for up to hp.epochs, keeping the parameters (and optimizer state)
// of the epoch with the best validation emerging MRR. Vanilla MRR is used
// when the validation range has no emerging queries.
TrainResult train(model::Model& model, Adam& optimizer, const TrainingData& data, const TrainOptions& options = {});

}  // namespace transfir::trainer
