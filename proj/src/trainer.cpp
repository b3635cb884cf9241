#include "transfir/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "transfir/error.hpp"

namespace transfir::trainer {

Adam::Adam(ParamList params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    for (const auto& [name, p] : params_) {
        if (!p.requires_grad()) throw ContractError("parameter '" + name + "' does not require a gradient");
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

void Adam::step() {
    for (const auto& [name, p] : params_)
        if (!p.has_grad()) throw ContractError("parameter '" + name + "' has no gradient");
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].second;
        const auto g = p.grad();
        auto w = p.mutable_values();
        auto m = m_[i].mutable_values();
        auto v = v_[i].mutable_values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
        p.clear_grad();
    }
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (double& g : Tensor(p).grad_buffer()) g *= factor;
        }
    }
    return norm;
}

StepLosses train_timestamp(model::Model& model, Adam& optimizer, const TrainingData& data, data::Timestamp t,
                           model::PrototypeState& state, const codebook::AssignmentMap* cached_assignment) {
    std::vector<data::EntityId> answers;
    const auto queries = model::snapshot_queries(data.augmented, t, &answers);
    StepLosses out;
    if (queries.empty()) return out;

    numerics::Tape tape;
    model::ForwardOptions options;
    options.cached_assignment = cached_assignment;
    model::SnapshotOutput snap;
    try {
        snap = model::forward_snapshot(tape, model, data.history, data.embeddings, queries, answers, state, options);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at timestamp " + std::to_string(t));
    }
    const Tensor total =
        numerics::add(tape, snap.lp_loss, numerics::scale(tape, snap.vq_loss, model.hp.lambda));

    out.total = total.item();
    out.lp = snap.lp_loss.item();
    out.codebook = snap.vq_loss.item();
    out.cb = snap.cb_value;
    out.commit = snap.commit_value;
    out.queries = queries.size();
    if (!std::isfinite(out.total)) {
        throw NumericError("loss diverged (non-finite) at timestamp " + std::to_string(t));
    }

    tape.backward(total);
    // Parameters the snapshot did not reach (e.g. no chain had items) step on a zero gradient.
    for (const auto& [name, p] : optimizer.params()) Tensor(p).grad_buffer();
    for (const auto& [name, p] : optimizer.params())
        for (double g : p.grad())
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient for '" + name + "' at timestamp " + std::to_string(t));
            }
    clip_grad_norm(optimizer.params(), model.hp.clip_norm);
    optimizer.step();
    return out;
}

std::string EpochReport::to_log_line() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "epoch=" << epoch << " loss=" << loss << " lp=" << lp << " codebook=" << codebook << " steps=" << steps
       << " dead_codes=" << dead_codes;
    if (valid_mrr) os << " valid_mrr=" << *valid_mrr;
    return os.str();
}

EpochReport train_epoch(model::Model& model, Adam& optimizer, const TrainingData& data, std::size_t epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochReport report;
    report.epoch = epoch;
    auto state = model::PrototypeState::zeros(model.params.codebook.size(), model.dim());

    std::optional<codebook::AssignmentMap> cache;
    if (model.hp.cache_assignments) cache = codebook::assign(model.params.codebook, data.embeddings);

    const auto& range = data.split.train;
    for (data::Timestamp t = range.begin; t < range.end && t < data.augmented.num_timestamps(); ++t) {
        report.visited.push_back(t);
        const auto step = train_timestamp(model, optimizer, data, t, state, cache ? &*cache : nullptr);
        if (step.queries == 0) continue;
        report.loss += step.total;
        report.lp += step.lp;
        report.codebook += step.codebook;
        ++report.steps;
    }
    if (report.steps) {
        const auto n = static_cast<double>(report.steps);
        report.loss /= n;
        report.lp /= n;
        report.codebook /= n;
    }
    report.dead_codes = codebook::dead_codes(codebook::assign(model.params.codebook, data.embeddings),
                                             model.params.codebook.size());
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

namespace {

struct Snapshot {
    std::vector<std::vector<double>> params, m, v;
    std::uint64_t steps = 0;
};

Snapshot take(const Adam& opt) {
    Snapshot s;
    s.steps = opt.steps();
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto p = opt.params()[i].second.values();
        s.params.emplace_back(p.begin(), p.end());
        const auto m = opt.first_moments()[i].values();
        s.m.emplace_back(m.begin(), m.end());
        const auto v = opt.second_moments()[i].values();
        s.v.emplace_back(v.begin(), v.end());
    }
    return s;
}

void restore(Adam& opt, const Snapshot& s) {
    opt.set_steps(s.steps);
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        std::copy(s.params[i].begin(), s.params[i].end(), Tensor(opt.params()[i].second).mutable_values().begin());
        std::copy(s.m[i].begin(), s.m[i].end(), opt.first_moments()[i].mutable_values().begin());
        std::copy(s.v[i].begin(), s.v[i].end(), opt.second_moments()[i].mutable_values().begin());
    }
}

}  // namespace

TrainResult train(model::Model& model, Adam& optimizer, const TrainingData& data, const TrainOptions& options) {
    TrainResult result;
    const bool validate = options.validate && !data.split.valid.empty();
    eval::EvalOptions eval_options;
    eval_options.threads = options.threads;

    eval::EvalMode selection{eval::Mode::Emerging, options.valid_side};
    if (validate) {
        const auto first_seen = data::first_appearance(data.augmented);
        bool any = false;
        for (data::Timestamp t = data.split.valid.begin; t < data.split.valid.end && !any; ++t) {
            std::vector<data::EntityId> answers;
            const auto queries = model::snapshot_queries(data.augmented, t, &answers);
            for (std::size_t i = 0; i < queries.size() && !any; ++i)
                any = eval::selected(selection, queries[i], answers[i], first_seen, data.split.valid);
        }
        if (!any) selection.mode = eval::Mode::Vanilla;
    }
    result.selection_mode = selection.mode;

    Snapshot best;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= model.hp.epochs; ++epoch) {
        auto report = train_epoch(model, optimizer, data, epoch);
        if (validate) {
            const auto start = std::chrono::steady_clock::now();
            const auto metrics =
                eval::evaluate(model, data.augmented, data.embeddings, data.split.valid, selection, eval_options);
            report.valid_mrr = metrics.average.mrr;
            report.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        result.epochs.push_back(report);
        if (options.on_epoch) options.on_epoch(report);

        // Without validation the latest epoch is kept.
        const bool improved = !validate || result.best_epoch == 0 || *report.valid_mrr > result.best_valid_mrr;
        if (improved) {
            result.best_epoch = epoch;
            result.best_valid_mrr = report.valid_mrr.value_or(0.0);
            best = take(optimizer);
            since_best = 0;
        } else if (validate && ++since_best >= model.hp.patience && model.hp.patience > 0) {
            break;
        }
    }
    if (result.best_epoch) restore(optimizer, best);
    return result;
}

}  // namespace transfir::trainer
