#include "transfir/codebook.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>

#include "transfir/error.hpp"

namespace transfir::codebook {

using numerics::Tape;
using numerics::Tensor;

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

void check_dims(const Codebook& cb, const Tensor& embeddings) {
    if (embeddings.cols() != cb.dim()) {
        throw ShapeError("codebook dimension " + std::to_string(cb.dim()) + " does not match embedding dimension " +
                         std::to_string(embeddings.cols()));
    }
}

void check_assignment(const Codebook& cb, const Tensor& embeddings, const AssignmentMap& assignment) {
    check_dims(cb, embeddings);
    if (assignment.size() != embeddings.rows()) throw ShapeError("assignment does not cover every entity");
    for (std::size_t k : assignment)
        if (k >= cb.size()) throw IndexError("assignment refers to codeword " + std::to_string(k));
}

}  // namespace

AssignmentMap assign(const Codebook& cb, const Tensor& embeddings) {
    check_dims(cb, embeddings);
    const std::size_t n = embeddings.rows(), d = cb.dim(), k = cb.size();
    const auto ev = embeddings.values();
    const auto cv = cb.codewords.values();
    AssignmentMap out(n, 0);
    for (std::size_t e = 0; e < n; ++e) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = squared_distance(ev.subspan(e * d, d), cv.subspan(c * d, d));
            if (dist < best) {
                best = dist;
                out[e] = c;
            }
        }
    }
    return out;
}

Tensor codebook_loss(Tape& tape, const Codebook& cb, const Tensor& embeddings, const AssignmentMap& assignment) {
    check_assignment(cb, embeddings, assignment);
    const Tensor selected = numerics::gather_rows(tape, cb.codewords, assignment);
    const Tensor diff = numerics::sub(tape, selected, embeddings.detach());
    return numerics::sum(tape, numerics::mul(tape, diff, diff));
}

Tensor commitment_loss(Tape& tape, const Codebook& cb, const Tensor& embeddings, const AssignmentMap& assignment) {
    check_assignment(cb, embeddings, assignment);
    const Tensor selected = numerics::gather_rows(tape, cb.codewords.detach(), assignment);
    const Tensor diff = numerics::sub(tape, embeddings, selected);
    return numerics::sum(tape, numerics::mul(tape, diff, diff));
}

Tensor codebook_objective(Tape& tape, const Codebook& cb, const Tensor& embeddings, const AssignmentMap& assignment) {
    const Tensor cb_term = numerics::scale(tape, codebook_loss(tape, cb, embeddings, assignment), cb.alpha);
    const Tensor commit_term = numerics::scale(tape, commitment_loss(tape, cb, embeddings, assignment), cb.beta);
    return numerics::add(tape, cb_term, commit_term);
}

Codebook init_codebook(const Tensor& embeddings, std::size_t k, std::uint64_t seed, double alpha, double beta) {
    const std::size_t n = embeddings.rows(), d = embeddings.cols();
    if (k == 0) throw ConfigError("codebook size must be at least 1");
    if (k > n) {
        throw ConfigError("codebook size " + std::to_string(k) + " exceeds entity count " + std::to_string(n));
    }
    if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("codebook loss weights must be positive");
    const auto ev = embeddings.values();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    taken[chosen[0]] = true;
    while (chosen.size() < k) {
        const std::size_t last = chosen.back();
        std::size_t best = n;
        double best_dist = -1.0;
        for (std::size_t e = 0; e < n; ++e) {
            nearest[e] = std::min(nearest[e], squared_distance(ev.subspan(e * d, d), ev.subspan(last * d, d)));
            if (!taken[e] && nearest[e] > best_dist) {
                best_dist = nearest[e];
                best = e;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
    }
    std::vector<double> values;
    values.reserve(k * d);
    for (std::size_t e : chosen) values.insert(values.end(), ev.begin() + e * d, ev.begin() + (e + 1) * d);
    return Codebook{Tensor::from({k, d}, std::move(values), true), alpha, beta};
}

std::size_t dead_codes(const AssignmentMap& assignment, std::size_t k) {
    std::vector<bool> used(k, false);
    for (std::size_t c : assignment)
        if (c < k) used[c] = true;
    return static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
}

double assignment_purity(const AssignmentMap& assignment, std::span<const std::size_t> labels) {
    if (assignment.size() != labels.size()) throw ShapeError("purity: assignment and labels differ in length");
    if (assignment.empty()) return 1.0;
    std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < assignment.size(); ++i) ++counts[assignment[i]][labels[i]];
    std::size_t agree = 0;
    for (const auto& [cluster, by_label] : counts) {
        std::size_t best = 0;
        for (const auto& [label, c] : by_label) best = std::max(best, c);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(assignment.size());
}

}  // namespace transfir::codebook
