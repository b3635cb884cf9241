#pragma once

// Model parameters and the per-snapshot forward pass:
// assignment -> VQ losses -> chains -> encoding -> pooling -> transfer -> scores.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "transfir/chain.hpp"
#include "transfir/codebook.hpp"
#include "transfir/data.hpp"
#include "transfir/encoder.hpp"
#include "transfir/numerics.hpp"
#include "transfir/scorer.hpp"
#include "transfir/transfer.hpp"

namespace transfir::model {

using numerics::Tape;
using numerics::Tensor;

struct Hyperparams {
    std::size_t codebook_size = 50;  // K
    std::size_t chain_length = 30;   // k
    std::size_t window = 10;         // T
    std::size_t dim = 0;             // d; 0 takes the embedding width
    std::size_t layers = 2;          // L
    std::size_t heads = 4;           // H
    double alpha = 1.0;
    double beta = 0.25;
    double lambda = 1.0;
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    transfer::TransferScope scope = transfer::TransferScope::AllEntities;
    std::size_t channels = 50;      // C
    std::size_t kernel_width = 3;   // w
    double clip_norm = 1.0;         // 0 disables clipping
    std::size_t patience = 5;
    bool cache_assignments = false;

    // `key=value` lines, stable key order.
    std::string to_text() const;
    static Hyperparams from_text(const std::string& text);
    // Applies one key/value; unknown keys raise ConfigError.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    std::map<std::string, std::string> to_map() const;
};

struct ModelParams {
    Tensor relations;  // 2|R|×d, trainable
    encoder::EncoderParams encoder;
    transfer::TransferParams transfer;
    scorer::ScorerParams scorer;
    codebook::Codebook codebook;

    // Every trainable tensor exactly once, in a fixed order.
    numerics::ParamList parameters() const;
};

struct Model {
    Hyperparams hp;
    std::size_t num_entities = 0;
    std::size_t num_relations = 0;  // original |R|
    ModelParams params;

    // Fresh model; the codebook is seeded from the entity embeddings.
    static Model init(const Hyperparams& hp, std::size_t num_relations, const Tensor& entity_embeddings);
    std::size_t dim() const { return params.relations.cols(); }
};

// Dynamic prototypes carried across the snapshots of one pass.
struct PrototypeState {
    Tensor values;  // K×d constant
    static PrototypeState zeros(std::size_t k, std::size_t d) { return {Tensor::zeros({k, d})}; }
};

struct ForwardOptions {
    bool zero_prototypes = false;  // evaluation ablation: no pattern transfer
    const codebook::AssignmentMap* cached_assignment = nullptr;
};

struct SnapshotOutput {
    Tensor logits;        // S×|E|
    Tensor transferred;   // |E|×d
    Tensor prototypes;    // K×d
    Tensor lp_loss;       // undefined unless answers were supplied
    Tensor vq_loss;       // α·L_cb + β·L_commit
    double cb_value = 0.0;
    double commit_value = 0.0;
    codebook::AssignmentMap assignment;
    std::vector<bool> empty_chains;
};

// Queries of snapshot t: each fact (s, r, o, t) of the augmented graph asks (s, r, ?).
std::vector<chain::Query> snapshot_queries(const data::TemporalKG& augmented, data::Timestamp t,
                                           std::vector<data::EntityId>* answers = nullptr);

// Runs the forward pass for all queries of one snapshot. Updates `state`
// with the pooled prototypes. When answers is non-empty, lp_loss holds the
// mean cross-entropy.
SnapshotOutput forward_snapshot(Tape& tape, const Model& model, const chain::HistoryIndex& history,
                                const Tensor& entity_embeddings, std::span<const chain::Query> queries,
                                std::span<const data::EntityId> answers, PrototypeState& state,
                                const ForwardOptions& options = {});

}  // namespace transfir::model
