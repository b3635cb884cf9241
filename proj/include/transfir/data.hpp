#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "transfir/numerics.hpp"

namespace transfir::data {

using EntityId = std::size_t;
using RelationId = std::size_t;
using Timestamp = std::size_t;

struct Quadruple {
    EntityId subject = 0;
    RelationId relation = 0;
    EntityId object = 0;
    Timestamp timestamp = 0;

    auto operator<=>(const Quadruple&) const = default;
};

struct Vocab {
    std::vector<std::string> entities;   // id -> name
    std::vector<std::string> relations;  // id -> name

    std::size_t num_entities() const { return entities.size(); }
    std::size_t num_relations() const { return relations.size(); }

    // Reads entity2id.txt and relation2id.txt (`name<TAB>id`) from dir.
    static Vocab load(const std::filesystem::path& dir);
    // Placeholder names "e<i>" / "r<i>".
    static Vocab numbered(std::size_t entities, std::size_t relations);
    void save(const std::filesystem::path& dir) const;
};

// Timestamped facts grouped into contiguous snapshots 0..num_timestamps-1.
// Duplicate facts are kept. After add_inverse_relations the relation space
// is 2|R| with inverse ids offset by |R|.
class TemporalKG {
public:
    TemporalKG() = default;
    TemporalKG(Vocab vocab, const std::vector<Quadruple>& facts);

    const Vocab& vocab() const { return vocab_; }
    std::size_t num_entities() const { return vocab_.num_entities(); }
    // Number of original relations |R|.
    std::size_t num_relations() const { return vocab_.num_relations(); }
    // Size of the relation id space actually in use (|R| or 2|R|).
    std::size_t relation_space() const { return augmented_ ? 2 * num_relations() : num_relations(); }
    bool augmented() const { return augmented_; }

    std::size_t num_timestamps() const { return snapshots_.size(); }
    std::size_t fact_count() const { return fact_count_; }
    std::span<const Quadruple> facts_at(Timestamp t) const;
    std::vector<Quadruple> all_facts() const;

    friend TemporalKG add_inverse_relations(const TemporalKG& g);

private:
    Vocab vocab_;
    std::vector<std::vector<Quadruple>> snapshots_;
    std::size_t fact_count_ = 0;
    bool augmented_ = false;
};

// Half-open timestamp range.
struct Interval {
    Timestamp begin = 0;
    Timestamp end = 0;

    bool contains(Timestamp t) const { return t >= begin && t < end; }
    bool empty() const { return begin >= end; }
    std::size_t length() const { return end > begin ? end - begin : 0; }
    bool operator==(const Interval&) const = default;
};

struct Split {
    Interval train, valid, test;
    bool operator==(const Split&) const = default;
};

struct LoadOptions {
    // 0 infers the granularity as the gcd of distinct raw times.
    std::size_t granularity = 0;
};

// Reads one or more quadruple files sharing a vocabulary and a time
// granularity. Raw times are divided by the granularity.
TemporalKG load_quadruples(std::span<const std::filesystem::path> paths,
                           const std::filesystem::path& vocab_dir, LoadOptions options = {});
TemporalKG load_quadruples(const std::filesystem::path& path, const std::filesystem::path& vocab_dir,
                           LoadOptions options = {});
// Loads DIR/facts.txt when present, otherwise DIR/{train,valid,test}.txt,
// with the vocabulary files of DIR.
TemporalKG load_dataset_dir(const std::filesystem::path& dir, LoadOptions options = {});
void save_quadruples(const TemporalKG& g, const std::filesystem::path& path, std::size_t granularity = 1);

TemporalKG add_inverse_relations(const TemporalKG& g);

Split chronological_split(const TemporalKG& g, double train_ratio, double valid_ratio, double test_ratio);
Split chronological_split(std::size_t num_timestamps, double train_ratio, double valid_ratio,
                          double test_ratio);

// Minimum timestamp at which each occurring entity participates in a fact.
std::map<EntityId, Timestamp> first_appearance(const TemporalKG& g);

// Entities whose first appearance falls in the test interval.
std::set<EntityId> emerging_entities(const TemporalKG& g, const Split& split);

// Frozen |E|×d entity embedding matrix, rows in id order.
struct EntityEmbeddings {
    numerics::Tensor matrix;
    std::size_t count() const { return matrix.rows(); }
    std::size_t dim() const { return matrix.cols(); }
};

EntityEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t expected_entities);
void save_embeddings(const EntityEmbeddings& table, const std::filesystem::path& path);

}  // namespace transfir::data
