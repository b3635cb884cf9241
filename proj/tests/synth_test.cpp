#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"
#include "transfir/codebook.hpp"
#include "transfir/error.hpp"
#include "transfir/eval.hpp"
#include "transfir/synth.hpp"

using namespace transfir;
using namespace transfir::synth;

TEST(Synth, DeterministicUnderSeed) {
    SynthSpec spec;
    spec.seed = 7;
    const auto a = generate(spec), b = generate(spec);
    EXPECT_EQ(a.graph.all_facts(), b.graph.all_facts());
    EXPECT_TRUE(std::equal(a.embeddings.values().begin(), a.embeddings.values().end(), b.embeddings.values().begin()));
    spec.seed = 8;
    EXPECT_NE(generate(spec).graph.all_facts(), a.graph.all_facts());
}

TEST(Synth, DefaultShapeAndEmergence) {
    const auto inst = generate(SynthSpec{});
    EXPECT_EQ(inst.graph.num_entities(), 120u);
    EXPECT_EQ(inst.graph.num_relations(), 8u);
    EXPECT_EQ(inst.graph.num_timestamps(), 60u);
    EXPECT_EQ(inst.embeddings.rows(), 120u);
    EXPECT_EQ(inst.embeddings.cols(), 32u);
    const auto stats = eval::emergence_stats(inst.graph, inst.split);
    EXPECT_EQ(stats.total_entities, 120u);
    EXPECT_EQ(stats.emerging_entities, 30u);
    EXPECT_DOUBLE_EQ(stats.emerging_fraction, 0.25);
}

TEST(Synth, EveryFactOfTheNoiselessGraphFollowsItsPattern) {
    SynthSpec spec;
    spec.noise = 0.0;
    const auto inst = generate(spec);
    for (const auto& f : inst.graph.all_facts()) {
        const bool out = f.relation % 2 == 0;
        const auto query = out ? f.subject : f.object;
        const auto answer = out ? f.object : f.subject;
        const auto answers = inst.truth.pattern_answers(query, out ? f.relation : f.relation + 8, f.timestamp, 8);
        EXPECT_NE(std::find(answers.begin(), answers.end(), answer), answers.end());
    }
}

TEST(Synth, TightJitterGivesPureCodebook) {
    SynthSpec spec;
    spec.jitter = 0.01;
    const auto inst = generate(spec);
    std::vector<std::size_t> labels(inst.truth.type_of.begin(), inst.truth.type_of.end());
    // One codeword per type centroid: the first member of each type.
    std::vector<double> cw;
    for (std::size_t tau = 0; tau < spec.types; ++tau) {
        const std::size_t e = tau * spec.entities_per_type;
        for (std::size_t j = 0; j < spec.dim; ++j) cw.push_back(inst.embeddings.at(e, j));
    }
    const codebook::Codebook cb{numerics::Tensor::from({spec.types, spec.dim}, cw)};
    EXPECT_DOUBLE_EQ(codebook::assignment_purity(codebook::assign(cb, inst.embeddings), labels), 1.0);
}

TEST(Synth, OracleIsPerfectForSingleAnswers) {
    SynthSpec spec;
    spec.noise = 0.0;
    const auto inst = generate(spec);
    EXPECT_DOUBLE_EQ(oracle_best_mrr(inst.truth, inst.graph, inst.split), 1.0);
}

TEST(Synth, OracleWithTwoAnswers) {
    SynthSpec spec;
    spec.noise = 0.0;
    spec.answers_per_pattern = 2;
    const auto inst = generate(spec);
    // Only one of the two anchors is observed per query, so the answer sits
    // uniformly at rank 1 or 2.
    EXPECT_NEAR(oracle_best_mrr(inst.truth, inst.graph, inst.split), 0.75, 1e-12);
}

TEST(Synth, TruthRoundTrip) {
    const auto inst = generate(SynthSpec{});
    const auto dir = std::filesystem::temp_directory_path() / ("transfir_synth_" + std::to_string(::getpid()));
    write_instance(inst, dir);
    const auto truth = read_truth(dir / "truth.txt");
    EXPECT_EQ(truth.type_of, inst.truth.type_of);
    EXPECT_EQ(truth.is_anchor, inst.truth.is_anchor);
    EXPECT_EQ(truth.anchors, inst.truth.anchors);
    EXPECT_EQ(truth.phase_offset, inst.truth.phase_offset);
    for (const char* name : {"entity2id.txt", "relation2id.txt", "facts.txt", "embeddings.txt"})
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
    std::filesystem::remove_all(dir);
}

TEST(Synth, InvalidSpecs) {
    SynthSpec spec;
    spec.anchors_per_type = 0;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = SynthSpec{};
    spec.emergence_fraction = 0.9;
    EXPECT_THROW(generate(spec), ConfigError);
    spec = SynthSpec{};
    spec.answers_per_pattern = 3;
    EXPECT_THROW(spec.validate(), ConfigError);
}
