#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "transfir/data.hpp"
#include "transfir/error.hpp"

using namespace transfir;
using namespace transfir::data;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("transfir_data_" + std::to_string(::getpid()) + "_" +
                                             std::to_string(counter_++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    static inline int counter_ = 0;
    fs::path path_;
};

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

void write_vocab(const fs::path& dir, std::size_t entities, std::size_t relations) {
    Vocab::numbered(entities, relations).save(dir);
}

}  // namespace

TEST(Load, NormalisesRawTimesByGranularity) {
    TempDir dir;
    write_vocab(dir.path(), 8, 6);
    write(dir.path() / "facts.txt", "3\t5\t7\t24\n0\t1\t2\t0\n");
    const auto g = load_quadruples(dir.path() / "facts.txt", dir.path());
    ASSERT_EQ(g.num_timestamps(), 2u);
    ASSERT_EQ(g.facts_at(1).size(), 1u);
    EXPECT_EQ(g.facts_at(1)[0], (Quadruple{3, 5, 7, 1}));
}

TEST(Load, ExplicitGranularity) {
    TempDir dir;
    write_vocab(dir.path(), 8, 6);
    write(dir.path() / "facts.txt", "3\t5\t7\t48\n");
    const auto g = load_quadruples(dir.path() / "facts.txt", dir.path(), LoadOptions{24});
    EXPECT_EQ(g.num_timestamps(), 3u);
    EXPECT_EQ(g.facts_at(2)[0].timestamp, 2u);
}

TEST(Load, ParseErrorNamesFileAndLine) {
    TempDir dir;
    write_vocab(dir.path(), 4, 2);
    write(dir.path() / "facts.txt", "0\t1\t2\t0\n0\tx\t2\t0\n");
    try {
        load_quadruples(dir.path() / "facts.txt", dir.path());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("facts.txt:2"), std::string::npos) << e.what();
    }
}

TEST(Load, UnknownEntityIsVocabError) {
    TempDir dir;
    write_vocab(dir.path(), 4, 2);
    write(dir.path() / "facts.txt", "0\t1\t9\t0\n");
    EXPECT_THROW(load_quadruples(dir.path() / "facts.txt", dir.path()), VocabError);
}

TEST(Load, MissingFileIsIoError) {
    TempDir dir;
    write_vocab(dir.path(), 4, 2);
    EXPECT_THROW(load_quadruples(dir.path() / "nope.txt", dir.path()), IoError);
}

TEST(Load, SaveRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(1);
    const auto g = transfir::testing::random_graph(6, 3, 5, 4, rng);
    g.vocab().save(dir.path());
    save_quadruples(g, dir.path() / "facts.txt");
    const auto back = load_quadruples(dir.path() / "facts.txt", dir.path());
    EXPECT_EQ(back.all_facts(), g.all_facts());
}

TEST(Graph, DuplicatesAreKept) {
    const TemporalKG g(Vocab::numbered(2, 1), {{0, 0, 1, 0}, {0, 0, 1, 0}});
    EXPECT_EQ(g.fact_count(), 2u);
}

TEST(Graph, InverseAugmentation) {
    const TemporalKG g(Vocab::numbered(3, 2), {{0, 1, 2, 0}});
    const auto aug = add_inverse_relations(g);
    EXPECT_TRUE(aug.augmented());
    EXPECT_EQ(aug.relation_space(), 4u);
    EXPECT_EQ(aug.fact_count(), 2u);
    const auto facts = aug.all_facts();
    EXPECT_NE(std::find(facts.begin(), facts.end(), Quadruple{2, 3, 0, 0}), facts.end());
    EXPECT_THROW(add_inverse_relations(aug), ContractError);
}

TEST(Split, TenTimestamps) {
    const auto s = chronological_split(10, 0.5, 0.2, 0.3);
    EXPECT_EQ(s.train, (Interval{0, 5}));
    EXPECT_EQ(s.valid, (Interval{5, 7}));
    EXPECT_EQ(s.test, (Interval{7, 10}));
}

TEST(Split, ConventionalEightyTenTen) {
    const auto s = chronological_split(365, 0.8, 0.1, 0.1);
    EXPECT_EQ(s.train, (Interval{0, 292}));
    EXPECT_EQ(s.test.end, 365u);
}

TEST(Split, BadRatios) {
    EXPECT_THROW(chronological_split(10, 0.5, 0.2, 0.2), ConfigError);
    EXPECT_THROW(chronological_split(10, 0.9, 0.05, 0.05), ConfigError);  // empty validation
    EXPECT_THROW(chronological_split(10, 1.0, 0.0, 0.0), ConfigError);
}

TEST(Emergence, FirstAppearanceAndEmerging) {
    const TemporalKG g(Vocab::numbered(5, 1),
                       {{0, 0, 1, 0}, {1, 0, 2, 3}, {3, 0, 0, 8}, {0, 0, 3, 9}});
    const auto first = first_appearance(g);
    EXPECT_EQ(first.at(0), 0u);
    EXPECT_EQ(first.at(2), 3u);
    EXPECT_EQ(first.at(3), 8u);
    EXPECT_EQ(first.count(4), 0u);
    const auto split = chronological_split(g, 0.5, 0.2, 0.3);
    EXPECT_EQ(emerging_entities(g, split), (std::set<EntityId>{3}));
}

TEST(Embeddings, RoundTripPreservesRowsAndValues) {
    TempDir dir;
    std::mt19937_64 rng(2);
    const auto m = transfir::testing::random_tensor({7, 5}, rng, false);
    save_embeddings({m}, dir.path() / "emb.txt");
    const auto back = load_embeddings(dir.path() / "emb.txt", 7);
    EXPECT_EQ(back.count(), 7u);
    EXPECT_EQ(back.dim(), 5u);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(back.matrix.at(i), m.at(i), 1e-6);
}

TEST(Embeddings, RowsMayArriveOutOfOrder) {
    TempDir dir;
    write(dir.path() / "emb.txt", "2 2\n1 3 4\n0 1 2\n");
    const auto e = load_embeddings(dir.path() / "emb.txt", 2);
    EXPECT_EQ(e.matrix.at(1, 0), 3.0);
    EXPECT_EQ(e.matrix.at(0, 1), 2.0);
}

TEST(Embeddings, CountMismatchIsIntegrityError) {
    TempDir dir;
    write(dir.path() / "emb.txt", "2 2\n0 1 2\n1 3 4\n");
    EXPECT_THROW(load_embeddings(dir.path() / "emb.txt", 3), IntegrityError);
    write(dir.path() / "short.txt", "2 2\n0 1 2\n");
    EXPECT_THROW(load_embeddings(dir.path() / "short.txt", 2), IntegrityError);
    write(dir.path() / "ragged.txt", "2 2\n0 1 2\n1 3\n");
    EXPECT_THROW(load_embeddings(dir.path() / "ragged.txt", 2), IntegrityError);
}
