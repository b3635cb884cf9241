#include "transfir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "transfir/error.hpp"
#include "transfir/eval.hpp"

namespace transfir::synth {

void SynthSpec::validate() const {
    if (types == 0) throw ConfigError("synth: at least one type is required");
    if (anchors_per_type < 2) throw ConfigError("synth: at least two anchors per type are required");
    if (entities_per_type <= anchors_per_type) throw ConfigError("synth: each type needs members besides anchors");
    if (answers_per_pattern < 1 || answers_per_pattern > 2 || answers_per_pattern > anchors_per_type) {
        throw ConfigError("synth: answers_per_pattern must be 1 or 2");
    }
    if (emergence_fraction < 0 || valid_emergence_fraction < 0 || emergence_fraction >= 1) {
        throw ConfigError("synth: emergence fractions must lie in [0, 1)");
    }
    const std::size_t members = types * (entities_per_type - anchors_per_type);
    const auto emerging = static_cast<std::size_t>(std::lround(emergence_fraction * static_cast<double>(num_entities())));
    const auto valid_new =
        static_cast<std::size_t>(std::lround(valid_emergence_fraction * static_cast<double>(num_entities())));
    if (emerging + valid_new >= members) throw ConfigError("synth: emergence schedule leaves no training members");
    if (noise < 0 || noise > 1 || activity <= 0 || activity > 1) throw ConfigError("synth: rates must lie in [0, 1]");
    if (dim == 0) throw ConfigError("synth: dim must be positive");
    if (jitter < 0) throw ConfigError("synth: jitter must be non-negative");
    if (timestamps < 3) throw ConfigError("synth: at least 3 timestamps are required");
}

std::size_t GroundTruth::phase(std::size_t type, data::Timestamp t) const {
    return (t + phase_offset.at(type)) % anchors.at(type).size();
}

std::vector<data::EntityId> GroundTruth::pattern_answers(data::EntityId entity, data::RelationId relation,
                                                         data::Timestamp t, std::size_t num_relations) const {
    if (entity >= type_of.size() || is_anchor[entity]) return {};
    const std::size_t type = type_of[entity];
    const auto& a = anchors[type];
    const std::size_t n = a.size(), p = phase(type, t);
    std::vector<data::EntityId> out;
    if (relation == 2 * type) {
        out.push_back(a[p]);
        if (answers_per_pattern == 2) out.push_back(a[(p + 1) % n]);
    } else if (relation == num_relations + 2 * type + 1) {
        out.push_back(a[(p + n - 1) % n]);
        if (answers_per_pattern == 2) out.push_back(a[(p + n - 2) % n]);
    }
    return out;
}

SynthInstance generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::size_t n_entities = spec.num_entities();
    const std::size_t per = spec.entities_per_type, n_anchor = spec.anchors_per_type;

    SynthInstance inst;
    inst.spec = spec;
    inst.split = data::chronological_split(spec.timestamps, spec.train_ratio, spec.valid_ratio, spec.test_ratio);
    auto& truth = inst.truth;
    truth.answers_per_pattern = spec.answers_per_pattern;
    truth.type_of.resize(n_entities);
    truth.is_anchor.resize(n_entities);
    truth.anchors.resize(spec.types);
    std::uniform_int_distribution<std::size_t> offset_dist(0, n_anchor - 1);
    for (std::size_t type = 0; type < spec.types; ++type) {
        truth.phase_offset.push_back(offset_dist(rng));
        for (std::size_t i = 0; i < per; ++i) {
            const data::EntityId e = type * per + i;
            truth.type_of[e] = type;
            truth.is_anchor[e] = i < n_anchor;
            if (i < n_anchor) truth.anchors[type].push_back(e);
        }
    }

    // Embeddings: type centroid plus jitter.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> centroids(spec.types * spec.dim);
    for (double& c : centroids) c = normal(rng);
    std::vector<double> emb(n_entities * spec.dim);
    for (data::EntityId e = 0; e < n_entities; ++e)
        for (std::size_t j = 0; j < spec.dim; ++j)
            emb[e * spec.dim + j] = centroids[truth.type_of[e] * spec.dim + j] + spec.jitter * normal(rng);
    inst.embeddings = numerics::Tensor::from({n_entities, spec.dim}, std::move(emb));

    // Emergence schedule, dealt round-robin across types.
    std::vector<std::vector<data::EntityId>> members(spec.types);
    for (std::size_t type = 0; type < spec.types; ++type) {
        for (std::size_t i = n_anchor; i < per; ++i) members[type].push_back(type * per + i);
        std::shuffle(members[type].begin(), members[type].end(), rng);
    }
    const auto n_test = static_cast<std::size_t>(std::lround(spec.emergence_fraction * static_cast<double>(n_entities)));
    const auto n_valid =
        static_cast<std::size_t>(std::lround(spec.valid_emergence_fraction * static_cast<double>(n_entities)));
    std::vector<data::Timestamp> first(n_entities, 0);
    std::vector<std::size_t> taken(spec.types, 0);
    auto deal = [&](std::size_t count, const data::Interval& range) {
        std::uniform_int_distribution<data::Timestamp> when(range.begin, range.end - 1);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t type = i % spec.types;
            if (taken[type] >= members[type].size()) throw ConfigError("synth: emergence schedule exceeds a type");
            first[members[type][taken[type]++]] = when(rng);
        }
    };
    deal(n_test, inst.split.test);
    deal(n_valid, inst.split.valid);

    std::bernoulli_distribution active(spec.activity);
    std::bernoulli_distribution add_noise(spec.noise);
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<data::RelationId> any_relation(0, spec.num_relations() - 1);
    std::vector<data::Quadruple> facts;
    for (data::Timestamp t = 0; t < spec.timestamps; ++t) {
        std::vector<data::EntityId> alive;
        for (data::EntityId e = 0; e < n_entities; ++e)
            if (truth.is_anchor[e] || first[e] <= t) alive.push_back(e);
        std::uniform_int_distribution<std::size_t> pick(0, alive.size() - 1);
        std::size_t pattern_facts = 0;
        for (std::size_t type = 0; type < spec.types; ++type) {
            const auto& a = truth.anchors[type];
            const std::size_t p = truth.phase(type, t);
            for (std::size_t i = n_anchor; i < per; ++i) {
                const data::EntityId m = type * per + i;
                if (first[m] > t) continue;
                if (first[m] != t && !active(rng)) continue;
                const bool second = spec.answers_per_pattern == 2 && coin(rng);
                const data::EntityId out_anchor = a[(p + (second ? 1 : 0)) % n_anchor];
                const bool second_in = spec.answers_per_pattern == 2 && coin(rng);
                const data::EntityId in_anchor = a[(p + n_anchor - (second_in ? 2 : 1)) % n_anchor];
                facts.push_back({m, 2 * type, out_anchor, t});
                facts.push_back({in_anchor, 2 * type + 1, m, t});
                pattern_facts += 2;
            }
        }
        for (std::size_t i = 0; i < pattern_facts; ++i) {
            if (!add_noise(rng)) continue;
            const data::EntityId s = alive[pick(rng)];
            const data::RelationId r = any_relation(rng);
            const data::EntityId o = alive[pick(rng)];
            facts.push_back({s, r, o, t});
        }
    }

    data::Vocab vocab;
    for (data::EntityId e = 0; e < n_entities; ++e) {
        const std::size_t type = truth.type_of[e], i = e - type * per;
        vocab.entities.push_back("type" + std::to_string(type) + (truth.is_anchor[e] ? "_anchor" : "_member") +
                                 std::to_string(i));
    }
    for (std::size_t type = 0; type < spec.types; ++type) {
        vocab.relations.push_back("type" + std::to_string(type) + "_out");
        vocab.relations.push_back("type" + std::to_string(type) + "_in");
    }
    inst.graph = data::TemporalKG(std::move(vocab), facts);
    return inst;
}

void write_instance(const SynthInstance& instance, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    instance.graph.vocab().save(dir);
    data::save_quadruples(instance.graph, dir / "facts.txt");
    data::save_embeddings({instance.embeddings}, dir / "embeddings.txt");

    const auto path = dir / "truth.txt";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const auto& truth = instance.truth;
    out << "answers_per_pattern " << truth.answers_per_pattern << '\n';
    for (std::size_t type = 0; type < truth.anchors.size(); ++type) {
        out << "type " << type << " offset " << truth.phase_offset[type] << " anchors";
        for (auto a : truth.anchors[type]) out << ' ' << a;
        out << '\n';
    }
    for (std::size_t e = 0; e < truth.type_of.size(); ++e)
        out << "entity " << e << ' ' << truth.type_of[e] << ' ' << (truth.is_anchor[e] ? 1 : 0) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

GroundTruth read_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    GroundTruth truth;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        auto fail = [&] { throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed line"); };
        if (tag == "answers_per_pattern") {
            if (!(ls >> truth.answers_per_pattern)) fail();
        } else if (tag == "type") {
            std::size_t type = 0, offset = 0;
            std::string w1, w2;
            if (!(ls >> type >> w1 >> offset >> w2) || w1 != "offset" || w2 != "anchors") fail();
            if (type != truth.anchors.size()) fail();
            truth.phase_offset.push_back(offset);
            truth.anchors.emplace_back();
            data::EntityId a = 0;
            while (ls >> a) truth.anchors.back().push_back(a);
            if (truth.anchors.back().empty()) fail();
        } else if (tag == "entity") {
            std::size_t e = 0, type = 0;
            int anchor = 0;
            if (!(ls >> e >> type >> anchor) || e != truth.type_of.size()) fail();
            truth.type_of.push_back(type);
            truth.is_anchor.push_back(anchor != 0);
        } else {
            fail();
        }
    }
    return truth;
}

double oracle_best_mrr(const GroundTruth& truth, const data::TemporalKG& g, const data::Split& split) {
    const data::TemporalKG augmented = g.augmented() ? g : data::add_inverse_relations(g);
    const auto first_seen = data::first_appearance(augmented);
    const std::size_t n = augmented.num_entities();
    const std::size_t n_rel = augmented.num_relations();
    const eval::EvalMode mode{eval::Mode::Emerging, eval::Side::QuerySide};

    double sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (data::Timestamp t = split.test.begin; t < split.test.end && t < augmented.num_timestamps(); ++t) {
        const auto facts = augmented.facts_at(t);
        for (const auto& f : facts) {
            const chain::Query q{f.subject, f.relation, t};
            if (!eval::selected(mode, q, f.object, first_seen, split.test)) continue;
            std::vector<bool> filtered(n, false);
            for (const auto& other : facts)
                if (other.subject == f.subject && other.relation == f.relation && other.object != f.object)
                    filtered[other.object] = true;
            std::size_t top = 0;
            bool hit = false;
            for (auto a : truth.pattern_answers(f.subject, f.relation, t, n_rel)) {
                if (filtered[a]) continue;
                ++top;
                hit = hit || a == f.object;
            }
            double rr = 0.0;
            if (hit) {
                // The answer's rank is uniform over the top block.
                for (std::size_t r = 1; r <= top; ++r) rr += 1.0 / static_cast<double>(r);
                rr /= static_cast<double>(top);
            } else {
                std::size_t rest = 0;
                for (std::size_t e = 0; e < n; ++e) rest += filtered[e] ? 0 : 1;
                rest -= top;  // candidates outside the top block, answer included
                for (std::size_t j = 1; j <= rest; ++j) rr += 1.0 / static_cast<double>(top + j);
                rr /= static_cast<double>(rest);
            }
            const int dir = f.relation >= n_rel ? 1 : 0;
            sum[dir] += rr;
            ++count[dir];
        }
    }
    if (count[0] && count[1]) return 0.5 * (sum[0] / count[0] + sum[1] / count[1]);
    if (count[0]) return sum[0] / count[0];
    if (count[1]) return sum[1] / count[1];
    return 0.0;
}

}  // namespace transfir::synth
