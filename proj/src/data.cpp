#include "transfir/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "transfir/error.hpp"

namespace transfir::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool parse_size(std::string_view token, std::size_t& out) {
    token = trim(token);
    if (token.empty()) return false;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size();
}

bool parse_double(std::string_view token, double& out) {
    token = trim(token);
    if (token.empty()) return false;
    // from_chars for double needs GCC 11+, which is the floor for this project.
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(out);
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::string location(const fs::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

std::vector<std::string> load_id_map(const fs::path& path) {
    auto in = open_input(path);
    std::vector<std::pair<std::size_t, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_fields(line, '\t');
        std::size_t id = 0;
        if (fields.size() < 2 || !parse_size(fields[1], id)) {
            throw ParseError(location(path, lineno) + ": expected `name<TAB>id`");
        }
        entries.emplace_back(id, std::string(fields[0]));
    }
    std::vector<std::string> names(entries.size());
    std::vector<bool> seen(entries.size(), false);
    std::unordered_set<std::string> unique_names;
    for (auto& [id, name] : entries) {
        if (id >= names.size() || seen[id]) {
            throw VocabError(path.string() + ": ids must be dense 0.." + std::to_string(names.size() - 1) +
                             " (offending id " + std::to_string(id) + ")");
        }
        if (!unique_names.insert(name).second) throw VocabError(path.string() + ": duplicate name '" + name + "'");
        seen[id] = true;
        names[id] = std::move(name);
    }
    return names;
}

void save_id_map(const std::vector<std::string>& names, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
}

}  // namespace

// ---- Vocab ------------------------------------------------------------------

Vocab Vocab::load(const fs::path& dir) {
    Vocab v;
    v.entities = load_id_map(dir / "entity2id.txt");
    v.relations = load_id_map(dir / "relation2id.txt");
    return v;
}

Vocab Vocab::numbered(std::size_t entities, std::size_t relations) {
    Vocab v;
    for (std::size_t i = 0; i < entities; ++i) v.entities.push_back("e" + std::to_string(i));
    for (std::size_t i = 0; i < relations; ++i) v.relations.push_back("r" + std::to_string(i));
    return v;
}

void Vocab::save(const fs::path& dir) const {
    save_id_map(entities, dir / "entity2id.txt");
    save_id_map(relations, dir / "relation2id.txt");
}

// ---- TemporalKG -------------------------------------------------------------

TemporalKG::TemporalKG(Vocab vocab, const std::vector<Quadruple>& facts) : vocab_(std::move(vocab)) {
    Timestamp max_t = 0;
    for (const auto& q : facts) {
        if (q.subject >= num_entities() || q.object >= num_entities()) {
            throw VocabError("entity id out of range in fact (" + std::to_string(q.subject) + "," +
                             std::to_string(q.relation) + "," + std::to_string(q.object) + ")");
        }
        if (q.relation >= num_relations()) {
            throw VocabError("relation id " + std::to_string(q.relation) + " out of range (|R|=" +
                             std::to_string(num_relations()) + ")");
        }
        max_t = std::max(max_t, q.timestamp);
    }
    snapshots_.resize(facts.empty() ? 0 : max_t + 1);
    for (const auto& q : facts) snapshots_[q.timestamp].push_back(q);
    fact_count_ = facts.size();
}

std::span<const Quadruple> TemporalKG::facts_at(Timestamp t) const {
    if (t >= snapshots_.size()) return {};
    return snapshots_[t];
}

std::vector<Quadruple> TemporalKG::all_facts() const {
    std::vector<Quadruple> out;
    out.reserve(fact_count_);
    for (const auto& snap : snapshots_) out.insert(out.end(), snap.begin(), snap.end());
    return out;
}

TemporalKG add_inverse_relations(const TemporalKG& g) {
    if (g.augmented_) throw ContractError("graph already carries inverse relations");
    const std::size_t r_count = g.num_relations();
    TemporalKG out = g;
    for (auto& snap : out.snapshots_) {
        const std::size_t n = snap.size();
        snap.reserve(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const Quadruple q = snap[i];
            if (q.relation >= r_count) {
                throw ContractError("relation id " + std::to_string(q.relation) + " already in the inverse range");
            }
            snap.push_back({q.object, q.relation + r_count, q.subject, q.timestamp});
        }
    }
    out.fact_count_ = 2 * g.fact_count_;
    out.augmented_ = true;
    return out;
}

// ---- loading ----------------------------------------------------------------

TemporalKG load_quadruples(std::span<const fs::path> paths, const fs::path& vocab_dir, LoadOptions options) {
    Vocab vocab = Vocab::load(vocab_dir);
    struct Raw {
        Quadruple q;
        std::size_t raw_time;
    };
    std::vector<Raw> raw;
    for (const auto& path : paths) {
        auto in = open_input(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            auto fields = split_fields(line, '\t');
            std::size_t s = 0, r = 0, o = 0, t = 0;
            if (fields.size() < 4 || !parse_size(fields[0], s) || !parse_size(fields[1], r) ||
                !parse_size(fields[2], o) || !parse_size(fields[3], t)) {
                throw ParseError(location(path, lineno) +
                                 ": expected `subject<TAB>relation<TAB>object<TAB>time` with integer fields");
            }
            if (s >= vocab.num_entities() || o >= vocab.num_entities()) {
                throw VocabError(location(path, lineno) + ": entity id not in entity2id.txt");
            }
            if (r >= vocab.num_relations()) {
                throw VocabError(location(path, lineno) + ": relation id not in relation2id.txt");
            }
            raw.push_back({{s, r, o, 0}, t});
        }
    }
    std::size_t granularity = options.granularity;
    if (granularity == 0) {
        for (const auto& f : raw) granularity = std::gcd(granularity, f.raw_time);
        if (granularity == 0) granularity = 1;
    }
    std::vector<Quadruple> facts;
    facts.reserve(raw.size());
    for (auto& f : raw) {
        if (f.raw_time % granularity != 0) {
            throw ParseError("raw time " + std::to_string(f.raw_time) + " is not a multiple of granularity " +
                             std::to_string(granularity));
        }
        f.q.timestamp = f.raw_time / granularity;
        facts.push_back(f.q);
    }
    return TemporalKG(std::move(vocab), facts);
}

TemporalKG load_quadruples(const fs::path& path, const fs::path& vocab_dir, LoadOptions options) {
    return load_quadruples(std::span<const fs::path>(&path, 1), vocab_dir, options);
}

TemporalKG load_dataset_dir(const fs::path& dir, LoadOptions options) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    std::vector<fs::path> files;
    if (fs::exists(dir / "facts.txt")) {
        files.push_back(dir / "facts.txt");
    } else {
        for (const char* name : {"train.txt", "valid.txt", "test.txt"})
            if (fs::exists(dir / name)) files.push_back(dir / name);
    }
    if (files.empty()) throw IoError("no facts.txt or train/valid/test.txt in " + dir.string());
    return load_quadruples(files, dir, options);
}

void save_quadruples(const TemporalKG& g, const fs::path& path, std::size_t granularity) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (Timestamp t = 0; t < g.num_timestamps(); ++t)
        for (const auto& q : g.facts_at(t))
            out << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << q.timestamp * granularity << '\n';
}

// ---- splitting & emergence --------------------------------------------------

Split chronological_split(std::size_t num_timestamps, double train_ratio, double valid_ratio, double test_ratio) {
    if (!(train_ratio > 0 && valid_ratio > 0 && test_ratio > 0)) {
        throw ConfigError("split ratios must be positive");
    }
    if (std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    const auto n = static_cast<double>(num_timestamps);
    // A tiny epsilon keeps e.g. 0.5*10 from landing at 4.999... on cumulative sums.
    const auto cut = [&](double cum) {
        return static_cast<std::size_t>(std::floor(cum * n + 1e-9));
    };
    const std::size_t b1 = std::min(cut(train_ratio), num_timestamps);
    const std::size_t b2 = std::min(cut(train_ratio + valid_ratio), num_timestamps);
    Split split{{0, b1}, {b1, b2}, {b2, num_timestamps}};
    if (split.train.empty() || split.valid.empty() || split.test.empty()) {
        throw ConfigError("split of " + std::to_string(num_timestamps) + " timestamps leaves an empty partition");
    }
    return split;
}

Split chronological_split(const TemporalKG& g, double train_ratio, double valid_ratio, double test_ratio) {
    return chronological_split(g.num_timestamps(), train_ratio, valid_ratio, test_ratio);
}

std::map<EntityId, Timestamp> first_appearance(const TemporalKG& g) {
    std::map<EntityId, Timestamp> first;
    for (Timestamp t = 0; t < g.num_timestamps(); ++t) {
        for (const auto& q : g.facts_at(t)) {
            first.try_emplace(q.subject, t);
            first.try_emplace(q.object, t);
        }
    }
    return first;
}

std::set<EntityId> emerging_entities(const TemporalKG& g, const Split& split) {
    std::set<EntityId> out;
    for (const auto& [e, t] : first_appearance(g))
        if (split.test.contains(t)) out.insert(e);
    return out;
}

// ---- embeddings -------------------------------------------------------------

EntityEmbeddings load_embeddings(const fs::path& path, std::size_t expected_entities) {
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    std::size_t count = 0, dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    auto header = split_whitespace(line);
    if (header.size() != 2 || !parse_size(header[0], count) || !parse_size(header[1], dim) || dim == 0) {
        throw ParseError(location(path, lineno) + ": expected header `N d`");
    }
    if (count != expected_entities) {
        throw IntegrityError(path.string() + ": header declares " + std::to_string(count) + " entities, vocabulary has " +
                             std::to_string(expected_entities));
    }
    std::vector<double> values(count * dim);
    std::vector<bool> seen(count, false);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto tokens = split_whitespace(line);
        std::size_t id = 0;
        if (tokens.empty() || !parse_size(tokens[0], id)) throw ParseError(location(path, lineno) + ": bad entity id");
        if (tokens.size() != dim + 1) {
            throw IntegrityError(location(path, lineno) + ": expected " + std::to_string(dim) + " values, found " +
                                 std::to_string(tokens.size() - 1));
        }
        if (rows >= count) throw IntegrityError(path.string() + ": more than " + std::to_string(count) + " rows");
        if (id >= count || seen[id]) throw IntegrityError(location(path, lineno) + ": entity id " + std::to_string(id) +
                                                          " out of range or repeated");
        for (std::size_t j = 0; j < dim; ++j) {
            if (!parse_double(tokens[j + 1], values[id * dim + j])) {
                throw ParseError(location(path, lineno) + ": non-numeric token '" + std::string(tokens[j + 1]) + "'");
            }
        }
        seen[id] = true;
        ++rows;
    }
    if (rows != count) {
        throw IntegrityError(path.string() + ": header declares " + std::to_string(count) + " rows, found " +
                             std::to_string(rows));
    }
    return {numerics::Tensor::from({count, dim}, std::move(values), false)};
}

void save_embeddings(const EntityEmbeddings& table, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << table.count() << ' ' << table.dim() << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < table.count(); ++i) {
        out << i;
        for (std::size_t j = 0; j < table.dim(); ++j) out << ' ' << table.matrix.at(i, j);
        out << '\n';
    }
}

}  // namespace transfir::data
