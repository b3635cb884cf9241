#include "transfir/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "transfir/error.hpp"

namespace transfir::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'F', 'I', 'R'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void put_tensor(const std::string& name, const numerics::Tensor& t) {
        put_string(name);
        put(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put(static_cast<std::uint64_t>(d));
        const auto v = t.values();
        out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    std::string& bytes() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::pair<std::string, numerics::Tensor> get_tensor() {
        std::string name = get_string();
        const auto rank = get<std::uint32_t>();
        if (rank > 8) throw IntegrityError("checkpoint tensor '" + name + "' has implausible rank");
        numerics::Shape shape;
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
            if (shape.back() != 0 && count > (end_ - pos_) / shape.back()) {
                throw IntegrityError("checkpoint tensor '" + name + "' is truncated");
            }
            count *= shape.back();
        }
        need(count * sizeof(double));
        std::vector<double> values(count);
        std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
        return {std::move(name), numerics::Tensor::from(std::move(shape), std::move(values))};
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw IntegrityError("checkpoint is truncated");
    }
    const std::string& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::size_t meta_count(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw IntegrityError("checkpoint lacks '" + key + "'");
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw IntegrityError("checkpoint field '" + key + "' is not a number");
    }
}

}  // namespace

std::string serialize(const model::Model& model, const trainer::Adam* optimizer) {
    Writer w;
    for (char c : kMagic) w.put(c);
    w.put(kFormatVersion);

    std::string text = model.hp.to_text();
    text += "meta.num_entities=" + std::to_string(model.num_entities) + "\n";
    text += "meta.num_relations=" + std::to_string(model.num_relations) + "\n";
    if (optimizer) text += "meta.optimizer_step=" + std::to_string(optimizer->steps()) + "\n";
    w.put_string(text);

    const auto params = model.params.parameters();
    const std::size_t count = params.size() * (optimizer ? 3 : 1);
    w.put(static_cast<std::uint32_t>(count));
    for (const auto& [name, t] : params) w.put_tensor(name, t);
    if (optimizer) {
        for (std::size_t i = 0; i < params.size(); ++i)
            w.put_tensor("adam.m/" + params[i].first, optimizer->first_moments()[i]);
        for (std::size_t i = 0; i < params.size(); ++i)
            w.put_tensor("adam.v/" + params[i].first, optimizer->second_moments()[i]);
    }
    const auto checksum = fnv1a(w.bytes().data(), w.bytes().size());
    w.put(checksum);
    return std::move(w.bytes());
}

Checkpoint deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
        throw IntegrityError("checkpoint is truncated");
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IntegrityError("not a checkpoint file");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
    if (version != kFormatVersion) {
        throw IncompatibleError("checkpoint format version " + std::to_string(version) + " (expected " +
                                std::to_string(kFormatVersion) + ")");
    }
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, sizeof(stored));
    if (stored != fnv1a(bytes.data(), body)) throw IntegrityError("checkpoint checksum mismatch (truncated or corrupt)");

    Reader r(bytes, body);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
    r.get<std::uint32_t>();

    std::map<std::string, std::string> meta;
    std::string hp_text;
    {
        std::istringstream in(r.get_string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("meta.", 0) == 0) {
                const auto eq = line.find('=');
                if (eq == std::string::npos) throw IntegrityError("malformed checkpoint field: " + line);
                meta[line.substr(0, eq)] = line.substr(eq + 1);
            } else {
                hp_text += line + "\n";
            }
        }
    }
    model::Hyperparams hp;
    try {
        hp = model::Hyperparams::from_text(hp_text);
    } catch (const ConfigError& e) {
        throw IncompatibleError(std::string("checkpoint hyperparameters: ") + e.what());
    }
    const std::size_t n_entities = meta_count(meta, "meta.num_entities");
    const std::size_t n_relations = meta_count(meta, "meta.num_relations");
    if (hp.dim == 0 || n_entities < hp.codebook_size) throw IntegrityError("checkpoint header is inconsistent");

    std::map<std::string, numerics::Tensor> tensors;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = r.get_tensor();
        if (!tensors.emplace(name, std::move(t)).second) throw IntegrityError("duplicate checkpoint tensor " + name);
    }
    if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");

    // Build the parameter skeleton, then overwrite every tensor.
    Checkpoint ckpt;
    ckpt.model = model::Model::init(hp, n_relations, numerics::Tensor::zeros({n_entities, hp.dim}));
    ckpt.model.num_entities = n_entities;
    const auto params = ckpt.model.params.parameters();
    auto fill = [&](const std::string& name, numerics::Tensor target) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IncompatibleError("checkpoint lacks tensor '" + name + "'");
        if (it->second.shape() != target.shape()) {
            throw IncompatibleError("checkpoint tensor '" + name + "' has shape " +
                                    numerics::shape_to_string(it->second.shape()) + ", model expects " +
                                    numerics::shape_to_string(target.shape()));
        }
        const auto src = it->second.values();
        std::copy(src.begin(), src.end(), target.mutable_values().begin());
        tensors.erase(it);
    };
    for (const auto& [name, t] : params) fill(name, t);

    if (meta.count("meta.optimizer_step")) {
        OptimizerState state;
        state.steps = meta_count(meta, "meta.optimizer_step");
        for (const auto& [name, t] : params) {
            state.first_moments.push_back(numerics::Tensor::zeros(t.shape()));
            fill("adam.m/" + name, state.first_moments.back());
        }
        for (const auto& [name, t] : params) {
            state.second_moments.push_back(numerics::Tensor::zeros(t.shape()));
            fill("adam.v/" + name, state.second_moments.back());
        }
        ckpt.optimizer = std::move(state);
    }
    if (!tensors.empty()) throw IncompatibleError("checkpoint has unknown tensor '" + tensors.begin()->first + "'");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const model::Model& model, const trainer::Adam* optimizer) {
    const std::string bytes = serialize(model, optimizer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

trainer::Adam restore_optimizer(Checkpoint& ckpt) {
    trainer::Adam opt(ckpt.model.params.parameters(), ckpt.model.hp.learning_rate);
    if (ckpt.optimizer) {
        opt.set_steps(ckpt.optimizer->steps);
        for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
            const auto m = ckpt.optimizer->first_moments[i].values();
            const auto v = ckpt.optimizer->second_moments[i].values();
            std::copy(m.begin(), m.end(), opt.first_moments()[i].mutable_values().begin());
            std::copy(v.begin(), v.end(), opt.second_moments()[i].mutable_values().begin());
        }
    }
    return opt;
}

}  // namespace transfir::checkpoint
