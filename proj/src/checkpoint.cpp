#include "hm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hm/corpus.hpp"
#include "hm/errors.hpp"
#include "hm/probes.hpp"
#include "hm/sha256.hpp"
#include "json.hpp"

namespace hm {

using nlohmann::json;

namespace {

constexpr char kWeightsMagic[4] = {'H', 'M', 'W', 'T'};
constexpr char kProbeMagic[4] = {'H', 'M', 'P', 'B'};
constexpr char kActivationsMagic[4] = {'H', 'M', 'A', 'T'};

struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    const double* data;

    std::size_t count() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
};

struct Writer {
    std::ofstream out;
    std::string path;
    std::string magic;
    std::uint64_t offset = 0;
    json sidecar_tensors = json::array();

    Writer(const std::string& p, const char m[4], const json& meta)
        : out(p, std::ios::binary), path(p), magic(m, 4) {
        if (!out) throw DataError("cannot open for writing: " + p);
        out.write(m, 4);
        const std::uint32_t version = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::string meta_str = meta.dump();
        const std::uint32_t meta_len = static_cast<std::uint32_t>(meta_str.size());
        out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
        out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
        offset = 4 + sizeof(version) + sizeof(meta_len) + meta_str.size();
    }

    void tensor(const TensorRef& t) {
        const std::size_t bytes = t.count() * sizeof(double);
        out.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(bytes));
        sidecar_tensors.push_back(
            {{"name", t.name}, {"shape", t.shape}, {"byte_offset", offset}, {"byte_length", bytes}});
        offset += bytes;
    }

    void finish() {
        out.close();
        if (out.fail()) throw DataError("write failed: " + path);
        json sidecar;
        sidecar["magic"] = magic;
        sidecar["version"] = kCheckpointVersion;
        sidecar["tensors"] = sidecar_tensors;
        sidecar["sha256"] = Sha256::of_file(path);
        std::ofstream side(path + ".json");
        if (!side) throw DataError("cannot open for writing: " + path + ".json");
        side << sidecar.dump(2) << "\n";
    }
};

struct Reader {
    std::ifstream in;
    std::string path;
    json meta;

    Reader(const std::string& p, const char expected_magic[4], bool verify_checksum)
        : in(p, std::ios::binary), path(p) {
        if (!in) throw DataError("cannot open file: " + p);
        if (verify_checksum) {
            std::ifstream side(p + ".json");
            if (side) {
                json sidecar;
                side >> sidecar;
                const std::string recorded = sidecar.value("sha256", std::string());
                if (!recorded.empty()) {
                    const std::string actual = Sha256::of_file(p);
                    if (actual != recorded) {
                        throw DataError("checksum mismatch for " + p + " (sidecar " + recorded +
                                        ", file " + actual + ")");
                    }
                }
            }
        }
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, expected_magic, 4) != 0) {
            throw DataError("bad magic in " + p + " (expected " + std::string(expected_magic, 4) +
                            ")");
        }
        std::uint32_t version = 0;
        in.read(reinterpret_cast<char*>(&version), sizeof(version));
        if (version != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version in " + p);
        }
        std::uint32_t meta_len = 0;
        in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
        if (!in) throw DataError("truncated header in " + p);
        std::string meta_str(meta_len, '\0');
        in.read(meta_str.data(), meta_len);
        if (!in) throw DataError("truncated header in " + p);
        meta = json::parse(meta_str);
    }

    void tensor(double* data, std::size_t count, const char* name) {
        in.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw DataError("truncated tensor '" + std::string(name) + "' in " + path);
    }
};

json config_to_json(const ModelConfig& c) {
    return json{
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"d_model", c.d_model},
        {"d_head", c.d_head},
        {"vocab_size", c.vocab_size},
        {"max_seq_len", c.max_seq_len},
        {"norm_kind", to_string(c.norm_kind)},
        {"positional_kind", to_string(c.positional_kind)},
    };
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.norm_kind = parse_norm_kind(j.at("norm_kind").get<std::string>());
    c.positional_kind = parse_positional_kind(j.at("positional_kind").get<std::string>());
    return c;
}

} // namespace

void save_weights(const WeightSet& weights, const std::string& path) {
    weights.validate();
    const ModelConfig& c = weights.config;
    Writer w(path, kWeightsMagic, config_to_json(c));

    const auto d = static_cast<std::size_t>(c.d_model);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    const auto hidden = static_cast<std::size_t>(c.mlp_hidden());

    w.tensor({"token_embedding", {v, d}, weights.token_embedding.data.data()});
    if (c.positional_kind == PositionalKind::learned) {
        w.tensor({"pos_embedding",
                  {static_cast<std::size_t>(c.max_seq_len), d},
                  weights.pos_embedding.data.data()});
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& lw = weights.layers[static_cast<std::size_t>(l)];
        const std::string prefix = "layer." + std::to_string(l) + ".";
        w.tensor({prefix + "w_q", {d, d}, lw.w_q.data.data()});
        w.tensor({prefix + "w_k", {d, d}, lw.w_k.data.data()});
        w.tensor({prefix + "w_v", {d, d}, lw.w_v.data.data()});
        w.tensor({prefix + "w_o", {d, d}, lw.w_o.data.data()});
        w.tensor({prefix + "w_gate", {d, hidden}, lw.w_gate.data.data()});
        w.tensor({prefix + "w_up", {d, hidden}, lw.w_up.data.data()});
        w.tensor({prefix + "w_down", {hidden, d}, lw.w_down.data.data()});
        w.tensor({prefix + "attn_norm_gain", {d}, lw.attn_norm_gain.data()});
        w.tensor({prefix + "mlp_norm_gain", {d}, lw.mlp_norm_gain.data()});
    }
    w.tensor({"final_norm_gain", {d}, weights.final_norm_gain.data()});
    w.tensor({"unembedding", {d, v}, weights.unembedding.data.data()});
    w.finish();
}

WeightSet load_weights(const std::string& path, bool verify_checksum) {
    Reader r(path, kWeightsMagic, verify_checksum);
    const ModelConfig c = config_from_json(r.meta);
    c.validate();

    const auto d = static_cast<std::size_t>(c.d_model);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    const auto hidden = static_cast<std::size_t>(c.mlp_hidden());

    WeightSet w;
    w.config = c;
    w.token_embedding = Mat(v, d);
    r.tensor(w.token_embedding.data.data(), v * d, "token_embedding");
    if (c.positional_kind == PositionalKind::learned) {
        w.pos_embedding = Mat(static_cast<std::size_t>(c.max_seq_len), d);
        r.tensor(w.pos_embedding.data.data(), w.pos_embedding.size(), "pos_embedding");
    }
    w.layers.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& lw : w.layers) {
        lw.w_q = Mat(d, d);
        r.tensor(lw.w_q.data.data(), d * d, "w_q");
        lw.w_k = Mat(d, d);
        r.tensor(lw.w_k.data.data(), d * d, "w_k");
        lw.w_v = Mat(d, d);
        r.tensor(lw.w_v.data.data(), d * d, "w_v");
        lw.w_o = Mat(d, d);
        r.tensor(lw.w_o.data.data(), d * d, "w_o");
        lw.w_gate = Mat(d, hidden);
        r.tensor(lw.w_gate.data.data(), d * hidden, "w_gate");
        lw.w_up = Mat(d, hidden);
        r.tensor(lw.w_up.data.data(), d * hidden, "w_up");
        lw.w_down = Mat(hidden, d);
        r.tensor(lw.w_down.data.data(), hidden * d, "w_down");
        lw.attn_norm_gain.resize(d);
        r.tensor(lw.attn_norm_gain.data(), d, "attn_norm_gain");
        lw.mlp_norm_gain.resize(d);
        r.tensor(lw.mlp_norm_gain.data(), d, "mlp_norm_gain");
    }
    w.final_norm_gain.resize(d);
    r.tensor(w.final_norm_gain.data(), d, "final_norm_gain");
    w.unembedding = Mat(d, v);
    r.tensor(w.unembedding.data.data(), d * v, "unembedding");
    w.validate();
    return w;
}

void save_probe(const ProbeModel& probe, const std::string& path) {
    json meta;
    meta["layer"] = probe.layer;
    meta["position"] = to_string(probe.position);
    meta["framing"] = probe.framing_tag;
    meta["classes"] = probe.w.rows;
    meta["d_model"] = probe.w.cols;
    Writer w(path, kProbeMagic, meta);
    w.tensor({"w", {probe.w.rows, probe.w.cols}, probe.w.data.data()});
    w.tensor({"b", {probe.b.size()}, probe.b.data()});
    w.finish();
}

ProbeModel load_probe(const std::string& path, bool verify_checksum) {
    Reader r(path, kProbeMagic, verify_checksum);
    ProbeModel p;
    p.layer = r.meta.at("layer").get<int>();
    p.position = parse_hook_kind(r.meta.at("position").get<std::string>());
    p.framing_tag = r.meta.at("framing").get<std::string>();
    const auto classes = r.meta.at("classes").get<std::size_t>();
    const auto d = r.meta.at("d_model").get<std::size_t>();
    p.w = Mat(classes, d);
    r.tensor(p.w.data.data(), classes * d, "w");
    p.b.resize(classes);
    r.tensor(p.b.data(), classes, "b");
    return p;
}

std::size_t ActivationTable::position_index(HookKind kind) const {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] == kind) return i;
    }
    throw DataError("activation table does not hold position " + to_string(kind));
}

void save_activations(const ActivationTable& table, const std::string& path) {
    json meta;
    meta["n_layers"] = table.n_layers;
    meta["d_model"] = table.d_model;
    json positions = json::array();
    for (HookKind k : table.positions) positions.push_back(to_string(k));
    meta["positions"] = positions;
    meta["labels"] = table.labels;
    meta["framings"] = table.framings;
    meta["ids"] = table.ids;
    Writer w(path, kActivationsMagic, meta);
    w.tensor({"acts", {table.acts.rows, table.acts.cols}, table.acts.data.data()});
    w.finish();
}

ActivationTable load_activations(const std::string& path, bool verify_checksum) {
    Reader r(path, kActivationsMagic, verify_checksum);
    ActivationTable t;
    t.n_layers = r.meta.at("n_layers").get<int>();
    t.d_model = r.meta.at("d_model").get<int>();
    for (const auto& p : r.meta.at("positions")) {
        t.positions.push_back(parse_hook_kind(p.get<std::string>()));
    }
    t.labels = r.meta.at("labels").get<std::vector<int>>();
    t.framings = r.meta.at("framings").get<std::vector<std::string>>();
    t.ids = r.meta.at("ids").get<std::vector<std::uint64_t>>();
    const std::size_t rows = t.labels.size();
    const std::size_t cols = static_cast<std::size_t>(t.n_layers) * t.positions.size() *
                             static_cast<std::size_t>(t.d_model);
    t.acts = Mat(rows, cols);
    r.tensor(t.acts.data.data(), rows * cols, "acts");
    return t;
}

} // namespace hm
