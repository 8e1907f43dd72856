#include "hm/model.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/rng.hpp"

namespace hm {

namespace ker = kernels;

std::string to_string(NormKind k) { return k == NormKind::rms ? "rms" : "layer"; }
std::string to_string(PositionalKind k) { return k == PositionalKind::rotary ? "rotary" : "learned"; }

NormKind parse_norm_kind(const std::string& s) {
    if (s == "rms") return NormKind::rms;
    if (s == "layer") return NormKind::layer;
    throw ConfigError("unknown norm_kind: '" + s + "'");
}

PositionalKind parse_positional_kind(const std::string& s) {
    if (s == "rotary") return PositionalKind::rotary;
    if (s == "learned") return PositionalKind::learned;
    throw ConfigError("unknown positional_kind: '" + s + "'");
}

std::string to_string(HookKind k) {
    switch (k) {
        case HookKind::attn_out: return "attn_out";
        case HookKind::mlp_out: return "mlp_out";
        case HookKind::resid_post: return "resid_post";
        case HookKind::attn_internals: return "attn_internals";
    }
    return "?";
}

HookKind parse_hook_kind(const std::string& s) {
    if (s == "attn_out") return HookKind::attn_out;
    if (s == "mlp_out") return HookKind::mlp_out;
    if (s == "resid_post") return HookKind::resid_post;
    if (s == "attn_internals") return HookKind::attn_internals;
    throw ConfigError("unknown hook position: '" + s + "'");
}

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || vocab_size < 1) {
        throw ConfigError("model config: all dimensions must be >= 1");
    }
    if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be >= 2");
    if (d_head * n_heads != d_model) {
        throw ConfigError("model config: d_head * n_heads must equal d_model (" +
                          std::to_string(d_head) + " * " + std::to_string(n_heads) +
                          " != " + std::to_string(d_model) + ")");
    }
}

namespace {

void check_shape(const Mat& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows != rows || m.cols != cols) {
        throw ConfigError(std::string("weight shape mismatch for ") + name);
    }
    if (!all_finite(m)) throw ConfigError(std::string("non-finite values in ") + name);
}

void check_vec(const Vec& v, std::size_t n, const char* name) {
    if (v.size() != n) throw ConfigError(std::string("weight shape mismatch for ") + name);
    if (!all_finite(v)) throw ConfigError(std::string("non-finite values in ") + name);
}

} // namespace

void WeightSet::validate() const {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto h = static_cast<std::size_t>(config.mlp_hidden());
    check_shape(token_embedding, v, d, "token_embedding");
    if (config.positional_kind == PositionalKind::learned) {
        check_shape(pos_embedding, static_cast<std::size_t>(config.max_seq_len), d, "pos_embedding");
    }
    if (layers.size() != static_cast<std::size_t>(config.n_layers)) {
        throw ConfigError("layer count mismatch");
    }
    for (const auto& lw : layers) {
        check_shape(lw.w_q, d, d, "w_q");
        check_shape(lw.w_k, d, d, "w_k");
        check_shape(lw.w_v, d, d, "w_v");
        check_shape(lw.w_o, d, d, "w_o");
        check_shape(lw.w_gate, d, h, "w_gate");
        check_shape(lw.w_up, d, h, "w_up");
        check_shape(lw.w_down, h, d, "w_down");
        check_vec(lw.attn_norm_gain, d, "attn_norm_gain");
        check_vec(lw.mlp_norm_gain, d, "mlp_norm_gain");
    }
    check_vec(final_norm_gain, d, "final_norm_gain");
    check_shape(unembedding, d, v, "unembedding");
}

void TokenSequence::validate(const ModelConfig& config) const {
    if (ids.empty()) throw DataError("token sequence is empty");
    if (ids.size() > static_cast<std::size_t>(config.max_seq_len)) {
        throw DataError("token sequence length " + std::to_string(ids.size()) +
                        " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    for (int id : ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw DataError("token id " + std::to_string(id) + " out of vocab range");
        }
    }
}

HookSelector HookSelector::probing() {
    HookSelector s;
    s.all_kinds = false;
    s.kinds = {HookKind::attn_out, HookKind::mlp_out, HookKind::resid_post};
    return s;
}

HookSelector HookSelector::none() {
    HookSelector s;
    s.all_kinds = false;
    s.all_layers = false;
    return s;
}

bool HookSelector::wants(int layer, HookKind kind) const {
    const bool layer_ok = all_layers || layers.count(layer) > 0;
    const bool kind_ok = all_kinds || kinds.count(kind) > 0;
    return layer_ok && kind_ok;
}

void HookSelector::validate(const ModelConfig& config) const {
    for (int l : layers) {
        if (l < 0 || l >= config.n_layers) {
            throw ConfigError("hook selector: layer " + std::to_string(l) + " out of range");
        }
    }
}

bool ForwardTrace::has(int layer, HookKind kind) const {
    if (layer < 0 || layer >= config.n_layers) return false;
    const auto l = static_cast<std::size_t>(layer);
    switch (kind) {
        case HookKind::attn_out: return !attn_out[l].empty();
        case HookKind::mlp_out: return !mlp_out[l].empty();
        case HookKind::resid_post: return !resid_post[l].empty();
        case HookKind::attn_internals: return !attn_patterns[l].empty();
    }
    return false;
}

const Mat& ForwardTrace::hook(int layer, HookKind kind) const {
    if (!has(layer, kind)) {
        throw DataError("trace is missing hook " + to_string(kind) + " at layer " +
                        std::to_string(layer));
    }
    const auto l = static_cast<std::size_t>(layer);
    switch (kind) {
        case HookKind::attn_out: return attn_out[l];
        case HookKind::mlp_out: return mlp_out[l];
        case HookKind::resid_post: return resid_post[l];
        default: break;
    }
    throw DataError("hook() cannot return attn_internals; use pattern()/value_mat()");
}

const Mat& ForwardTrace::pattern(int layer, int head) const {
    if (!has(layer, HookKind::attn_internals)) {
        throw DataError("trace is missing hook attn_internals at layer " + std::to_string(layer));
    }
    return attn_patterns[static_cast<std::size_t>(layer)][static_cast<std::size_t>(head)];
}

const Mat& ForwardTrace::value_mat(int layer, int head) const {
    if (!has(layer, HookKind::attn_internals)) {
        throw DataError("trace is missing hook attn_internals at layer " + std::to_string(layer));
    }
    return values[static_cast<std::size_t>(layer)][static_cast<std::size_t>(head)];
}

namespace modeldetail {

double norm_row(NormKind kind, const double* x, const double* gain, double* out, std::size_t n) {
    if (kind == NormKind::rms) {
        const double denom = std::sqrt(ker::sumsq(x, n) / static_cast<double>(n) + kNormEps);
        ker::scaled_mul(out, x, gain, 1.0 / denom, n);
        return denom;
    }
    const double mean = ker::sum(x, n) / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(n);
    const double denom = std::sqrt(var + kNormEps);
    const double inv = 1.0 / denom;
    for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gain[i];
    return denom;
}

void rope_rotate(double* head_vec, std::size_t pos, std::size_t d_head, bool inverse) {
    const std::size_t n_pairs = d_head / 2;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const double freq =
            1.0 / std::pow(kRopeBase, static_cast<double>(2 * i) / static_cast<double>(d_head));
        const double angle = static_cast<double>(pos) * freq * (inverse ? -1.0 : 1.0);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = head_vec[2 * i];
        const double x1 = head_vec[2 * i + 1];
        head_vec[2 * i] = x0 * c - x1 * s;
        head_vec[2 * i + 1] = x0 * s + x1 * c;
    }
}

} // namespace modeldetail

WeightSet init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto hidden = static_cast<std::size_t>(config.mlp_hidden());

    WeightSet w;
    w.config = config;

    std::uint64_t stream = 0;
    auto fill = [&](Mat& m, std::size_t rows, std::size_t cols, double std_dev) {
        m = Mat(rows, cols);
        Rng rng(derive_seed(seed, stream++));
        for (double& x : m.data) x = std_dev * rng.gaussian();
    };

    const double base_std = 0.02;
    // residual-write projections get the usual depth-scaled damping
    const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);

    fill(w.token_embedding, v, d, base_std);
    if (config.positional_kind == PositionalKind::learned) {
        fill(w.pos_embedding, static_cast<std::size_t>(config.max_seq_len), d, base_std);
    }
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& lw : w.layers) {
        fill(lw.w_q, d, d, base_std);
        fill(lw.w_k, d, d, base_std);
        fill(lw.w_v, d, d, base_std);
        fill(lw.w_o, d, d, resid_std);
        fill(lw.w_gate, d, hidden, base_std);
        fill(lw.w_up, d, hidden, base_std);
        fill(lw.w_down, hidden, d, resid_std);
        lw.attn_norm_gain.assign(d, 1.0);
        lw.mlp_norm_gain.assign(d, 1.0);
    }
    w.final_norm_gain.assign(d, 1.0);
    fill(w.unembedding, d, v, base_std);
    return w;
}

namespace {

void apply_edits(Mat& activation, const std::vector<ActivationEdit>& edits, int layer,
                 HookKind kind) {
    for (const auto& e : edits) {
        if (e.layer != layer || e.kind != kind) continue;
        if (e.direction.size() != activation.cols) {
            throw DataError("activation edit dimension mismatch at layer " + std::to_string(layer));
        }
        if (e.single_position) {
            if (e.at_pos < activation.rows) {
                ker::axpy(e.alpha, e.direction.data(), activation.row(e.at_pos), activation.cols);
            }
        } else {
            for (std::size_t p = e.at_pos; p < activation.rows; ++p) {
                ker::axpy(e.alpha, e.direction.data(), activation.row(p), activation.cols);
            }
        }
    }
}

} // namespace

ForwardTrace forward_with_hooks(const WeightSet& weights, const TokenSequence& tokens,
                                const HookSelector& hooks,
                                const std::vector<ActivationEdit>& edits) {
    const ModelConfig& cfg = weights.config;
    tokens.validate(cfg);
    hooks.validate(cfg);
    for (const auto& e : edits) {
        if (e.layer < 0 || e.layer >= cfg.n_layers) {
            throw DataError("activation edit layer out of range");
        }
        if (e.kind == HookKind::attn_internals) {
            throw DataError("activation edits cannot target attn_internals");
        }
    }

    const std::size_t n = tokens.length();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const auto nh = static_cast<std::size_t>(cfg.n_heads);
    const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardTrace trace;
    trace.config = cfg;
    trace.n_tokens = n;
    trace.attn_out.resize(static_cast<std::size_t>(cfg.n_layers));
    trace.mlp_out.resize(static_cast<std::size_t>(cfg.n_layers));
    trace.resid_post.resize(static_cast<std::size_t>(cfg.n_layers));
    trace.attn_patterns.resize(static_cast<std::size_t>(cfg.n_layers));
    trace.values.resize(static_cast<std::size_t>(cfg.n_layers));

    // residual stream, N x d
    Mat resid(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* emb = weights.token_embedding.row(static_cast<std::size_t>(tokens.ids[i]));
        std::memcpy(resid.row(i), emb, d * sizeof(double));
        if (cfg.positional_kind == PositionalKind::learned) {
            ker::axpy(1.0, weights.pos_embedding.row(i), resid.row(i), d);
        }
    }

    Mat x_norm(n, d), q(n, d), k(n, d), v(n, d), z(n, d), attn_out(n, d);
    Mat gate(n, hidden), up(n, hidden), mlp_out(n, d);

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const auto& lw = weights.layers[static_cast<std::size_t>(layer)];

        for (std::size_t i = 0; i < n; ++i) {
            modeldetail::norm_row(cfg.norm_kind, resid.row(i), lw.attn_norm_gain.data(),
                                  x_norm.row(i), d);
        }

        std::fill(q.data.begin(), q.data.end(), 0.0);
        std::fill(k.data.begin(), k.data.end(), 0.0);
        std::fill(v.data.begin(), v.data.end(), 0.0);
        ker::gemm_nn(q.data.data(), x_norm.data.data(), lw.w_q.data.data(), n, d, d);
        ker::gemm_nn(k.data.data(), x_norm.data.data(), lw.w_k.data.data(), n, d, d);
        ker::gemm_nn(v.data.data(), x_norm.data.data(), lw.w_v.data.data(), n, d, d);

        if (cfg.positional_kind == PositionalKind::rotary) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t h = 0; h < nh; ++h) {
                    modeldetail::rope_rotate(q.row(i) + h * dh, i, dh, false);
                    modeldetail::rope_rotate(k.row(i) + h * dh, i, dh, false);
                }
            }
        }

        const bool want_internals = hooks.wants(layer, HookKind::attn_internals);
        if (want_internals) {
            trace.attn_patterns[static_cast<std::size_t>(layer)].assign(nh, Mat());
            trace.values[static_cast<std::size_t>(layer)].assign(nh, Mat());
        }

        std::fill(z.data.begin(), z.data.end(), 0.0);
        Mat pattern(n, n);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * dh;
            std::fill(pattern.data.begin(), pattern.data.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double* prow = pattern.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    prow[j] = attn_scale * ker::dot(q.row(i) + off, k.row(j) + off, dh);
                }
                ker::softmax_inplace(prow, i + 1);
                // z_i = sum_j pattern[i,j] * v_j  (head slice)
                double* zrow = z.row(i) + off;
                for (std::size_t j = 0; j <= i; ++j) {
                    ker::axpy(prow[j], v.row(j) + off, zrow, dh);
                }
            }
            if (want_internals) {
                trace.attn_patterns[static_cast<std::size_t>(layer)][h] = pattern;
                Mat vh(n, dh);
                for (std::size_t i = 0; i < n; ++i) {
                    std::memcpy(vh.row(i), v.row(i) + off, dh * sizeof(double));
                }
                trace.values[static_cast<std::size_t>(layer)][h] = std::move(vh);
            }
        }

        std::fill(attn_out.data.begin(), attn_out.data.end(), 0.0);
        ker::gemm_nn(attn_out.data.data(), z.data.data(), lw.w_o.data.data(), n, d, d);
        apply_edits(attn_out, edits, layer, HookKind::attn_out);
        if (hooks.wants(layer, HookKind::attn_out)) {
            trace.attn_out[static_cast<std::size_t>(layer)] = attn_out;
        }
        for (std::size_t i = 0; i < n; ++i) ker::axpy(1.0, attn_out.row(i), resid.row(i), d);

        for (std::size_t i = 0; i < n; ++i) {
            modeldetail::norm_row(cfg.norm_kind, resid.row(i), lw.mlp_norm_gain.data(),
                                  x_norm.row(i), d);
        }
        std::fill(gate.data.begin(), gate.data.end(), 0.0);
        std::fill(up.data.begin(), up.data.end(), 0.0);
        ker::gemm_nn(gate.data.data(), x_norm.data.data(), lw.w_gate.data.data(), n, d, hidden);
        ker::gemm_nn(up.data.data(), x_norm.data.data(), lw.w_up.data.data(), n, d, hidden);
        ker::silu_inplace(gate.data.data(), gate.size());
        ker::hadamard(gate.data.data(), up.data.data(), gate.size());
        std::fill(mlp_out.data.begin(), mlp_out.data.end(), 0.0);
        ker::gemm_nn(mlp_out.data.data(), gate.data.data(), lw.w_down.data.data(), n, hidden, d);
        apply_edits(mlp_out, edits, layer, HookKind::mlp_out);
        if (hooks.wants(layer, HookKind::mlp_out)) {
            trace.mlp_out[static_cast<std::size_t>(layer)] = mlp_out;
        }
        for (std::size_t i = 0; i < n; ++i) ker::axpy(1.0, mlp_out.row(i), resid.row(i), d);

        apply_edits(resid, edits, layer, HookKind::resid_post);
        if (hooks.wants(layer, HookKind::resid_post)) {
            trace.resid_post[static_cast<std::size_t>(layer)] = resid;
        }
    }

    trace.final_norm_scale.resize(n);
    trace.logits = Mat(n, static_cast<std::size_t>(cfg.vocab_size));
    Vec y(d);
    for (std::size_t i = 0; i < n; ++i) {
        trace.final_norm_scale[i] = modeldetail::norm_row(cfg.norm_kind, resid.row(i),
                                                          weights.final_norm_gain.data(), y.data(), d);
        double* lrow = trace.logits.row(i);
        for (std::size_t r = 0; r < d; ++r) {
            ker::axpy(y[r], weights.unembedding.row(r), lrow,
                      static_cast<std::size_t>(cfg.vocab_size));
        }
    }
    return trace;
}

int predict_first_token(const ForwardTrace& trace) {
    if (trace.logits.empty()) throw DataError("trace has no logits");
    const std::size_t p = trace.t_star();
    return static_cast<int>(
        ker::argmax_tie_lowest(trace.logits.row(p), trace.logits.cols));
}

GenerateOutput generate_greedy(const WeightSet& weights, const TokenSequence& prompt,
                               const std::vector<ActivationEdit>& edits,
                               const GenerateOptions& options) {
    prompt.validate(weights.config);
    const auto start = std::chrono::steady_clock::now();
    GenerateOutput out;
    TokenSequence current = prompt;
    const HookSelector no_hooks = HookSelector::none();
    for (int step = 0; step < options.max_new_tokens; ++step) {
        if (current.length() >= static_cast<std::size_t>(weights.config.max_seq_len)) break;
        const ForwardTrace trace = forward_with_hooks(weights, current, no_hooks, edits);
        const int next = predict_first_token(trace);
        out.generated.push_back(next);
        current.ids.push_back(next);
        if (options.eos_id && next == *options.eos_id) break;
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (elapsed > options.time_limit_seconds) {
            out.truncated_by_time_limit = true;
            break;
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace hm
