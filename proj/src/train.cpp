#include "hm/train.hpp"

#include <cmath>
#include <cstring>

#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/rng.hpp"

namespace hm {

namespace ker = kernels;
using modeldetail::norm_row;
using modeldetail::rope_rotate;

namespace {

WeightSet zero_like(const WeightSet& w) {
    WeightSet z;
    z.config = w.config;
    z.token_embedding = Mat(w.token_embedding.rows, w.token_embedding.cols);
    if (!w.pos_embedding.empty()) z.pos_embedding = Mat(w.pos_embedding.rows, w.pos_embedding.cols);
    z.layers.resize(w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& src = w.layers[l];
        auto& dst = z.layers[l];
        dst.w_q = Mat(src.w_q.rows, src.w_q.cols);
        dst.w_k = Mat(src.w_k.rows, src.w_k.cols);
        dst.w_v = Mat(src.w_v.rows, src.w_v.cols);
        dst.w_o = Mat(src.w_o.rows, src.w_o.cols);
        dst.w_gate = Mat(src.w_gate.rows, src.w_gate.cols);
        dst.w_up = Mat(src.w_up.rows, src.w_up.cols);
        dst.w_down = Mat(src.w_down.rows, src.w_down.cols);
        dst.attn_norm_gain.assign(src.attn_norm_gain.size(), 0.0);
        dst.mlp_norm_gain.assign(src.mlp_norm_gain.size(), 0.0);
    }
    z.final_norm_gain.assign(w.final_norm_gain.size(), 0.0);
    z.unembedding = Mat(w.unembedding.rows, w.unembedding.cols);
    return z;
}

// fixed traversal order over every parameter tensor; shared by the
// optimizer state and the gradient accumulators
template <typename Fn>
void for_each_tensor(WeightSet& w, Fn&& fn) {
    fn(w.token_embedding.data.data(), w.token_embedding.size());
    if (!w.pos_embedding.empty()) fn(w.pos_embedding.data.data(), w.pos_embedding.size());
    for (auto& lw : w.layers) {
        fn(lw.w_q.data.data(), lw.w_q.size());
        fn(lw.w_k.data.data(), lw.w_k.size());
        fn(lw.w_v.data.data(), lw.w_v.size());
        fn(lw.w_o.data.data(), lw.w_o.size());
        fn(lw.w_gate.data.data(), lw.w_gate.size());
        fn(lw.w_up.data.data(), lw.w_up.size());
        fn(lw.w_down.data.data(), lw.w_down.size());
        fn(lw.attn_norm_gain.data(), lw.attn_norm_gain.size());
        fn(lw.mlp_norm_gain.data(), lw.mlp_norm_gain.size());
    }
    fn(w.final_norm_gain.data(), w.final_norm_gain.size());
    fn(w.unembedding.data.data(), w.unembedding.size());
}

void zero_weights(WeightSet& w) {
    for_each_tensor(w, [](double* p, std::size_t n) { std::fill(p, p + n, 0.0); });
}

// d(silu)/dx at x
inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// backward through one norm row; accumulates into dx and dgain
void norm_row_backward(NormKind kind, const double* x, const double* gain, double denom,
                       const double* dy, double* dx, double* dgain, std::size_t n) {
    const double inv = 1.0 / denom;
    const double nd = static_cast<double>(n);
    if (kind == NormKind::rms) {
        // u = x / denom; dxhat = dy * gain
        double dot_xh_x = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot_xh_x += dy[i] * gain[i] * x[i];
        const double coeff = dot_xh_x / (nd * denom * denom * denom);
        for (std::size_t i = 0; i < n; ++i) {
            dgain[i] += dy[i] * x[i] * inv;
            dx[i] += dy[i] * gain[i] * inv - x[i] * coeff;
        }
        return;
    }
    // layer norm: u = (x - mu) / denom
    double mu = ker::sum(x, n) / nd;
    double mean_dxhat = 0.0;
    double mean_dxhat_u = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (x[i] - mu) * inv;
        const double dxhat = dy[i] * gain[i];
        mean_dxhat += dxhat;
        mean_dxhat_u += dxhat * u;
    }
    mean_dxhat /= nd;
    mean_dxhat_u /= nd;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (x[i] - mu) * inv;
        const double dxhat = dy[i] * gain[i];
        dgain[i] += dy[i] * u;
        dx[i] += (dxhat - mean_dxhat - u * mean_dxhat_u) * inv;
    }
}

struct LayerCache {
    Mat resid_pre1;  // input to the attention norm
    Mat x_norm1;
    Vec denom1;
    Mat q, k, v;  // post-rope q, k
    std::vector<Mat> patterns;
    Mat z;           // concatenated head mixes, pre-W_O
    Mat resid_pre2;  // input to the mlp norm
    Mat x_norm2;
    Vec denom2;
    Mat gate_pre, up, act;
};

struct SeqCache {
    std::vector<int> tokens;
    std::vector<LayerCache> layers;
    Mat resid_final;
    Vec denom_final;
    Mat y_final;
};

void forward_cached(const WeightSet& w, const std::vector<int>& tokens, SeqCache& cache) {
    const ModelConfig& cfg = w.config;
    const std::size_t n = tokens.size();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const auto nh = static_cast<std::size_t>(cfg.n_heads);
    const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.tokens = tokens;
    cache.layers.assign(static_cast<std::size_t>(cfg.n_layers), LayerCache{});

    Mat resid(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(resid.row(i), w.token_embedding.row(static_cast<std::size_t>(tokens[i])),
                    d * sizeof(double));
        if (cfg.positional_kind == PositionalKind::learned) {
            ker::axpy(1.0, w.pos_embedding.row(i), resid.row(i), d);
        }
    }

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const auto& lw = w.layers[static_cast<std::size_t>(layer)];
        auto& lc = cache.layers[static_cast<std::size_t>(layer)];

        lc.resid_pre1 = resid;
        lc.x_norm1 = Mat(n, d);
        lc.denom1.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            lc.denom1[i] = norm_row(cfg.norm_kind, resid.row(i), lw.attn_norm_gain.data(),
                                    lc.x_norm1.row(i), d);
        }

        lc.q = Mat(n, d);
        lc.k = Mat(n, d);
        lc.v = Mat(n, d);
        ker::gemm_nn(lc.q.data.data(), lc.x_norm1.data.data(), lw.w_q.data.data(), n, d, d);
        ker::gemm_nn(lc.k.data.data(), lc.x_norm1.data.data(), lw.w_k.data.data(), n, d, d);
        ker::gemm_nn(lc.v.data.data(), lc.x_norm1.data.data(), lw.w_v.data.data(), n, d, d);
        if (cfg.positional_kind == PositionalKind::rotary) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t h = 0; h < nh; ++h) {
                    rope_rotate(lc.q.row(i) + h * dh, i, dh, false);
                    rope_rotate(lc.k.row(i) + h * dh, i, dh, false);
                }
            }
        }

        lc.patterns.assign(nh, Mat());
        lc.z = Mat(n, d);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * dh;
            Mat pattern(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                double* prow = pattern.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    prow[j] = attn_scale * ker::dot(lc.q.row(i) + off, lc.k.row(j) + off, dh);
                }
                ker::softmax_inplace(prow, i + 1);
                double* zrow = lc.z.row(i) + off;
                for (std::size_t j = 0; j <= i; ++j) {
                    ker::axpy(prow[j], lc.v.row(j) + off, zrow, dh);
                }
            }
            lc.patterns[h] = std::move(pattern);
        }

        Mat attn_out(n, d);
        ker::gemm_nn(attn_out.data.data(), lc.z.data.data(), lw.w_o.data.data(), n, d, d);
        for (std::size_t i = 0; i < n; ++i) ker::axpy(1.0, attn_out.row(i), resid.row(i), d);

        lc.resid_pre2 = resid;
        lc.x_norm2 = Mat(n, d);
        lc.denom2.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            lc.denom2[i] = norm_row(cfg.norm_kind, resid.row(i), lw.mlp_norm_gain.data(),
                                    lc.x_norm2.row(i), d);
        }
        lc.gate_pre = Mat(n, hidden);
        lc.up = Mat(n, hidden);
        ker::gemm_nn(lc.gate_pre.data.data(), lc.x_norm2.data.data(), lw.w_gate.data.data(), n, d,
                     hidden);
        ker::gemm_nn(lc.up.data.data(), lc.x_norm2.data.data(), lw.w_up.data.data(), n, d, hidden);
        lc.act = lc.gate_pre;
        ker::silu_inplace(lc.act.data.data(), lc.act.size());
        ker::hadamard(lc.act.data.data(), lc.up.data.data(), lc.act.size());

        Mat mlp_out(n, d);
        ker::gemm_nn(mlp_out.data.data(), lc.act.data.data(), lw.w_down.data.data(), n, hidden, d);
        for (std::size_t i = 0; i < n; ++i) ker::axpy(1.0, mlp_out.row(i), resid.row(i), d);
    }

    cache.resid_final = resid;
    cache.denom_final.resize(n);
    cache.y_final = Mat(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        cache.denom_final[i] = norm_row(cfg.norm_kind, resid.row(i), w.final_norm_gain.data(),
                                        cache.y_final.row(i), d);
    }
}

// backward for one sequence given per-position logit gradients at the
// loss positions; accumulates parameter gradients into `grads`
void backward_cached(const WeightSet& w, const SeqCache& cache,
                     const std::vector<std::pair<std::size_t, Vec>>& dlogits_at, WeightSet& grads) {
    const ModelConfig& cfg = w.config;
    const std::size_t n = cache.tokens.size();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const auto nh = static_cast<std::size_t>(cfg.n_heads);
    const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
    const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat d_resid(n, d);

    // unembedding + final norm
    Vec dy(d);
    for (const auto& [pos, dlogit] : dlogits_at) {
        const double* y_row = cache.y_final.row(pos);
        for (std::size_t r = 0; r < d; ++r) {
            ker::axpy(y_row[r], dlogit.data(), grads.unembedding.row(r), vocab);
            dy[r] = ker::dot(w.unembedding.row(r), dlogit.data(), vocab);
        }
        norm_row_backward(cfg.norm_kind, cache.resid_final.row(pos), w.final_norm_gain.data(),
                          cache.denom_final[pos], dy.data(), d_resid.row(pos),
                          grads.final_norm_gain.data(), d);
    }

    Mat d_xnorm(n, d), d_z(n, d), d_q(n, d), d_k(n, d), d_v(n, d);
    Mat d_act(n, hidden), d_gate(n, hidden), d_up(n, hidden);

    for (int layer = cfg.n_layers - 1; layer >= 0; --layer) {
        const auto& lw = w.layers[static_cast<std::size_t>(layer)];
        auto& lg = grads.layers[static_cast<std::size_t>(layer)];
        const auto& lc = cache.layers[static_cast<std::size_t>(layer)];

        // ---- MLP block; d_mlp_out == d_resid (residual pass-through) ----
        std::fill(d_act.data.begin(), d_act.data.end(), 0.0);
        ker::gemm_nt(d_act.data.data(), d_resid.data.data(), lw.w_down.data.data(), n, d, hidden);
        ker::gemm_tn(lg.w_down.data.data(), lc.act.data.data(), d_resid.data.data(), hidden, n, d);

        for (std::size_t idx = 0; idx < n * hidden; ++idx) {
            const double g_pre = lc.gate_pre.data[idx];
            const double silu_g = g_pre / (1.0 + std::exp(-g_pre));
            d_up.data[idx] = d_act.data[idx] * silu_g;
            d_gate.data[idx] = d_act.data[idx] * lc.up.data[idx] * silu_grad(g_pre);
        }
        ker::gemm_tn(lg.w_gate.data.data(), lc.x_norm2.data.data(), d_gate.data.data(), d, n,
                     hidden);
        ker::gemm_tn(lg.w_up.data.data(), lc.x_norm2.data.data(), d_up.data.data(), d, n, hidden);
        std::fill(d_xnorm.data.begin(), d_xnorm.data.end(), 0.0);
        ker::gemm_nt(d_xnorm.data.data(), d_gate.data.data(), lw.w_gate.data.data(), n, hidden, d);
        ker::gemm_nt(d_xnorm.data.data(), d_up.data.data(), lw.w_up.data.data(), n, hidden, d);

        for (std::size_t i = 0; i < n; ++i) {
            norm_row_backward(cfg.norm_kind, lc.resid_pre2.row(i), lw.mlp_norm_gain.data(),
                              lc.denom2[i], d_xnorm.row(i), d_resid.row(i),
                              lg.mlp_norm_gain.data(), d);
        }

        // ---- attention block; d_attn_out == d_resid ----
        std::fill(d_z.data.begin(), d_z.data.end(), 0.0);
        ker::gemm_nt(d_z.data.data(), d_resid.data.data(), lw.w_o.data.data(), n, d, d);
        ker::gemm_tn(lg.w_o.data.data(), lc.z.data.data(), d_resid.data.data(), d, n, d);

        std::fill(d_q.data.begin(), d_q.data.end(), 0.0);
        std::fill(d_k.data.begin(), d_k.data.end(), 0.0);
        std::fill(d_v.data.begin(), d_v.data.end(), 0.0);
        Vec d_prow(n), d_srow(n);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * dh;
            const Mat& pattern = lc.patterns[h];
            for (std::size_t i = 0; i < n; ++i) {
                const double* dz_row = d_z.row(i) + off;
                const double* prow = pattern.row(i);
                // dP and dV
                for (std::size_t j = 0; j <= i; ++j) {
                    d_prow[j] = ker::dot(dz_row, lc.v.row(j) + off, dh);
                    ker::axpy(prow[j], dz_row, d_v.row(j) + off, dh);
                }
                // softmax backward over the causal row
                double row_dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) row_dot += d_prow[j] * prow[j];
                for (std::size_t j = 0; j <= i; ++j) d_srow[j] = prow[j] * (d_prow[j] - row_dot);
                // score backward
                for (std::size_t j = 0; j <= i; ++j) {
                    const double g = d_srow[j] * attn_scale;
                    ker::axpy(g, lc.k.row(j) + off, d_q.row(i) + off, dh);
                    ker::axpy(g, lc.q.row(i) + off, d_k.row(j) + off, dh);
                }
            }
        }

        if (cfg.positional_kind == PositionalKind::rotary) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t h = 0; h < nh; ++h) {
                    rope_rotate(d_q.row(i) + h * dh, i, dh, true);
                    rope_rotate(d_k.row(i) + h * dh, i, dh, true);
                }
            }
        }

        ker::gemm_tn(lg.w_q.data.data(), lc.x_norm1.data.data(), d_q.data.data(), d, n, d);
        ker::gemm_tn(lg.w_k.data.data(), lc.x_norm1.data.data(), d_k.data.data(), d, n, d);
        ker::gemm_tn(lg.w_v.data.data(), lc.x_norm1.data.data(), d_v.data.data(), d, n, d);
        std::fill(d_xnorm.data.begin(), d_xnorm.data.end(), 0.0);
        ker::gemm_nt(d_xnorm.data.data(), d_q.data.data(), lw.w_q.data.data(), n, d, d);
        ker::gemm_nt(d_xnorm.data.data(), d_k.data.data(), lw.w_k.data.data(), n, d, d);
        ker::gemm_nt(d_xnorm.data.data(), d_v.data.data(), lw.w_v.data.data(), n, d, d);

        for (std::size_t i = 0; i < n; ++i) {
            norm_row_backward(cfg.norm_kind, lc.resid_pre1.row(i), lw.attn_norm_gain.data(),
                              lc.denom1[i], d_xnorm.row(i), d_resid.row(i),
                              lg.attn_norm_gain.data(), d);
        }
    }

    // embeddings
    for (std::size_t i = 0; i < n; ++i) {
        ker::axpy(1.0, d_resid.row(i),
                  grads.token_embedding.row(static_cast<std::size_t>(cache.tokens[i])), d);
        if (cfg.positional_kind == PositionalKind::learned) {
            ker::axpy(1.0, d_resid.row(i), grads.pos_embedding.row(i), d);
        }
    }
}

} // namespace

ToyBatch make_training_batch(const std::vector<ToyTaskExample>& corpus,
                             const std::vector<std::size_t>& indices) {
    ToyBatch batch;
    batch.inputs.reserve(indices.size());
    batch.targets.reserve(indices.size());
    for (std::size_t idx : indices) {
        const ToyTaskExample& ex = corpus[idx];
        std::vector<int> input = ex.ids.ids;
        const std::size_t ans_pos = input.size() - 1;
        input.push_back(ex.answer_token());
        batch.inputs.push_back(std::move(input));
        batch.targets.push_back({{ans_pos, ex.answer_token()}, {ans_pos + 1, toyvocab::EOS}});
    }
    return batch;
}

double toy_loss_and_grad(const WeightSet& weights, const ToyBatch& batch, WeightSet* grads) {
    const auto vocab = static_cast<std::size_t>(weights.config.vocab_size);
    if (grads != nullptr) zero_weights(*grads);

    std::size_t total_positions = 0;
    for (const auto& t : batch.targets) total_positions += t.size();
    if (total_positions == 0) throw DataError("training batch has no loss positions");
    const double inv_count = 1.0 / static_cast<double>(total_positions);

    double loss = 0.0;
    SeqCache cache;
    Vec logits(vocab), probs(vocab);
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        forward_cached(weights, batch.inputs[s], cache);
        std::vector<std::pair<std::size_t, Vec>> dlogits_at;
        dlogits_at.reserve(batch.targets[s].size());
        for (const auto& [pos, target] : batch.targets[s]) {
            std::fill(logits.begin(), logits.end(), 0.0);
            const double* y_row = cache.y_final.row(pos);
            for (std::size_t r = 0; r < cache.y_final.cols; ++r) {
                ker::axpy(y_row[r], weights.unembedding.row(r), logits.data(), vocab);
            }
            probs = logits;
            ker::softmax_inplace(probs.data(), vocab);
            const double p_target = probs[static_cast<std::size_t>(target)];
            loss -= std::log(std::max(p_target, 1e-300)) * inv_count;
            if (grads != nullptr) {
                Vec dl = probs;
                dl[static_cast<std::size_t>(target)] -= 1.0;
                ker::scale(dl.data(), inv_count, vocab);
                dlogits_at.emplace_back(pos, std::move(dl));
            }
        }
        if (grads != nullptr) backward_cached(weights, cache, dlogits_at, *grads);
    }
    return loss;
}

ToyTrainResult train_toy_model(const ModelConfig& config,
                               const std::vector<ToyTaskExample>& corpus,
                               const ToyTrainHyperparams& hp) {
    config.validate();
    if (corpus.empty()) throw DataError("toy training corpus is empty");
    for (const auto& ex : corpus) {
        if (ex.ids.ids.size() + 1 > static_cast<std::size_t>(config.max_seq_len)) {
            throw DataError("toy example does not fit max_seq_len");
        }
        for (int id : ex.ids.ids) {
            if (id < 0 || id >= config.vocab_size) throw DataError("toy example token out of vocab");
        }
    }
    if (hp.steps < 0 || hp.batch_size < 1) throw ConfigError("invalid training hyperparameters");

    ToyTrainResult result;
    result.weights = init_model(config, hp.seed);
    if (hp.steps == 0) return result;

    WeightSet grads = zero_like(result.weights);
    WeightSet adam_m = zero_like(result.weights);
    WeightSet adam_v = zero_like(result.weights);

    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    Rng batch_rng(derive_seed(hp.seed, 0xBA7C4));

    for (int step = 0; step < hp.steps; ++step) {
        std::vector<std::size_t> indices(static_cast<std::size_t>(hp.batch_size));
        for (auto& idx : indices) idx = batch_rng.below(corpus.size());
        const ToyBatch batch = make_training_batch(corpus, indices);
        const double loss = toy_loss_and_grad(result.weights, batch, &grads);
        if (!std::isfinite(loss)) {
            throw NumericalError("toy training diverged (loss not finite) at step " +
                                 std::to_string(step));
        }
        result.final_loss = loss;
        result.steps_run = step + 1;

        const double bc1 = 1.0 - std::pow(beta1, step + 1);
        const double bc2 = 1.0 - std::pow(beta2, step + 1);

        // Adam update over the fixed tensor traversal
        std::vector<std::pair<double*, std::size_t>> param_list, grad_list, m_list, v_list;
        for_each_tensor(result.weights,
                        [&](double* p, std::size_t n) { param_list.emplace_back(p, n); });
        for_each_tensor(grads, [&](double* p, std::size_t n) { grad_list.emplace_back(p, n); });
        for_each_tensor(adam_m, [&](double* p, std::size_t n) { m_list.emplace_back(p, n); });
        for_each_tensor(adam_v, [&](double* p, std::size_t n) { v_list.emplace_back(p, n); });
        for (std::size_t t = 0; t < param_list.size(); ++t) {
            double* p = param_list[t].first;
            double* g = grad_list[t].first;
            double* m = m_list[t].first;
            double* v = v_list[t].first;
            const std::size_t count = param_list[t].second;
            for (std::size_t i = 0; i < count; ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
            }
        }
    }
    return result;
}

double winner_token_accuracy(const WeightSet& weights,
                             const std::vector<ToyTaskExample>& examples) {
    if (examples.empty()) throw DataError("no examples to evaluate");
    const HookSelector no_hooks = HookSelector::none();
    std::size_t correct = 0;
    for (const auto& ex : examples) {
        const ForwardTrace trace = forward_with_hooks(weights, ex.ids, no_hooks);
        if (predict_first_token(trace) == ex.answer_token()) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

} // namespace hm
