#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/model.hpp"
#include "hm/rng.hpp"

using namespace hm;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_model = 64;
    c.d_head = 16;
    c.vocab_size = 38;
    c.max_seq_len = 16;
    return c;
}

TokenSequence random_tokens(std::size_t n, const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    TokenSequence t;
    for (std::size_t i = 0; i < n; ++i) {
        t.ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size))));
    }
    return t;
}

bool bit_identical(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    c.d_head = 8;  // 8 * 4 != 64
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.max_seq_len = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.n_layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("init_model is deterministic and seed-sensitive") {
    const ModelConfig cfg = small_config();
    const WeightSet w1 = init_model(cfg, 7);
    const WeightSet w2 = init_model(cfg, 7);
    CHECK(bit_identical(w1.token_embedding, w2.token_embedding));
    CHECK(bit_identical(w1.unembedding, w2.unembedding));
    for (std::size_t l = 0; l < w1.layers.size(); ++l) {
        CHECK(bit_identical(w1.layers[l].w_q, w2.layers[l].w_q));
        CHECK(bit_identical(w1.layers[l].w_down, w2.layers[l].w_down));
    }

    // differing seeds give differing embeddings
    const WeightSet w3 = init_model(cfg, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < w1.token_embedding.size(); ++i) {
        if (w1.token_embedding.data[i] != w3.token_embedding.data[i]) {
            any_diff = true;
            break;
        }
    }
    CHECK(any_diff);
}

TEST_CASE("init_model shapes and norm gains") {
    ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 3);
    CHECK_NOTHROW(w.validate());
    // every per-head W_O slice is d_head x d_model = 16 x 64 rows of w_o
    CHECK(w.layers[0].w_o.rows == 64);
    CHECK(w.layers[0].w_o.cols == 64);
    CHECK(cfg.d_head * cfg.n_heads == static_cast<int>(w.layers[0].w_o.rows));
    for (double g : w.layers[0].attn_norm_gain) CHECK(g == 1.0);
    for (double g : w.final_norm_gain) CHECK(g == 1.0);
}

TEST_CASE("token sequence validation") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 1);
    TokenSequence too_long = random_tokens(17, cfg, 5);
    CHECK_THROWS_AS(forward_with_hooks(w, too_long, HookSelector::all()), DataError);
    TokenSequence bad_id;
    bad_id.ids = {0, cfg.vocab_size};
    CHECK_THROWS_AS(forward_with_hooks(w, bad_id, HookSelector::all()), DataError);
    TokenSequence empty;
    CHECK_THROWS_AS(forward_with_hooks(w, empty, HookSelector::all()), DataError);
}

TEST_CASE("single-token sequence gives the 1x1 attention pattern [1.0]") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 11);
    TokenSequence t;
    t.ids = {5};
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::all());
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Mat& p = trace.pattern(l, h);
            REQUIRE(p.rows == 1);
            REQUIRE(p.cols == 1);
            CHECK(p.at(0, 0) == 1.0);
        }
    }
}

TEST_CASE("attention patterns are causal and row-normalized") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 13);
    const TokenSequence t = random_tokens(9, cfg, 17);
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::all());
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Mat& p = trace.pattern(l, h);
            for (std::size_t i = 0; i < p.rows; ++i) {
                double row_sum = 0.0;
                for (std::size_t j = 0; j < p.cols; ++j) {
                    if (j > i) {
                        CHECK(p.at(i, j) == 0.0);  // exactly zero above the diagonal
                    } else {
                        CHECK(p.at(i, j) >= 0.0);
                        row_sum += p.at(i, j);
                    }
                }
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("residual additivity holds against an independent reconstruction") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 19);
    const TokenSequence t = random_tokens(8, cfg, 23);
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::all());

    // independent bookkeeping: resid_post[l] = resid_post[l-1] + attn_out[l] + mlp_out[l],
    // with resid_post[-1] = token embeddings
    Mat expected(t.length(), static_cast<std::size_t>(cfg.d_model));
    for (std::size_t i = 0; i < t.length(); ++i) {
        const double* emb = w.token_embedding.row(static_cast<std::size_t>(t.ids[i]));
        for (int c = 0; c < cfg.d_model; ++c) expected.at(i, c) = emb[c];
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
        const Mat& attn = trace.hook(l, HookKind::attn_out);
        const Mat& mlp = trace.hook(l, HookKind::mlp_out);
        const Mat& resid = trace.hook(l, HookKind::resid_post);
        for (std::size_t i = 0; i < expected.rows; ++i) {
            for (std::size_t c = 0; c < expected.cols; ++c) {
                expected.at(i, c) += attn.at(i, c) + mlp.at(i, c);
                CHECK(resid.at(i, c) == doctest::Approx(expected.at(i, c)).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("logits equal the unembedding of the final-normalized residual") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 29);
    const TokenSequence t = random_tokens(6, cfg, 31);
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::all());
    const Mat& resid = trace.hook(cfg.n_layers - 1, HookKind::resid_post);
    const auto d = static_cast<std::size_t>(cfg.d_model);

    Vec y(d);
    for (std::size_t p = 0; p < t.length(); ++p) {
        const double denom =
            modeldetail::norm_row(cfg.norm_kind, resid.row(p), w.final_norm_gain.data(), y.data(), d);
        CHECK(denom == doctest::Approx(trace.final_norm_scale[p]).epsilon(1e-12));
        for (int v = 0; v < cfg.vocab_size; v += 7) {
            double logit = 0.0;
            for (std::size_t r = 0; r < d; ++r) {
                logit += y[r] * w.unembedding.at(r, static_cast<std::size_t>(v));
            }
            CHECK(trace.logits.at(p, static_cast<std::size_t>(v)) ==
                  doctest::Approx(logit).epsilon(1e-5));
        }
    }
}

TEST_CASE("forward is bit-deterministic") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 37);
    const TokenSequence t = random_tokens(7, cfg, 41);
    const ForwardTrace a = forward_with_hooks(w, t, HookSelector::all());
    const ForwardTrace b = forward_with_hooks(w, t, HookSelector::all());
    CHECK(bit_identical(a.logits, b.logits));
    for (int l = 0; l < cfg.n_layers; ++l) {
        CHECK(bit_identical(a.hook(l, HookKind::resid_post), b.hook(l, HookKind::resid_post)));
        for (int h = 0; h < cfg.n_heads; ++h) {
            CHECK(bit_identical(a.pattern(l, h), b.pattern(l, h)));
        }
    }
}

TEST_CASE("trace contains exactly the requested hook points") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 43);
    const TokenSequence t = random_tokens(5, cfg, 47);

    HookSelector hooks;
    hooks.all_layers = false;
    hooks.layers = {1};
    hooks.all_kinds = false;
    hooks.kinds = {HookKind::mlp_out};

    const ForwardTrace trace = forward_with_hooks(w, t, hooks);
    CHECK(trace.has(1, HookKind::mlp_out));
    CHECK_FALSE(trace.has(0, HookKind::mlp_out));
    CHECK_FALSE(trace.has(1, HookKind::attn_out));
    CHECK_FALSE(trace.has(1, HookKind::attn_internals));
    CHECK_THROWS_WITH_AS(trace.hook(0, HookKind::mlp_out),
                         "trace is missing hook mlp_out at layer 0", DataError);
    // logits and the final norm scale are always present
    CHECK(trace.logits.rows == t.length());
    CHECK(trace.final_norm_scale.size() == t.length());

    HookSelector bad;
    bad.all_layers = false;
    bad.layers = {9};
    CHECK_THROWS_AS(forward_with_hooks(w, t, bad), ConfigError);
}

TEST_CASE("predict_first_token: argmax with lowest-id tie break") {
    ForwardTrace trace;
    trace.config = small_config();
    trace.n_tokens = 2;
    trace.logits = Mat(2, 5);
    trace.logits.at(1, 3) = 9.0;  // dominant
    CHECK(predict_first_token(trace) == 3);
    trace.logits.at(1, 1) = 9.0;  // exact two-way tie -> lower id
    CHECK(predict_first_token(trace) == 1);
}

TEST_CASE("rope rotation inverts exactly") {
    Vec v = {0.3, -1.2, 0.8, 2.5, -0.4, 0.9, 1.1, -2.2};
    const Vec orig = v;
    modeldetail::rope_rotate(v.data(), 5, v.size(), false);
    CHECK(v != orig);
    modeldetail::rope_rotate(v.data(), 5, v.size(), true);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(orig[i]).epsilon(1e-12));
}

TEST_CASE("layer norm and learned positions forward") {
    ModelConfig cfg = small_config();
    cfg.norm_kind = NormKind::layer;
    cfg.positional_kind = PositionalKind::learned;
    const WeightSet w = init_model(cfg, 53);
    CHECK(w.pos_embedding.rows == static_cast<std::size_t>(cfg.max_seq_len));
    const TokenSequence t = random_tokens(6, cfg, 59);
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::all());
    CHECK(all_finite(trace.logits));
    // residual additivity is architecture-independent
    const Mat& r0 = trace.hook(0, HookKind::resid_post);
    const Mat& a1 = trace.hook(1, HookKind::attn_out);
    const Mat& m1 = trace.hook(1, HookKind::mlp_out);
    const Mat& r1 = trace.hook(1, HookKind::resid_post);
    for (std::size_t i = 0; i < r0.rows; ++i) {
        for (std::size_t c = 0; c < r0.cols; ++c) {
            CHECK(r1.at(i, c) ==
                  doctest::Approx(r0.at(i, c) + a1.at(i, c) + m1.at(i, c)).epsilon(1e-5));
        }
    }
}

TEST_CASE("activation edits: zero alpha and zero vector are bit-exact no-ops") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 61);
    const TokenSequence t = random_tokens(6, cfg, 67);

    const ForwardTrace base = forward_with_hooks(w, t, HookSelector::all());

    ActivationEdit zero_alpha;
    zero_alpha.layer = 1;
    zero_alpha.kind = HookKind::mlp_out;
    zero_alpha.alpha = 0.0;
    zero_alpha.direction = Vec(static_cast<std::size_t>(cfg.d_model), 0.7);
    zero_alpha.at_pos = t.length() - 1;
    const ForwardTrace edited = forward_with_hooks(w, t, HookSelector::all(), {zero_alpha});
    CHECK(bit_identical(base.logits, edited.logits));

    ActivationEdit zero_vec = zero_alpha;
    zero_vec.alpha = 3.0;
    zero_vec.direction.assign(static_cast<std::size_t>(cfg.d_model), 0.0);
    const ForwardTrace edited2 = forward_with_hooks(w, t, HookSelector::all(), {zero_vec});
    CHECK(bit_identical(base.logits, edited2.logits));

    // a real edit changes the logits
    ActivationEdit real = zero_alpha;
    real.alpha = 2.0;
    const ForwardTrace edited3 = forward_with_hooks(w, t, HookSelector::all(), {real});
    CHECK_FALSE(bit_identical(base.logits, edited3.logits));
}

TEST_CASE("greedy generation stops at eos and respects max_new_tokens") {
    const ModelConfig cfg = small_config();
    const WeightSet w = init_model(cfg, 71);
    const TokenSequence t = random_tokens(4, cfg, 73);
    GenerateOptions opts;
    opts.max_new_tokens = 5;
    opts.time_limit_seconds = 60.0;
    const GenerateOutput out = generate_greedy(w, t, {}, opts);
    CHECK(out.generated.size() <= 5);
    CHECK_FALSE(out.truncated_by_time_limit);

    // first generated token equals predict_first_token on the prompt trace
    const ForwardTrace trace = forward_with_hooks(w, t, HookSelector::none());
    CHECK(out.generated.front() == predict_first_token(trace));
}
