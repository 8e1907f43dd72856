#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hm/corpus.hpp"
#include "hm/model.hpp"

namespace hm {

struct DlaOptions {
    // Fold the final norm into the unembedding direction: scale by the
    // gain (and center, for layer norm) and divide by the frozen
    // normalization denominator cached at the target position, putting
    // contributions on the same scale as actual logits. Disable to take
    // the raw unembedding column instead.
    bool fold_final_norm = true;
    double degenerate_rel_tol = 1e-9;
};

// w_y (optionally norm-folded) for target token y at position p
Vec unembed_direction(const WeightSet& weights, const ForwardTrace& trace, std::size_t p, int y,
                      const DlaOptions& options);

// DLA_t^{(l,h)} = < w_y, Attn[p,t] * V_t W_O^{(h)} >
double head_token_contribution(const ForwardTrace& trace, const WeightSet& weights, int layer,
                               int head, std::size_t t, std::size_t p, int y,
                               const DlaOptions& options);

struct SpanAttribution {
    std::size_t target_pos = 0;
    int target_token = 0;
    // per layer: heads x (target_pos + 1) scores; contributions from t > p
    // are never computed (causality)
    std::vector<Mat> scores;

    double total() const;
};

struct DlaFlags {
    bool primary_geq = false;         // s_a >= s_b
    bool detected = false;            // strictly opposite signs
    bool primary_win_conflict = false;  // s_a > 0 && s_b < 0
};

struct DlaResult {
    double c_a = 0.0;
    double c_b = 0.0;
    double s_a = 0.0;
    double s_b = 0.0;
    bool degenerate = false;
    DlaFlags flags;
    std::uint64_t prompt_id = 0;
    Framing framing = Framing::system_user;
};

struct ShareMetrics {
    bool degenerate = false;
    double s_a = 0.0;
    double s_b = 0.0;
};

// s_a = c_a / (c_a + c_b); s_b = 1 - s_a (identical algebraically, exact in
// floating point). Degenerate when |c_a + c_b| <= tol * max(|c_a|, |c_b|, 1).
ShareMetrics share_metrics(double c_a, double c_b, double degenerate_rel_tol = 1e-9);

DlaFlags classify_conflict(const DlaResult& result);  // throws DataError when degenerate

// Full attribution of the greedy first predicted token's logit across the
// two constraint spans, summed over all layers, heads and span tokens.
DlaResult dla_full(const ForwardTrace& trace, const WeightSet& weights,
                   const std::vector<TokenSpan>& spans_a, const std::vector<TokenSpan>& spans_b,
                   const DlaOptions& options, SpanAttribution* attribution = nullptr);

// Per-layer relative L2 error of sum_t sum_h Attn[p,t] * V_t W_O against the
// recorded attention sublayer output at p. Independent of the unembedding.
std::vector<double> attention_completeness_errors(const ForwardTrace& trace,
                                                  const WeightSet& weights, std::size_t p);

struct FramingAggregate {
    double pct_primary_geq = 0.0;
    double pct_detected = 0.0;
    std::optional<double> pct_primary_win_given_conflict;  // undefined when nothing detected
    std::size_t n_prompts = 0;
    std::size_t n_degenerate = 0;
};

struct AggregateDlaReport {
    std::map<Framing, FramingAggregate> per_framing;
};

AggregateDlaReport aggregate_report(const std::vector<DlaResult>& results);

} // namespace hm
