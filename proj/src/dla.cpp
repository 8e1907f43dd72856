#include "hm/dla.hpp"

#include <cmath>

#include "hm/errors.hpp"
#include "hm/kernels.hpp"

namespace hm {

namespace ker = kernels;

Vec unembed_direction(const WeightSet& weights, const ForwardTrace& trace, std::size_t p, int y,
                      const DlaOptions& options) {
    const auto d = static_cast<std::size_t>(weights.config.d_model);
    if (y < 0 || y >= weights.config.vocab_size) throw DataError("target token out of vocab");
    Vec w(d);
    for (std::size_t r = 0; r < d; ++r) w[r] = weights.unembedding.at(r, static_cast<std::size_t>(y));
    if (!options.fold_final_norm) return w;

    if (p >= trace.final_norm_scale.size()) throw DataError("target position out of range");
    for (std::size_t r = 0; r < d; ++r) w[r] *= weights.final_norm_gain[r];
    if (weights.config.norm_kind == NormKind::layer) {
        // layer norm centers its input; folding the centering keeps
        // <w, contribution> an exact linear piece of the logit
        const double mean = ker::sum(w.data(), d) / static_cast<double>(d);
        for (std::size_t r = 0; r < d; ++r) w[r] -= mean;
    }
    ker::scale(w.data(), 1.0 / trace.final_norm_scale[p], d);
    return w;
}

namespace {

// W_O^{(h)} w : the head's output projection applied to the unembed direction
Vec head_out_direction(const WeightSet& weights, int layer, int head, const Vec& w) {
    const auto dh = static_cast<std::size_t>(weights.config.d_head);
    const auto d = static_cast<std::size_t>(weights.config.d_model);
    const Mat& w_o = weights.layers[static_cast<std::size_t>(layer)].w_o;
    Vec ow(dh);
    const std::size_t base = static_cast<std::size_t>(head) * dh;
    for (std::size_t r = 0; r < dh; ++r) ow[r] = ker::dot(w_o.row(base + r), w.data(), d);
    return ow;
}

void check_target(const ForwardTrace& trace, std::size_t p) {
    if (p >= trace.n_tokens) throw DataError("target position out of range");
}

} // namespace

double head_token_contribution(const ForwardTrace& trace, const WeightSet& weights, int layer,
                               int head, std::size_t t, std::size_t p, int y,
                               const DlaOptions& options) {
    check_target(trace, p);
    if (t > p) {
        throw DataError("causality violation: source token " + std::to_string(t) +
                        " is after target position " + std::to_string(p));
    }
    if (head < 0 || head >= weights.config.n_heads) throw DataError("head index out of range");
    const Mat& pattern = trace.pattern(layer, head);  // throws capture error when missing
    const Mat& v = trace.value_mat(layer, head);
    const Vec w = unembed_direction(weights, trace, p, y, options);
    const Vec ow = head_out_direction(weights, layer, head, w);
    return pattern.at(p, t) * ker::dot(v.row(t), ow.data(), ow.size());
}

ShareMetrics share_metrics(double c_a, double c_b, double degenerate_rel_tol) {
    ShareMetrics out;
    const double denom = c_a + c_b;
    const double scale = std::max({std::fabs(c_a), std::fabs(c_b), 1.0});
    if (std::fabs(denom) <= degenerate_rel_tol * scale) {
        out.degenerate = true;
        return out;
    }
    out.s_a = c_a / denom;
    out.s_b = 1.0 - out.s_a;  // algebraically c_b / denom; exact share identity
    return out;
}

DlaFlags classify_conflict(const DlaResult& result) {
    if (result.degenerate) {
        throw DataError("classify_conflict: degenerate result (|c_a + c_b| below tolerance)");
    }
    DlaFlags flags;
    flags.primary_geq = result.s_a >= result.s_b;
    flags.detected = (result.s_a > 0.0 && result.s_b < 0.0) || (result.s_a < 0.0 && result.s_b > 0.0);
    flags.primary_win_conflict = result.s_a > 0.0 && result.s_b < 0.0;
    return flags;
}

DlaResult dla_full(const ForwardTrace& trace, const WeightSet& weights,
                   const std::vector<TokenSpan>& spans_a, const std::vector<TokenSpan>& spans_b,
                   const DlaOptions& options, SpanAttribution* attribution) {
    const std::size_t p = trace.t_star();
    const int y = predict_first_token(trace);
    const auto nh = static_cast<std::size_t>(weights.config.n_heads);
    const auto n_layers = static_cast<std::size_t>(weights.config.n_layers);

    // span hygiene: in range, internally disjoint, mutually disjoint
    auto check_spans = [&](const std::vector<TokenSpan>& spans) {
        for (const auto& s : spans) {
            if (s.begin >= s.end || s.end > trace.n_tokens) {
                throw DataError("constraint span out of range");
            }
        }
    };
    check_spans(spans_a);
    check_spans(spans_b);
    for (const auto& a : spans_a) {
        for (const auto& b : spans_b) {
            if (a.overlaps(b)) throw DataError("constraint spans overlap");
        }
    }

    const Vec w = unembed_direction(weights, trace, p, y, options);

    if (attribution != nullptr) {
        attribution->target_pos = p;
        attribution->target_token = y;
        attribution->scores.assign(n_layers, Mat());
    }

    double c_a = 0.0, c_b = 0.0;
    auto in_spans = [](const std::vector<TokenSpan>& spans, std::size_t t) {
        for (const auto& s : spans) {
            if (t >= s.begin && t < s.end) return true;
        }
        return false;
    };

    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        Mat* score_mat = nullptr;
        if (attribution != nullptr) {
            attribution->scores[layer] = Mat(nh, p + 1);
            score_mat = &attribution->scores[layer];
        }
        for (std::size_t h = 0; h < nh; ++h) {
            const Mat& pattern = trace.pattern(static_cast<int>(layer), static_cast<int>(h));
            const Mat& v = trace.value_mat(static_cast<int>(layer), static_cast<int>(h));
            const Vec ow = head_out_direction(weights, static_cast<int>(layer),
                                              static_cast<int>(h), w);
            for (std::size_t t = 0; t <= p; ++t) {
                const double score = pattern.at(p, t) * ker::dot(v.row(t), ow.data(), ow.size());
                if (score_mat != nullptr) score_mat->at(h, t) = score;
                if (in_spans(spans_a, t)) {
                    c_a += score;
                } else if (in_spans(spans_b, t)) {
                    c_b += score;
                }
            }
        }
    }

    DlaResult result;
    result.c_a = c_a;
    result.c_b = c_b;
    const ShareMetrics shares = share_metrics(c_a, c_b, options.degenerate_rel_tol);
    result.degenerate = shares.degenerate;
    if (!result.degenerate) {
        result.s_a = shares.s_a;
        result.s_b = shares.s_b;
        result.flags = classify_conflict(result);
    }
    return result;
}

double SpanAttribution::total() const {
    double acc = 0.0;
    for (const Mat& m : scores) acc += kernels::sum(m.data.data(), m.size());
    return acc;
}

std::vector<double> attention_completeness_errors(const ForwardTrace& trace,
                                                  const WeightSet& weights, std::size_t p) {
    check_target(trace, p);
    const auto d = static_cast<std::size_t>(weights.config.d_model);
    const auto dh = static_cast<std::size_t>(weights.config.d_head);
    const auto nh = static_cast<std::size_t>(weights.config.n_heads);

    std::vector<double> errors;
    errors.reserve(static_cast<std::size_t>(weights.config.n_layers));
    Vec reconstructed(d), mixed(dh);
    for (int layer = 0; layer < weights.config.n_layers; ++layer) {
        std::fill(reconstructed.begin(), reconstructed.end(), 0.0);
        const Mat& w_o = weights.layers[static_cast<std::size_t>(layer)].w_o;
        for (std::size_t h = 0; h < nh; ++h) {
            const Mat& pattern = trace.pattern(layer, static_cast<int>(h));
            const Mat& v = trace.value_mat(layer, static_cast<int>(h));
            std::fill(mixed.begin(), mixed.end(), 0.0);
            for (std::size_t t = 0; t <= p; ++t) {
                ker::axpy(pattern.at(p, t), v.row(t), mixed.data(), dh);
            }
            // mixed (1 x dh) through the head rows of W_O
            for (std::size_t r = 0; r < dh; ++r) {
                ker::axpy(mixed[r], w_o.row(h * dh + r), reconstructed.data(), d);
            }
        }
        const Mat& recorded = trace.hook(layer, HookKind::attn_out);
        double diff_sq = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = reconstructed[c] - recorded.at(p, c);
            diff_sq += diff * diff;
        }
        const double ref = std::sqrt(ker::sumsq(recorded.row(p), d));
        errors.push_back(std::sqrt(diff_sq) / std::max(ref, 1e-300));
    }
    return errors;
}

AggregateDlaReport aggregate_report(const std::vector<DlaResult>& results) {
    if (results.empty()) throw DataError("aggregate_report: no results");
    std::map<Framing, std::vector<const DlaResult*>> grouped;
    for (const auto& r : results) grouped[r.framing].push_back(&r);

    AggregateDlaReport report;
    for (const auto& [framing, group] : grouped) {
        FramingAggregate agg;
        agg.n_prompts = group.size();
        std::size_t n_valid = 0, n_geq = 0, n_detected = 0, n_win = 0;
        for (const DlaResult* r : group) {
            if (r->degenerate) {
                ++agg.n_degenerate;
                continue;
            }
            ++n_valid;
            if (r->flags.primary_geq) ++n_geq;
            if (r->flags.detected) ++n_detected;
            if (r->flags.primary_win_conflict) ++n_win;
        }
        if (n_valid == 0) {
            throw DataError("aggregate_report: all results degenerate for framing " +
                            to_string(framing));
        }
        agg.pct_primary_geq = 100.0 * static_cast<double>(n_geq) / static_cast<double>(n_valid);
        agg.pct_detected = 100.0 * static_cast<double>(n_detected) / static_cast<double>(n_valid);
        if (n_detected > 0) {
            agg.pct_primary_win_given_conflict =
                100.0 * static_cast<double>(n_win) / static_cast<double>(n_detected);
        }
        report.per_framing[framing] = agg;
    }
    return report;
}

} // namespace hm
