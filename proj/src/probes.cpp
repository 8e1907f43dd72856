#include "hm/probes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hm/checkpoint.hpp"
#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/parallel.hpp"
#include "hm/rng.hpp"

namespace hm {

namespace ker = kernels;

namespace {
constexpr std::size_t kNumClasses = 3;

std::size_t label_index(DecisionLabel l) { return static_cast<std::size_t>(l); }
} // namespace

int ActivationDataset::n_classes_present() const {
    bool seen[kNumClasses] = {false, false, false};
    for (DecisionLabel l : y) seen[label_index(l)] = true;
    return static_cast<int>(seen[0]) + static_cast<int>(seen[1]) + static_cast<int>(seen[2]);
}

ActivationDataset collect_activations(const std::vector<ForwardTrace>& traces,
                                      const std::vector<DecisionLabel>& labels, int layer,
                                      HookKind position, const std::vector<Framing>& framings) {
    if (traces.size() != labels.size()) {
        throw DataError("collect_activations: trace/label count mismatch");
    }
    if (!framings.empty() && framings.size() != traces.size()) {
        throw DataError("collect_activations: trace/framing count mismatch");
    }
    ActivationDataset ds;
    ds.layer = layer;
    ds.position = position;
    ds.y = labels;
    ds.framing = framings;
    if (traces.empty()) return ds;

    const std::size_t d = static_cast<std::size_t>(traces.front().config.d_model);
    ds.x = Mat(traces.size(), d);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const Mat& acts = traces[i].hook(layer, position);  // throws naming (layer, position)
        const double* row = acts.row(traces[i].t_star());
        std::copy(row, row + d, ds.x.row(i));
    }
    return ds;
}

Mat probe_scores(const ProbeModel& probe, const Mat& x) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    if (probe.w.cols != d) throw DataError("probe dimension mismatch");
    Mat scores(n, kNumClasses);
    ker::gemm_nt(scores.data.data(), x.data.data(), probe.w.data.data(), n, d, kNumClasses);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = scores.row(i);
        for (std::size_t c = 0; c < kNumClasses; ++c) row[c] += probe.b[c];
        ker::softmax_inplace(row, kNumClasses);
    }
    return scores;
}

double probe_loss_and_grad(const Mat& x, const std::vector<DecisionLabel>& y, const Mat& w,
                           const Vec& b, double l2_strength, Mat* grad_w, Vec* grad_b) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    if (grad_w != nullptr) {
        *grad_w = Mat(kNumClasses, d);
        grad_b->assign(kNumClasses, 0.0);
    }
    Mat z(n, kNumClasses);
    ker::gemm_nt(z.data.data(), x.data.data(), w.data.data(), n, d, kNumClasses);

    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = z.row(i);
        for (std::size_t c = 0; c < kNumClasses; ++c) row[c] += b[c];
        ker::softmax_inplace(row, kNumClasses);
        const double p = row[label_index(y[i])];
        loss -= std::log(std::max(p, 1e-300)) * inv_n;
        if (grad_w != nullptr) {
            row[label_index(y[i])] -= 1.0;
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                const double g = row[c] * inv_n;
                ker::axpy(g, x.row(i), grad_w->row(c), d);
                (*grad_b)[c] += g;
            }
        }
    }
    loss += 0.5 * l2_strength * ker::sumsq(w.data.data(), w.size());
    if (grad_w != nullptr) {
        ker::axpy(l2_strength, w.data.data(), grad_w->data.data(), w.size());
    }
    return loss;
}

ProbeModel train_probe(const ActivationDataset& data, const ProbeTrainOptions& options) {
    if (data.n() < 10) throw DataError("train_probe: need at least 10 samples");
    if (data.n_classes_present() < 2) throw DataError("train_probe: single-class data");
    if (!all_finite(data.x)) throw DataError("train_probe: non-finite activations");

    const std::size_t d = data.d();
    ProbeModel probe;
    probe.layer = data.layer;
    probe.position = data.position;
    probe.framing_tag = data.framing_tag;
    probe.w = Mat(kNumClasses, d);
    probe.b.assign(kNumClasses, 0.0);

    Mat grad_w;
    Vec grad_b;
    double loss = probe_loss_and_grad(data.x, data.y, probe.w, probe.b, options.l2_strength,
                                      &grad_w, &grad_b);
    const double armijo_c = 1e-4;
    double step = 1.0;

    for (int iter = 0; iter < options.max_iters; ++iter) {
        if (!std::isfinite(loss)) throw NumericalError("train_probe: loss is not finite");
        const double grad_sq =
            ker::sumsq(grad_w.data.data(), grad_w.size()) + ker::sumsq(grad_b.data(), grad_b.size());
        if (std::sqrt(grad_sq) <= options.tol) break;

        // backtracking line search along the negative gradient
        step = std::min(step * 2.0, 1.0e4);
        Mat w_next;
        Vec b_next;
        double next_loss = 0.0;
        bool accepted = false;
        for (int halvings = 0; halvings < 60; ++halvings) {
            w_next = probe.w;
            b_next = probe.b;
            ker::axpy(-step, grad_w.data.data(), w_next.data.data(), w_next.size());
            ker::axpy(-step, grad_b.data(), b_next.data(), b_next.size());
            next_loss = probe_loss_and_grad(data.x, data.y, w_next, b_next, options.l2_strength,
                                            nullptr, nullptr);
            if (std::isfinite(next_loss) && next_loss <= loss - armijo_c * step * grad_sq) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // gradient too flat to make progress
        probe.w = std::move(w_next);
        probe.b = std::move(b_next);
        loss = probe_loss_and_grad(data.x, data.y, probe.w, probe.b, options.l2_strength, &grad_w,
                                   &grad_b);
    }
    return probe;
}

double micro_auc_from_scores(const Mat& scores, const std::vector<DecisionLabel>& labels) {
    if (scores.rows == 0 || scores.rows != labels.size()) {
        throw DataError("micro_auc: empty or mismatched scores/labels");
    }
    bool seen[kNumClasses] = {false, false, false};
    for (DecisionLabel l : labels) seen[label_index(l)] = true;
    if (static_cast<int>(seen[0]) + static_cast<int>(seen[1]) + static_cast<int>(seen[2]) < 2) {
        throw NumericalError("micro-AUC undefined on a single-class test set");
    }

    // pool every (sample, class) score with its one-vs-rest indicator
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> pool;
    pool.reserve(scores.rows * kNumClasses);
    for (std::size_t i = 0; i < scores.rows; ++i) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            pool.push_back({scores.at(i, c), label_index(labels[i]) == c});
        }
    }
    std::sort(pool.begin(), pool.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // midrank tie handling
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < pool.size()) {
        std::size_t j = i;
        while (j < pool.size() && pool[j].score == pool[i].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (pool[k].positive) {
                rank_sum_pos += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = pool.size() - n_pos;
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double eval_micro_auc(const ProbeModel& probe, const ActivationDataset& test) {
    if (test.n() == 0) throw DataError("eval_micro_auc: empty test set");
    return micro_auc_from_scores(probe_scores(probe, test.x), test.y);
}

TrainTestSplit stratified_split(const ActivationDataset& data, const SplitConfig& split) {
    if (split.train_fraction <= 0.0 || split.train_fraction >= 1.0) {
        throw ConfigError("train_fraction must be in (0, 1)");
    }
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < data.n(); ++i) {
        const int f = data.framing.empty() ? 0 : static_cast<int>(data.framing[i]);
        strata[{static_cast<int>(data.y[i]), f}].push_back(i);
    }
    TrainTestSplit out;
    for (auto& [key, idx] : strata) {
        Rng rng(derive_seed(split.seed,
                            static_cast<std::uint64_t>(key.first) * 131 +
                                static_cast<std::uint64_t>(key.second)));
        rng.shuffle(idx);
        const std::size_t n_train =
            static_cast<std::size_t>(std::floor(split.train_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < n_train ? out.train_idx : out.test_idx).push_back(idx[i]);
        }
    }
    std::sort(out.train_idx.begin(), out.train_idx.end());
    std::sort(out.test_idx.begin(), out.test_idx.end());
    return out;
}

namespace {

ActivationDataset subset(const ActivationDataset& data, const std::vector<std::size_t>& idx) {
    ActivationDataset out;
    out.layer = data.layer;
    out.position = data.position;
    out.framing_tag = data.framing_tag;
    out.x = Mat(idx.size(), data.d());
    out.y.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(data.x.row(idx[i]), data.x.row(idx[i]) + data.d(), out.x.row(i));
        out.y.push_back(data.y[idx[i]]);
        if (!data.framing.empty()) out.framing.push_back(data.framing[idx[i]]);
    }
    return out;
}

ProbeReportEntry sweep_one(const ActivationDataset& ds, const SplitConfig& split,
                           const ProbeTrainOptions& options) {
    const TrainTestSplit parts = stratified_split(ds, split);
    const ActivationDataset train = subset(ds, parts.train_idx);
    const ActivationDataset test = subset(ds, parts.test_idx);
    const ProbeModel probe = train_probe(train, options);
    ProbeReportEntry entry;
    entry.layer = ds.layer;
    entry.position = ds.position;
    entry.framing_tag = ds.framing_tag;
    entry.auc = eval_micro_auc(probe, test);
    entry.n_train = train.n();
    entry.n_test = test.n();
    entry.split_seed = split.seed;
    return entry;
}

} // namespace

double ProbeReport::auc_at(int layer, HookKind position) const {
    for (const auto& e : entries) {
        if (e.layer == layer && e.position == position) return e.auc;
    }
    throw DataError("probe report has no entry for layer " + std::to_string(layer) + " " +
                    to_string(position));
}

ProbeReport probe_sweep(const std::vector<ForwardTrace>& traces,
                        const std::vector<DecisionLabel>& labels,
                        const std::vector<Framing>& framings, const std::vector<int>& layer_list,
                        const std::vector<HookKind>& positions, const SplitConfig& split,
                        const ProbeTrainOptions& options, int jobs) {
    std::vector<std::pair<int, HookKind>> combos;
    for (int l : layer_list) {
        for (HookKind p : positions) combos.emplace_back(l, p);
    }
    ProbeReport report;
    report.entries.resize(combos.size());
    parallel_for(combos.size(), jobs, [&](std::size_t i) {
        const ActivationDataset ds =
            collect_activations(traces, labels, combos[i].first, combos[i].second, framings);
        report.entries[i] = sweep_one(ds, split, options);
    });
    return report;
}

ProbeReport probe_sweep_table(const ActivationTable& table, const std::vector<int>& layer_list,
                              const std::vector<HookKind>& positions, const SplitConfig& split,
                              const ProbeTrainOptions& options, int jobs) {
    std::vector<std::pair<int, HookKind>> combos;
    for (int l : layer_list) {
        for (HookKind p : positions) combos.emplace_back(l, p);
    }
    ProbeReport report;
    report.entries.resize(combos.size());
    parallel_for(combos.size(), jobs, [&](std::size_t i) {
        const auto [layer, position] = combos[i];
        const std::size_t pos_index = table.position_index(position);
        ActivationDataset ds;
        ds.layer = layer;
        ds.position = position;
        ds.x = Mat(table.n_prompts(), static_cast<std::size_t>(table.d_model));
        ds.y.reserve(table.n_prompts());
        ds.framing.reserve(table.n_prompts());
        for (std::size_t r = 0; r < table.n_prompts(); ++r) {
            const double* src = table.activation(r, layer, pos_index);
            std::copy(src, src + table.d_model, ds.x.row(r));
            ds.y.push_back(static_cast<DecisionLabel>(table.labels[r]));
            ds.framing.push_back(parse_framing(table.framings[r]));
        }
        report.entries[i] = sweep_one(ds, split, options);
    });
    return report;
}

SimilarityMatrix weight_cosine_similarity(
    const std::vector<std::pair<std::string, ProbeModel>>& probes_by_framing,
    DecisionLabel class_label) {
    if (probes_by_framing.empty()) throw DataError("weight_cosine_similarity: no probes");
    const std::size_t k = probes_by_framing.size();
    const std::size_t d = probes_by_framing.front().second.w.cols;
    const int layer = probes_by_framing.front().second.layer;
    const HookKind position = probes_by_framing.front().second.position;

    std::vector<Vec> unit_rows(k);
    SimilarityMatrix sim;
    sim.class_label = class_label;
    sim.entries = Mat(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        const ProbeModel& probe = probes_by_framing[i].second;
        if (probe.w.cols != d || probe.layer != layer || probe.position != position) {
            throw DataError("weight_cosine_similarity: probes disagree on (layer, position, d)");
        }
        const double* row = probe.w.row(static_cast<std::size_t>(class_label));
        const double norm = std::sqrt(ker::sumsq(row, d));
        if (norm == 0.0) {
            throw NumericalError("weight_cosine_similarity: zero-norm weight row for framing " +
                                 probes_by_framing[i].first);
        }
        unit_rows[i].assign(row, row + d);
        ker::scale(unit_rows[i].data(), 1.0 / norm, d);
        sim.framing_order.push_back(probes_by_framing[i].first);
    }
    for (std::size_t i = 0; i < k; ++i) {
        sim.entries.at(i, i) = 1.0;  // cos(v, v) is identically 1
        for (std::size_t j = i + 1; j < k; ++j) {
            const double c = ker::dot(unit_rows[i].data(), unit_rows[j].data(), d);
            sim.entries.at(i, j) = c;
            sim.entries.at(j, i) = c;  // mirrored, exactly symmetric
        }
    }
    return sim;
}

int find_elbow(const std::vector<double>& curve, const ElbowOptions& options) {
    const std::size_t n = curve.size();
    if (n < 3) throw ConfigError("find_elbow: curve must have at least 3 points");
    if (options.smoothing_window < 1 || options.confirm_window < 0) {
        throw ConfigError("find_elbow: invalid windows");
    }
    if (static_cast<std::size_t>(options.smoothing_window) > n ||
        static_cast<std::size_t>(options.confirm_window) > n) {
        throw ConfigError("find_elbow: curve shorter than windows");
    }

    // centered moving average, truncated at the edges
    const std::size_t hw = static_cast<std::size_t>((options.smoothing_window - 1) / 2);
    std::vector<double> smoothed(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= hw ? i - hw : 0;
        const std::size_t hi = std::min(n - 1, i + hw);
        double acc = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) acc += curve[j];
        smoothed[i] = acc / static_cast<double>(hi - lo + 1);
    }

    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (smoothed[i] > smoothed[peak]) peak = i;
    }
    if (peak == 0) return 0;

    std::vector<double> slope(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) slope[i] = smoothed[i + 1] - smoothed[i];

    double max_rise = slope[0];
    for (std::size_t i = 1; i < peak; ++i) max_rise = std::max(max_rise, slope[i]);
    const double threshold = options.slope_fraction * max_rise;

    double scale = 0.0;
    for (double v : smoothed) scale = std::max(scale, std::fabs(v));
    const double eps = 1e-12 * scale;

    for (std::size_t i = 0; i < peak; ++i) {
        if (slope[i] >= threshold) continue;
        // confirmation: the following window's average slope is non-increasing
        const std::size_t lo = i + 1;
        const std::size_t hi = std::min(i + static_cast<std::size_t>(options.confirm_window),
                                        peak - 1);
        bool confirmed = true;
        if (options.confirm_window > 0 && lo <= hi) {
            double avg = 0.0;
            for (std::size_t j = lo; j <= hi; ++j) avg += slope[j];
            avg /= static_cast<double>(hi - lo + 1);
            confirmed = avg <= slope[i] + eps;
        }
        if (confirmed) return static_cast<int>(i);
    }
    return static_cast<int>(peak - 1);
}

} // namespace hm
