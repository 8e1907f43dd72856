#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hm/corpus.hpp"
#include "hm/model.hpp"

namespace hm {

struct ActivationDataset {
    Mat x;                            // n_samples x d_model
    std::vector<DecisionLabel> y;     // n_samples
    std::vector<Framing> framing;     // per-sample stratification key (may be empty)
    int layer = -1;
    HookKind position = HookKind::resid_post;
    std::string framing_tag = "all";  // which framing subset this dataset holds

    std::size_t n() const { return x.rows; }
    std::size_t d() const { return x.cols; }
    int n_classes_present() const;
};

ActivationDataset collect_activations(const std::vector<ForwardTrace>& traces,
                                      const std::vector<DecisionLabel>& labels, int layer,
                                      HookKind position,
                                      const std::vector<Framing>& framings = {});

// Multinomial logistic-regression probe: scores = softmax(W h + b).
struct ProbeModel {
    Mat w;  // 3 x d_model
    Vec b;  // 3
    int layer = -1;
    HookKind position = HookKind::resid_post;
    std::string framing_tag = "all";
};

struct ProbeTrainOptions {
    double l2_strength = 1e-3;
    int max_iters = 1000;
    double tol = 1e-6;
    std::uint64_t seed = 0;  // reserved; zero-init training is deterministic without it
};

// Full-batch gradient descent with Armijo backtracking on the L2-regularized
// multinomial cross-entropy; the loss is non-increasing per iteration.
ProbeModel train_probe(const ActivationDataset& data, const ProbeTrainOptions& options);

// class-probability scores for a batch of activations
Mat probe_scores(const ProbeModel& probe, const Mat& x);

// regularized loss and gradient at (w, b); exposed for the finite-difference check
double probe_loss_and_grad(const Mat& x, const std::vector<DecisionLabel>& y, const Mat& w,
                           const Vec& b, double l2_strength, Mat* grad_w, Vec* grad_b);

// One-vs-rest micro-averaged AUC: pool every (sample, class) pair's score
// with its indicator and rank with midrank tie handling.
double micro_auc_from_scores(const Mat& scores, const std::vector<DecisionLabel>& labels);
double eval_micro_auc(const ProbeModel& probe, const ActivationDataset& test);

struct SplitConfig {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct TrainTestSplit {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
};

// Stratified by (label, framing) within the dataset.
TrainTestSplit stratified_split(const ActivationDataset& data, const SplitConfig& split);

struct ProbeReportEntry {
    int layer;
    HookKind position;
    std::string framing_tag;
    double auc;
    std::size_t n_train;
    std::size_t n_test;
    std::uint64_t split_seed;
};

struct ProbeReport {
    std::vector<ProbeReportEntry> entries;

    double auc_at(int layer, HookKind position) const;  // throws DataError if absent
};

ProbeReport probe_sweep(const std::vector<ForwardTrace>& traces,
                        const std::vector<DecisionLabel>& labels,
                        const std::vector<Framing>& framings,
                        const std::vector<int>& layer_list,
                        const std::vector<HookKind>& positions, const SplitConfig& split,
                        const ProbeTrainOptions& options, int jobs = 1);

// same sweep over a pre-collected activation table (the capture artifact)
struct ActivationTable;
ProbeReport probe_sweep_table(const ActivationTable& table, const std::vector<int>& layer_list,
                              const std::vector<HookKind>& positions, const SplitConfig& split,
                              const ProbeTrainOptions& options, int jobs = 1);

struct SimilarityMatrix {
    DecisionLabel class_label = DecisionLabel::primary;
    std::vector<std::string> framing_order;
    Mat entries;  // k x k, exactly symmetric, unit diagonal
};

SimilarityMatrix weight_cosine_similarity(
    const std::vector<std::pair<std::string, ProbeModel>>& probes_by_framing,
    DecisionLabel class_label);

struct ElbowOptions {
    int smoothing_window = 3;
    double slope_fraction = 0.25;
    int confirm_window = 3;
};

// Elbow of a layerwise metric curve: smooth with a centered moving
// average, find the peak, then the earliest rising-phase layer whose
// slope drops below slope_fraction * max slope with a non-increasing
// confirmation window; falls back to peak - 1.
int find_elbow(const std::vector<double>& curve, const ElbowOptions& options);

} // namespace hm
