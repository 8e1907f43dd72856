#pragma once

#include <cstdint>
#include <vector>

#include "hm/corpus.hpp"
#include "hm/model.hpp"

namespace hm {

struct ToyTrainHyperparams {
    double learning_rate = 1.5e-3;
    int steps = 3000;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

struct ToyTrainResult {
    WeightSet weights;
    double final_loss = 0.0;
    int steps_run = 0;
};

// Adam on next-token cross-entropy at the answer slot (winner symbol) and
// the following position (EOS). Weights start from init_model(config, seed);
// zero steps returns that initialization untouched. Deterministic per seed;
// single-threaded. Throws NumericalError with the step index on divergence.
ToyTrainResult train_toy_model(const ModelConfig& config,
                               const std::vector<ToyTaskExample>& corpus,
                               const ToyTrainHyperparams& hyperparams);

// fraction of examples whose greedy first predicted token equals the winner symbol
double winner_token_accuracy(const WeightSet& weights, const std::vector<ToyTaskExample>& examples);

// cross-entropy loss + parameter gradients on one batch; exposed for the
// finite-difference gradient check
struct ToyBatch {
    std::vector<std::vector<int>> inputs;            // token ids incl. answer token
    std::vector<std::vector<std::pair<std::size_t, int>>> targets;  // (position, target id)
};

ToyBatch make_training_batch(const std::vector<ToyTaskExample>& corpus,
                             const std::vector<std::size_t>& indices);

double toy_loss_and_grad(const WeightSet& weights, const ToyBatch& batch, WeightSet* grads);

} // namespace hm
