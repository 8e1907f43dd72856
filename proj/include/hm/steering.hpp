#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hm/checkpoint.hpp"
#include "hm/corpus.hpp"
#include "hm/model.hpp"

namespace hm {

struct SteeringVector {
    Vec vector;
    int layer = 0;
    HookKind position = HookKind::mlp_out;
    double norm = 0.0;  // recorded L2 norm of vector
    struct Provenance {
        std::string source_a = "";
        std::string source_b = "";
        std::size_t n_a = 0;
        std::size_t n_b = 0;
        std::uint64_t seed = 0;
    } provenance;
};

// arithmetic mean of the t* activation over a trace subset
Vec compute_mean_activation(const std::vector<ForwardTrace>& traces, int layer, HookKind position);
// same over rows of a capture table
Vec mean_activation_rows(const ActivationTable& table, const std::vector<std::size_t>& row_ids,
                         int layer, HookKind position);

SteeringVector build_steering_vector(const Vec& mu_a, const Vec& mu_b, int layer,
                                     HookKind position, const SteeringVector::Provenance& meta);

// isotropic random direction scaled to `norm`; deterministic per seed
SteeringVector random_control(double norm, std::size_t dim, std::uint64_t seed, int layer,
                              HookKind position);

enum class InterventionScope { first_token_only, all_positions_from_t_star };

std::string to_string(InterventionScope s);
InterventionScope parse_intervention_scope(const std::string& s);

struct InterventionSpec {
    double alpha = 0.0;
    InterventionScope scope = InterventionScope::all_positions_from_t_star;
    // target layer/position come from the steering vector
};

ActivationEdit make_edit(const SteeringVector& steering, const InterventionSpec& spec,
                         std::size_t t_star);

struct ComplianceMetrics {
    int word_count = -1;
    int sentence_count = -1;
    int keyword_count = -1;
    int first_symbol = -1;  // toy runs: the emitted answer symbol
    bool primary_satisfied = false;
    bool secondary_satisfied = false;
};

// text responses, using the corpus module's checkers
ComplianceMetrics compliance_metrics(const std::string& response_text, const ConflictPair& pair);
// toy runs: the first generated token against the prompt's symbols
ComplianceMetrics compliance_metrics_toy(const std::vector<int>& generated, int primary_symbol,
                                         int secondary_symbol);

struct GenerationResult {
    std::uint64_t prompt_id = 0;
    std::vector<int> tokens;
    ComplianceMetrics compliance;
    bool truncated_by_time_limit = false;
    double seconds = 0.0;
};

GenerationResult generate_with_intervention(const WeightSet& weights, const TokenSequence& prompt,
                                            const SteeringVector& steering,
                                            const InterventionSpec& spec,
                                            const GenerateOptions& options);

enum class SweepArm { steer, random_control };

std::string to_string(SweepArm a);

struct SweepPrompt {
    TokenSequence tokens;
    int primary_symbol = -1;
    int secondary_symbol = -1;
    std::string order_tag;  // e.g. "sys_first" / "roles_reversed"
};

struct SweepCell {
    std::string order_tag;
    double alpha = 0.0;
    SweepArm arm = SweepArm::steer;
    GenerationResult result;
};

struct SweepReport {
    std::vector<double> alphas;  // sorted ascending
    std::vector<SweepCell> cells;
    bool any_truncated = false;
};

// Runs steer + norm-matched random-control arms for every alpha on both
// prompt orders; greedy decoding throughout.
SweepReport alpha_sweep(const WeightSet& weights, const SweepPrompt& order_a,
                        const SweepPrompt& order_b, std::vector<double> alphas,
                        const SteeringVector& steering, std::uint64_t control_seed,
                        InterventionScope scope, const GenerateOptions& options, int jobs = 1);

} // namespace hm
