#include "hm/steering.hpp"

#include <algorithm>
#include <cmath>

#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/parallel.hpp"
#include "hm/rng.hpp"

namespace hm {

namespace ker = kernels;

std::string to_string(InterventionScope s) {
    return s == InterventionScope::first_token_only ? "first_token_only"
                                                    : "all_positions_from_t_star";
}

InterventionScope parse_intervention_scope(const std::string& s) {
    if (s == "first_token_only") return InterventionScope::first_token_only;
    if (s == "all_positions_from_t_star") return InterventionScope::all_positions_from_t_star;
    throw ConfigError("unknown intervention scope: '" + s + "'");
}

std::string to_string(SweepArm a) { return a == SweepArm::steer ? "steer" : "random_control"; }

Vec compute_mean_activation(const std::vector<ForwardTrace>& traces, int layer,
                            HookKind position) {
    if (traces.empty()) throw DataError("compute_mean_activation: empty trace subset");
    const std::size_t d = traces.front().hook(layer, position).cols;
    Vec mean(d, 0.0);
    for (const auto& trace : traces) {
        const Mat& acts = trace.hook(layer, position);
        ker::axpy(1.0, acts.row(trace.t_star()), mean.data(), d);
    }
    ker::scale(mean.data(), 1.0 / static_cast<double>(traces.size()), d);
    return mean;
}

Vec mean_activation_rows(const ActivationTable& table, const std::vector<std::size_t>& row_ids,
                         int layer, HookKind position) {
    if (row_ids.empty()) throw DataError("mean_activation_rows: empty row subset");
    const std::size_t pos_index = table.position_index(position);
    const auto d = static_cast<std::size_t>(table.d_model);
    Vec mean(d, 0.0);
    for (std::size_t r : row_ids) {
        ker::axpy(1.0, table.activation(r, layer, pos_index), mean.data(), d);
    }
    ker::scale(mean.data(), 1.0 / static_cast<double>(row_ids.size()), d);
    return mean;
}

SteeringVector build_steering_vector(const Vec& mu_a, const Vec& mu_b, int layer,
                                     HookKind position, const SteeringVector::Provenance& meta) {
    if (mu_a.size() != mu_b.size()) {
        throw DataError("build_steering_vector: dimension mismatch (" +
                        std::to_string(mu_a.size()) + " vs " + std::to_string(mu_b.size()) + ")");
    }
    SteeringVector sv;
    sv.vector.resize(mu_a.size());
    for (std::size_t i = 0; i < mu_a.size(); ++i) sv.vector[i] = mu_a[i] - mu_b[i];
    sv.layer = layer;
    sv.position = position;
    sv.norm = std::sqrt(ker::sumsq(sv.vector.data(), sv.vector.size()));
    sv.provenance = meta;
    return sv;
}

SteeringVector random_control(double norm, std::size_t dim, std::uint64_t seed, int layer,
                              HookKind position) {
    if (norm < 0.0) throw DataError("random_control: norm must be >= 0");
    SteeringVector sv;
    sv.vector.assign(dim, 0.0);
    sv.layer = layer;
    sv.position = position;
    sv.provenance.source_a = "random_control";
    sv.provenance.seed = seed;
    if (norm == 0.0 || dim == 0) {
        sv.norm = 0.0;
        return sv;
    }
    Rng rng(derive_seed(seed, 0xC7A1));
    double len = 0.0;
    while (len == 0.0) {
        for (double& x : sv.vector) x = rng.gaussian();
        len = std::sqrt(ker::sumsq(sv.vector.data(), dim));
    }
    ker::scale(sv.vector.data(), norm / len, dim);
    sv.norm = norm;
    return sv;
}

ActivationEdit make_edit(const SteeringVector& steering, const InterventionSpec& spec,
                         std::size_t t_star) {
    ActivationEdit edit;
    edit.layer = steering.layer;
    edit.kind = steering.position;
    edit.alpha = spec.alpha;
    edit.direction = steering.vector;
    edit.at_pos = t_star;
    edit.single_position = spec.scope == InterventionScope::first_token_only;
    return edit;
}

ComplianceMetrics compliance_metrics(const std::string& response_text, const ConflictPair& pair) {
    ComplianceMetrics m;
    m.word_count = count_words(response_text);
    m.sentence_count = count_sentences(response_text);
    const std::string& kw = pair.primary.keyword;
    if (!kw.empty()) m.keyword_count = count_keyword(response_text, kw);
    m.primary_satisfied = pair.primary.satisfied_by(response_text);
    m.secondary_satisfied = pair.secondary.satisfied_by(response_text);
    return m;
}

ComplianceMetrics compliance_metrics_toy(const std::vector<int>& generated, int primary_symbol,
                                         int secondary_symbol) {
    ComplianceMetrics m;
    if (!generated.empty()) m.first_symbol = generated.front();
    m.primary_satisfied = m.first_symbol == primary_symbol;
    m.secondary_satisfied = m.first_symbol == secondary_symbol;
    return m;
}

GenerationResult generate_with_intervention(const WeightSet& weights, const TokenSequence& prompt,
                                            const SteeringVector& steering,
                                            const InterventionSpec& spec,
                                            const GenerateOptions& options) {
    if (steering.layer < 0 || steering.layer >= weights.config.n_layers) {
        throw DataError("steering layer out of range");
    }
    prompt.validate(weights.config);
    const ActivationEdit edit = make_edit(steering, spec, prompt.length() - 1);
    const GenerateOutput gen = generate_greedy(weights, prompt, {edit}, options);
    GenerationResult result;
    result.tokens = gen.generated;
    result.truncated_by_time_limit = gen.truncated_by_time_limit;
    result.seconds = gen.seconds;
    return result;
}

SweepReport alpha_sweep(const WeightSet& weights, const SweepPrompt& order_a,
                        const SweepPrompt& order_b, std::vector<double> alphas,
                        const SteeringVector& steering, std::uint64_t control_seed,
                        InterventionScope scope, const GenerateOptions& options, int jobs) {
    if (alphas.empty()) throw ConfigError("alpha_sweep: alphas must be nonempty");
    std::sort(alphas.begin(), alphas.end());

    const SteeringVector control = random_control(steering.norm, steering.vector.size(),
                                                  control_seed, steering.layer, steering.position);

    struct Job {
        const SweepPrompt* prompt;
        double alpha;
        SweepArm arm;
    };
    std::vector<Job> grid;
    for (const SweepPrompt* prompt : {&order_a, &order_b}) {
        for (double alpha : alphas) {
            grid.push_back({prompt, alpha, SweepArm::steer});
            grid.push_back({prompt, alpha, SweepArm::random_control});
        }
    }

    SweepReport report;
    report.alphas = alphas;
    report.cells.resize(grid.size());
    parallel_for(grid.size(), jobs, [&](std::size_t i) {
        const Job& job = grid[i];
        InterventionSpec spec;
        spec.alpha = job.alpha;
        spec.scope = scope;
        const SteeringVector& arm_vec = job.arm == SweepArm::steer ? steering : control;
        GenerationResult result =
            generate_with_intervention(weights, job.prompt->tokens, arm_vec, spec, options);
        result.compliance = compliance_metrics_toy(result.tokens, job.prompt->primary_symbol,
                                                   job.prompt->secondary_symbol);
        SweepCell cell;
        cell.order_tag = job.prompt->order_tag;
        cell.alpha = job.alpha;
        cell.arm = job.arm;
        cell.result = std::move(result);
        report.cells[i] = std::move(cell);
    });
    for (const auto& cell : report.cells) {
        report.any_truncated = report.any_truncated || cell.result.truncated_by_time_limit;
    }
    return report;
}

} // namespace hm
