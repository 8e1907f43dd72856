#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hm/corpus.hpp"
#include "hm/model.hpp"
#include "hm/probes.hpp"
#include "hm/steering.hpp"
#include "hm/train.hpp"

#include "json.hpp"

namespace hm {

inline constexpr const char* kToolVersion = "0.1.0";

// Stage order of the full analysis pipeline.
inline const std::vector<std::string> kPipelineStages = {
    "train", "capture", "probes", "elbow", "similarity", "dla", "steering"};

struct ToyCorpusSpec {
    int n_examples = 0;
    std::uint64_t seed = 0;
    ToyPriorityRule rule;
    std::vector<std::pair<Framing, double>> framing_mix;
};

struct TextCorpusSpec {
    std::vector<ConstraintKind> kinds;
    int n_variations = 0;
    std::vector<Framing> framings;
    int task_count = 0;
    std::uint64_t seed = 0;
};

struct SteeringStageSpec {
    std::vector<double> alphas;
    std::uint64_t control_seed = 0;
    InterventionScope scope = InterventionScope::all_positions_from_t_star;
    std::string layer = "elbow";  // "elbow" or an integer
    HookKind position = HookKind::mlp_out;
    Framing source_a = Framing::consensus_majority_minority;
    Framing source_b = Framing::system_user;
    Framing eval_framing = Framing::system_user;
    int eval_symbol_a = 0;
    int eval_symbol_b = 1;
    int max_new_tokens = 4;
    double time_limit_seconds = 30.0;
};

struct PipelineConfig {
    std::string run_id;
    std::string out_dir = "runs";
    int jobs = 1;

    ModelConfig model;
    ToyCorpusSpec toy_corpus;
    ToyTrainHyperparams train;
    int train_count = 0;
    int eval_count = 0;
    int capture_count = 0;
    ProbeTrainOptions probes;
    SplitConfig probe_split;
    std::vector<HookKind> probe_positions;
    ElbowOptions elbow;
    HookKind similarity_position = HookKind::mlp_out;
    std::string similarity_layer = "elbow";
    int dla_count = 0;
    bool dla_fold_final_norm = true;
    int dla_per_head_dump = 0;
    SteeringStageSpec steering;
    TextCorpusSpec text_corpus;

    nlohmann::json snapshot;  // the raw config as loaded, for the manifest

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_file(const std::string& path);
    std::string run_dir() const { return out_dir + "/" + run_id; }
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct PipelineOutcome {
    std::vector<StageTiming> timings;
    std::vector<std::string> artifacts;
    bool time_limit_flag = false;
    std::string failed_stage;  // empty on success
    std::string failure_message;
};

// individual stages (file-based handoff inside config.run_dir())
void stage_train(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_capture(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_probes(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_elbow(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_similarity(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_dla(const PipelineConfig& config, PipelineOutcome& outcome);
void stage_steering(const PipelineConfig& config, PipelineOutcome& outcome);

// full pipeline (or the `only` subset, in canonical order); writes the
// manifest, recording the failed stage if one throws, then rethrows
PipelineOutcome run_pipeline(const PipelineConfig& config, const std::set<std::string>& only = {});

// text-corpus generation command
PipelineOutcome run_gen_corpus(const PipelineConfig& config);

// human-readable run summary; returns the process exit code contribution
void run_report(const std::string& out_dir, const std::string& run_id, std::ostream& out);

void write_manifest(const PipelineConfig& config, const std::string& command,
                    const PipelineOutcome& outcome);

} // namespace hm
