// hiermech: conflict-prompt corpora, linear probes, direct logit
// attribution and activation steering on a small hooked transformer.

#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/pipeline.hpp"
#include "hm/rng.hpp"

namespace {

struct GlobalOptions {
    std::string config_path;
    std::string out_override;
    int jobs_override = -1;
    std::string backend;
    bool has_seed_override = false;
    std::uint64_t seed_override = 0;
    bool allow_seed_override = false;
};

hm::PipelineConfig load_config(const GlobalOptions& opts) {
    if (opts.config_path.empty()) throw hm::ConfigError("--config is required");
    hm::PipelineConfig config = hm::PipelineConfig::from_file(opts.config_path);
    if (opts.has_seed_override) {
        if (!opts.allow_seed_override) {
            throw hm::ConfigError("--seed-override is refused unless --allow-seed-override is set");
        }
        // rewrite every declared seed, deterministically derived from the override
        nlohmann::json j = config.snapshot;
        std::uint64_t stream = 0;
        for (const char* section : {"toy_corpus", "train", "probes", "steering", "text_corpus"}) {
            if (!j.contains(section)) continue;
            auto& s = j[section];
            if (s.contains("seed")) s["seed"] = hm::derive_seed(opts.seed_override, stream++);
            if (s.contains("split_seed")) {
                s["split_seed"] = hm::derive_seed(opts.seed_override, stream++);
            }
            if (s.contains("control_seed")) {
                s["control_seed"] = hm::derive_seed(opts.seed_override, stream++);
            }
        }
        config = hm::PipelineConfig::from_json(j);
    }
    if (!opts.out_override.empty()) config.out_dir = opts.out_override;
    if (opts.jobs_override > 0) config.jobs = opts.jobs_override;
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hiermech: instruction-hierarchy conflict analysis at desk scale"};
    app.require_subcommand(1);

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "pipeline config JSON");
    app.add_option("--out", opts.out_override, "override the output directory");
    app.add_option("--jobs", opts.jobs_override, "worker threads for parallel stages");
    app.add_option("--backend", opts.backend, "kernel backend: scalar | avx2");
    auto* seed_opt = app.add_option("--seed-override", opts.seed_override,
                                    "override all config seeds (needs --allow-seed-override)");
    app.add_flag("--allow-seed-override", opts.allow_seed_override,
                 "permit --seed-override to rewrite config seeds");

    std::string only_arg;
    std::string report_run_id;
    std::string report_out = "runs";

    CLI::App* cmd_gen = app.add_subcommand("gen-corpus", "generate the conflict-prompt corpus");
    CLI::App* cmd_train = app.add_subcommand("train-toy", "train the toy conflict model");
    CLI::App* cmd_capture = app.add_subcommand("capture", "capture hook activations at t*");
    CLI::App* cmd_probes = app.add_subcommand("probe-sweep", "train/evaluate probes per (layer, position)");
    CLI::App* cmd_similarity = app.add_subcommand("similarity", "probe-weight cosine similarity across framings");
    CLI::App* cmd_elbow = app.add_subcommand("elbow", "elbow layer selection from the AUC curves");
    CLI::App* cmd_dla = app.add_subcommand("dla", "direct logit attribution over constraint spans");
    CLI::App* cmd_steer = app.add_subcommand("steer-sweep", "alpha sweep with steering + random control");
    CLI::App* cmd_pipeline = app.add_subcommand("pipeline", "run the full analysis pipeline");
    cmd_pipeline->add_option("--only", only_arg, "comma-separated stage filter");
    CLI::App* cmd_report = app.add_subcommand("report", "human-readable summary of a run");
    cmd_report->add_option("--run-id", report_run_id, "run id to report")->required();
    cmd_report->add_option("--out", report_out, "output directory holding the run");

    CLI11_PARSE(app, argc, argv);
    opts.has_seed_override = seed_opt->count() > 0;

    try {
        hm::kernels::set_backend_from_env();
        if (!opts.backend.empty()) {
            if (opts.backend == "scalar") {
                hm::kernels::set_backend(hm::kernels::Backend::scalar);
            } else if (opts.backend == "avx2") {
                hm::kernels::set_backend(hm::kernels::Backend::avx2);
            } else {
                throw hm::ConfigError("--backend must be 'scalar' or 'avx2'");
            }
        }

        if (cmd_report->parsed()) {
            hm::run_report(report_out, report_run_id, std::cout);
            return 0;
        }

        const hm::PipelineConfig config = load_config(opts);

        if (cmd_gen->parsed()) {
            hm::run_gen_corpus(config);
            return 0;
        }

        std::set<std::string> only;
        if (cmd_train->parsed()) only = {"train"};
        if (cmd_capture->parsed()) only = {"capture"};
        if (cmd_probes->parsed()) only = {"probes"};
        if (cmd_elbow->parsed()) only = {"elbow"};
        if (cmd_similarity->parsed()) only = {"similarity"};
        if (cmd_dla->parsed()) only = {"dla"};
        if (cmd_steer->parsed()) only = {"steering"};
        if (cmd_pipeline->parsed() && !only_arg.empty()) {
            std::size_t start = 0;
            while (start <= only_arg.size()) {
                const std::size_t comma = only_arg.find(',', start);
                const std::string stage = only_arg.substr(
                    start, comma == std::string::npos ? std::string::npos : comma - start);
                if (!stage.empty()) only.insert(stage);
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        }

        const hm::PipelineOutcome outcome = hm::run_pipeline(config, only);
        for (const auto& t : outcome.timings) {
            std::cout << "stage " << t.stage << ": " << t.seconds << " s\n";
        }
        if (outcome.time_limit_flag) {
            std::cerr << "warning: some generations hit the time limit; results are partial\n";
            return 5;
        }
        return 0;
    } catch (const hm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const hm::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
