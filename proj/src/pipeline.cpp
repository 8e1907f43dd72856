#include "hm/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hm/checkpoint.hpp"
#include "hm/csv.hpp"
#include "hm/dla.hpp"
#include "hm/errors.hpp"
#include "hm/kernels.hpp"
#include "hm/parallel.hpp"
#include "hm/rng.hpp"
#include "hm/sha256.hpp"

namespace hm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::uint64_t require_seed(const json& j, const char* section) {
    if (!j.contains("seed")) {
        throw ConfigError(std::string("config section '") + section +
                          "' must declare an explicit seed");
    }
    return j.at("seed").get<std::uint64_t>();
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

void ensure_run_dir(const PipelineConfig& config) {
    std::error_code ec;
    fs::create_directories(config.run_dir(), ec);
    if (ec) throw DataError("cannot create output directory " + config.run_dir());
}

std::string artifact(PipelineOutcome& outcome, const PipelineConfig& config,
                     const std::string& name) {
    const std::string path = config.run_dir() + "/" + name;
    outcome.artifacts.push_back(path);
    return path;
}

std::vector<ToyTaskExample> make_pipeline_corpus(const PipelineConfig& config) {
    return generate_toy_corpus(config.toy_corpus.n_examples, config.toy_corpus.rule,
                               config.toy_corpus.framing_mix, config.toy_corpus.seed);
}

int resolve_layer_choice(const PipelineConfig& config, const std::string& choice,
                         HookKind position) {
    if (choice != "elbow") {
        try {
            return std::stoi(choice);
        } catch (const std::exception&) {
            throw ConfigError("layer choice must be 'elbow' or an integer, got '" + choice + "'");
        }
    }
    const auto rows = read_csv(config.run_dir() + "/elbow.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() >= 2 && rows[i][0] == to_string(position)) {
            return std::stoi(rows[i][1]);
        }
    }
    throw DataError("elbow.csv has no entry for position " + to_string(position) +
                    " (run the elbow stage first)");
}

} // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.snapshot = j;
    c.run_id = j.at("run_id").get<std::string>();
    c.out_dir = j.value("out_dir", std::string("runs"));
    c.jobs = j.value("jobs", 1);

    if (j.contains("model")) {
        const json& m = j.at("model");
        c.model.n_layers = m.at("n_layers").get<int>();
        c.model.n_heads = m.at("n_heads").get<int>();
        c.model.d_model = m.at("d_model").get<int>();
        c.model.d_head = m.at("d_head").get<int>();
        c.model.vocab_size = m.at("vocab_size").get<int>();
        c.model.max_seq_len = m.at("max_seq_len").get<int>();
        c.model.norm_kind = parse_norm_kind(m.value("norm_kind", std::string("rms")));
        c.model.positional_kind =
            parse_positional_kind(m.value("positional_kind", std::string("rotary")));
        c.model.validate();
    }

    if (j.contains("toy_corpus")) {
        const json& t = j.at("toy_corpus");
        c.toy_corpus.n_examples = t.at("n_examples").get<int>();
        c.toy_corpus.seed = require_seed(t, "toy_corpus");
        c.toy_corpus.rule.n_symbols = t.value("n_symbols", 10);
        if (!t.contains("priority") || !t.contains("framing_mix")) {
            throw ConfigError("toy_corpus needs 'priority' and 'framing_mix'");
        }
        for (const auto& [name, probs] : t.at("priority").items()) {
            ToyPriorityRule::Probs p;
            p.q_primary = probs.at("q_primary").get<double>();
            p.q_neither = probs.value("q_neither", 0.0);
            c.toy_corpus.rule.probs[parse_framing(name)] = p;
        }
        for (const auto& [name, weight] : t.at("framing_mix").items()) {
            c.toy_corpus.framing_mix.emplace_back(parse_framing(name), weight.get<double>());
        }
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.learning_rate = t.value("learning_rate", 1.5e-3);
        c.train.steps = t.at("steps").get<int>();
        c.train.batch_size = t.value("batch_size", 64);
        c.train.seed = require_seed(t, "train");
        c.train_count = t.at("train_count").get<int>();
        c.eval_count = t.value("eval_count", 0);
    }

    if (j.contains("capture")) {
        c.capture_count = j.at("capture").at("count").get<int>();
    }

    if (j.contains("probes")) {
        const json& p = j.at("probes");
        c.probes.l2_strength = p.value("l2_strength", 1e-3);
        c.probes.max_iters = p.value("max_iters", 1000);
        c.probes.tol = p.value("tol", 1e-6);
        c.probes.seed = require_seed(p, "probes");
        c.probe_split.train_fraction = p.value("train_fraction", 0.8);
        if (!p.contains("split_seed")) throw ConfigError("probes needs explicit split_seed");
        c.probe_split.seed = p.at("split_seed").get<std::uint64_t>();
        if (p.contains("positions")) {
            for (const auto& pos : p.at("positions")) {
                c.probe_positions.push_back(parse_hook_kind(pos.get<std::string>()));
            }
        }
    }
    if (c.probe_positions.empty()) {
        c.probe_positions = {HookKind::attn_out, HookKind::mlp_out, HookKind::resid_post};
    }

    if (j.contains("elbow")) {
        const json& e = j.at("elbow");
        c.elbow.smoothing_window = e.value("smoothing_window", 3);
        c.elbow.slope_fraction = e.value("slope_fraction", 0.25);
        c.elbow.confirm_window = e.value("confirm_window", 3);
    }

    if (j.contains("similarity")) {
        const json& s = j.at("similarity");
        c.similarity_position = parse_hook_kind(s.value("position", std::string("mlp_out")));
        c.similarity_layer = s.value("layer", std::string("elbow"));
    }

    if (j.contains("dla")) {
        const json& d = j.at("dla");
        c.dla_count = d.at("count").get<int>();
        c.dla_fold_final_norm = d.value("fold_final_norm", true);
        c.dla_per_head_dump = d.value("per_head_dump", 0);
    }

    if (j.contains("steering")) {
        const json& s = j.at("steering");
        c.steering.alphas = s.at("alphas").get<std::vector<double>>();
        if (!s.contains("control_seed")) throw ConfigError("steering needs explicit control_seed");
        c.steering.control_seed = s.at("control_seed").get<std::uint64_t>();
        c.steering.scope = parse_intervention_scope(
            s.value("scope", std::string("all_positions_from_t_star")));
        c.steering.layer = s.value("layer", std::string("elbow"));
        c.steering.position = parse_hook_kind(s.value("position", std::string("mlp_out")));
        c.steering.source_a =
            parse_framing(s.value("source_a", std::string("consensus_majority_minority")));
        c.steering.source_b = parse_framing(s.value("source_b", std::string("system_user")));
        if (s.contains("eval_pair")) {
            const json& e = s.at("eval_pair");
            c.steering.eval_framing = parse_framing(e.value("framing", std::string("system_user")));
            c.steering.eval_symbol_a = e.at("symbol_a").get<int>();
            c.steering.eval_symbol_b = e.at("symbol_b").get<int>();
        }
        c.steering.max_new_tokens = s.value("max_new_tokens", 4);
        c.steering.time_limit_seconds = s.value("time_limit_seconds", 30.0);
    }

    if (j.contains("text_corpus")) {
        const json& t = j.at("text_corpus");
        for (const auto& k : t.at("kinds")) {
            c.text_corpus.kinds.push_back(parse_constraint_kind(k.get<std::string>()));
        }
        c.text_corpus.n_variations = t.at("n_variations").get<int>();
        for (const auto& f : t.at("framings")) {
            c.text_corpus.framings.push_back(parse_framing(f.get<std::string>()));
        }
        c.text_corpus.task_count = t.at("task_count").get<int>();
        c.text_corpus.seed = require_seed(t, "text_corpus");
    }

    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    try {
        return from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("config error in " + path + ": " + e.what());
    }
}

// ---------- stages ----------

void stage_train(const PipelineConfig& config, PipelineOutcome& outcome) {
    ensure_run_dir(config);
    const auto corpus = make_pipeline_corpus(config);
    if (config.train_count <= 0 ||
        config.train_count + config.eval_count > static_cast<int>(corpus.size())) {
        throw ConfigError("train_count/eval_count exceed toy corpus size");
    }
    const std::vector<ToyTaskExample> train_set(corpus.begin(),
                                                corpus.begin() + config.train_count);
    const ToyTrainResult result = train_toy_model(config.model, train_set, config.train);

    double eval_accuracy = -1.0;
    if (config.eval_count > 0) {
        const std::vector<ToyTaskExample> eval_set(
            corpus.begin() + config.train_count,
            corpus.begin() + config.train_count + config.eval_count);
        eval_accuracy = winner_token_accuracy(result.weights, eval_set);
    }

    save_weights(result.weights, artifact(outcome, config, "weights.hmwt"));
    outcome.artifacts.push_back(config.run_dir() + "/weights.hmwt.json");

    json report;
    report["final_loss"] = result.final_loss;
    report["steps_run"] = result.steps_run;
    report["eval_accuracy"] = eval_accuracy;
    std::ofstream out(artifact(outcome, config, "train.json"));
    out << report.dump(2) << "\n";
}

void stage_capture(const PipelineConfig& config, PipelineOutcome& outcome) {
    ensure_run_dir(config);
    const WeightSet weights = load_weights(config.run_dir() + "/weights.hmwt");
    const auto corpus = make_pipeline_corpus(config);
    const int start = config.train_count + config.eval_count;
    if (config.capture_count <= 0 || start + config.capture_count > static_cast<int>(corpus.size())) {
        throw ConfigError("capture count exceeds toy corpus size");
    }

    ActivationTable table;
    table.n_layers = config.model.n_layers;
    table.d_model = config.model.d_model;
    table.positions = config.probe_positions;
    const std::size_t n = static_cast<std::size_t>(config.capture_count);
    table.labels.resize(n);
    table.framings.resize(n);
    table.ids.resize(n);
    table.acts = Mat(n, static_cast<std::size_t>(config.model.n_layers) * table.positions.size() *
                            static_cast<std::size_t>(config.model.d_model));

    HookSelector hooks;
    hooks.all_kinds = false;
    for (HookKind k : table.positions) hooks.kinds.insert(k);

    parallel_for(n, config.jobs, [&](std::size_t i) {
        const ToyTaskExample& ex = corpus[static_cast<std::size_t>(start) + i];
        const ForwardTrace trace = forward_with_hooks(weights, ex.ids, hooks);
        for (int layer = 0; layer < config.model.n_layers; ++layer) {
            for (std::size_t pi = 0; pi < table.positions.size(); ++pi) {
                const Mat& acts = trace.hook(layer, table.positions[pi]);
                const double* row = acts.row(trace.t_star());
                std::copy(row, row + config.model.d_model,
                          table.acts.row(i) + table.slot(layer, pi));
            }
        }
        table.labels[i] = static_cast<int>(ex.winner);
        table.framings[i] = to_string(ex.framing);
        table.ids[i] = ex.id;
    });

    save_activations(table, artifact(outcome, config, "activations.hmat"));
    outcome.artifacts.push_back(config.run_dir() + "/activations.hmat.json");

    std::ofstream corpus_out(artifact(outcome, config, "toy_corpus.jsonl"));
    if (!corpus_out) throw DataError("cannot write toy_corpus.jsonl");
    for (const auto& ex : corpus) corpus_out << toy_example_to_jsonl(ex) << "\n";
}

void stage_probes(const PipelineConfig& config, PipelineOutcome& outcome) {
    const ActivationTable table = load_activations(config.run_dir() + "/activations.hmat");
    std::vector<int> layer_list;
    for (int l = 0; l < config.model.n_layers; ++l) layer_list.push_back(l);
    const ProbeReport report = probe_sweep_table(table, layer_list, config.probe_positions,
                                                 config.probe_split, config.probes, config.jobs);

    CsvWriter csv(artifact(outcome, config, "probe_auc.csv"));
    csv.row({"layer", "position", "framing", "auc", "n_train", "n_test", "seed"});
    for (const auto& e : report.entries) {
        csv.row({std::to_string(e.layer), to_string(e.position), e.framing_tag,
                 CsvWriter::num(e.auc), std::to_string(e.n_train), std::to_string(e.n_test),
                 std::to_string(e.split_seed)});
    }
}

void stage_elbow(const PipelineConfig& config, PipelineOutcome& outcome) {
    const auto rows = read_csv(config.run_dir() + "/probe_auc.csv");
    std::map<std::string, std::map<int, double>> curves;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() < 4) continue;
        curves[rows[i][1]][std::stoi(rows[i][0])] = std::stod(rows[i][3]);
    }
    CsvWriter csv(artifact(outcome, config, "elbow.csv"));
    csv.row({"position", "elbow_layer"});
    for (const auto& [position, by_layer] : curves) {
        std::vector<double> curve;
        for (const auto& [layer, auc] : by_layer) curve.push_back(auc);
        const int elbow = find_elbow(curve, config.elbow);
        csv.row({position, std::to_string(elbow)});
    }
}

void stage_similarity(const PipelineConfig& config, PipelineOutcome& outcome) {
    const ActivationTable table = load_activations(config.run_dir() + "/activations.hmat");
    const int layer =
        resolve_layer_choice(config, config.similarity_layer, config.similarity_position);
    const std::size_t pos_index = table.position_index(config.similarity_position);

    // one probe per framing, trained on that framing's rows
    std::vector<std::pair<std::string, ProbeModel>> probes;
    for (Framing f : kAllFramings) {
        const std::string tag = to_string(f);
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < table.n_prompts(); ++r) {
            if (table.framings[r] == tag) rows.push_back(r);
        }
        if (rows.empty()) continue;
        ActivationDataset ds;
        ds.layer = layer;
        ds.position = config.similarity_position;
        ds.framing_tag = tag;
        ds.x = Mat(rows.size(), static_cast<std::size_t>(table.d_model));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* src = table.activation(rows[i], layer, pos_index);
            std::copy(src, src + table.d_model, ds.x.row(i));
            ds.y.push_back(static_cast<DecisionLabel>(table.labels[rows[i]]));
        }
        probes.emplace_back(tag, train_probe(ds, config.probes));
    }
    if (probes.size() < 2) throw DataError("similarity stage needs at least two framings");

    for (DecisionLabel cls :
         {DecisionLabel::primary, DecisionLabel::secondary, DecisionLabel::neither}) {
        const SimilarityMatrix sim = weight_cosine_similarity(probes, cls);
        CsvWriter csv(artifact(outcome, config, "similarity_" + to_string(cls) + ".csv"));
        std::vector<std::string> header = {"framing"};
        header.insert(header.end(), sim.framing_order.begin(), sim.framing_order.end());
        csv.row(header);
        for (std::size_t i = 0; i < sim.framing_order.size(); ++i) {
            std::vector<std::string> row = {sim.framing_order[i]};
            for (std::size_t j = 0; j < sim.framing_order.size(); ++j) {
                row.push_back(CsvWriter::num(sim.entries.at(i, j)));
            }
            csv.row(row);
        }
    }
    for (const auto& [tag, probe] : probes) {
        save_probe(probe, artifact(outcome, config, "probe_" + tag + ".hmpb"));
        outcome.artifacts.push_back(config.run_dir() + "/probe_" + tag + ".hmpb.json");
    }

    json meta;
    meta["layer"] = layer;
    meta["position"] = to_string(config.similarity_position);
    json order = json::array();
    for (const auto& [tag, probe] : probes) order.push_back(tag);
    meta["framing_order"] = order;
    std::ofstream meta_out(artifact(outcome, config, "similarity_meta.json"));
    meta_out << meta.dump(2) << "\n";
}

void stage_dla(const PipelineConfig& config, PipelineOutcome& outcome) {
    const WeightSet weights = load_weights(config.run_dir() + "/weights.hmwt");
    const auto corpus = make_pipeline_corpus(config);
    const int start = config.train_count + config.eval_count;
    if (config.dla_count <= 0 || start + config.dla_count > static_cast<int>(corpus.size())) {
        throw ConfigError("dla count exceeds toy corpus size");
    }

    DlaOptions options;
    options.fold_final_norm = config.dla_fold_final_norm;

    HookSelector hooks;
    hooks.all_kinds = false;
    hooks.kinds = {HookKind::attn_internals, HookKind::attn_out};

    const std::size_t n = static_cast<std::size_t>(config.dla_count);
    std::vector<DlaResult> results(n);
    std::vector<std::string> per_head_rows(n);
    parallel_for(n, config.jobs, [&](std::size_t i) {
        const ToyTaskExample& ex = corpus[static_cast<std::size_t>(start) + i];
        const ForwardTrace trace = forward_with_hooks(weights, ex.ids, hooks);
        const bool dump = static_cast<int>(i) < config.dla_per_head_dump;
        SpanAttribution attribution;
        DlaResult r = dla_full(trace, weights, {ex.span_a}, {ex.span_b}, options,
                               dump ? &attribution : nullptr);
        r.prompt_id = ex.id;
        r.framing = ex.framing;
        results[i] = r;
        if (dump) {
            std::string rows;
            for (std::size_t layer = 0; layer < attribution.scores.size(); ++layer) {
                const Mat& m = attribution.scores[layer];
                for (std::size_t h = 0; h < m.rows; ++h) {
                    for (std::size_t t = 0; t < m.cols; ++t) {
                        rows += std::to_string(ex.id) + "," + std::to_string(layer) + "," +
                                std::to_string(h) + "," + std::to_string(t) + "," +
                                CsvWriter::num(m.at(h, t)) + "\n";
                    }
                }
            }
            per_head_rows[i] = rows;
        }
    });

    std::ofstream jsonl(artifact(outcome, config, "dla_results.jsonl"));
    if (!jsonl) throw DataError("cannot write dla_results.jsonl");
    for (const auto& r : results) {
        json j;
        j["prompt_id"] = r.prompt_id;
        j["framing"] = to_string(r.framing);
        j["c_a"] = r.c_a;
        j["c_b"] = r.c_b;
        j["degenerate"] = r.degenerate;
        if (!r.degenerate) {
            j["s_a"] = r.s_a;
            j["s_b"] = r.s_b;
            j["flags"] = {{"primary_geq", r.flags.primary_geq},
                          {"detected", r.flags.detected},
                          {"primary_win_conflict", r.flags.primary_win_conflict}};
        }
        jsonl << j.dump() << "\n";
    }

    const AggregateDlaReport agg = aggregate_report(results);
    CsvWriter csv(artifact(outcome, config, "dla_table.csv"));
    csv.row({"framing", "pct_primary_geq", "pct_detected", "pct_primary_win_given_conflict",
             "n_prompts", "n_degenerate"});
    for (const auto& [framing, a] : agg.per_framing) {
        csv.row({to_string(framing), CsvWriter::num(a.pct_primary_geq),
                 CsvWriter::num(a.pct_detected),
                 a.pct_primary_win_given_conflict ? CsvWriter::num(*a.pct_primary_win_given_conflict)
                                                  : std::string(),
                 std::to_string(a.n_prompts), std::to_string(a.n_degenerate)});
    }

    if (config.dla_per_head_dump > 0) {
        std::ofstream dump(artifact(outcome, config, "dla_per_head.csv"));
        dump << "prompt_id,layer,head,token,score\n";
        for (const auto& rows : per_head_rows) dump << rows;
    }
}

void stage_steering(const PipelineConfig& config, PipelineOutcome& outcome) {
    const WeightSet weights = load_weights(config.run_dir() + "/weights.hmwt");
    const ActivationTable table = load_activations(config.run_dir() + "/activations.hmat");
    const SteeringStageSpec& spec = config.steering;
    const int layer = resolve_layer_choice(config, spec.layer, spec.position);

    // build the symmetric evaluation prompt pair first so its ids can be
    // held out of the mean computation
    const auto roles = toyvocab::role_tokens(spec.eval_framing);
    auto make_prompt = [&](int sym_first, int sym_second, const std::string& tag) {
        SweepPrompt p;
        p.tokens.ids = {roles.first, toyvocab::CON_BASE + sym_first, roles.second,
                        toyvocab::CON_BASE + sym_second, toyvocab::TASK, toyvocab::ANS};
        p.primary_symbol = toyvocab::CON_BASE + sym_first;
        p.secondary_symbol = toyvocab::CON_BASE + sym_second;
        p.order_tag = tag;
        return p;
    };
    const SweepPrompt order_a = make_prompt(spec.eval_symbol_a, spec.eval_symbol_b, "order_ab");
    const SweepPrompt order_b = make_prompt(spec.eval_symbol_b, spec.eval_symbol_a, "order_ba");

    auto rows_for = [&](Framing f) {
        std::vector<std::size_t> rows;
        const std::string tag = to_string(f);
        for (std::size_t r = 0; r < table.n_prompts(); ++r) {
            if (table.framings[r] == tag) rows.push_back(r);
        }
        if (rows.empty()) throw DataError("no capture rows for framing " + tag);
        return rows;
    };

    const Vec mu_a = mean_activation_rows(table, rows_for(spec.source_a), layer, spec.position);
    const Vec mu_b = mean_activation_rows(table, rows_for(spec.source_b), layer, spec.position);
    SteeringVector::Provenance prov;
    prov.source_a = to_string(spec.source_a);
    prov.source_b = to_string(spec.source_b);
    prov.n_a = rows_for(spec.source_a).size();
    prov.n_b = rows_for(spec.source_b).size();
    prov.seed = spec.control_seed;
    const SteeringVector steer = build_steering_vector(mu_a, mu_b, layer, spec.position, prov);

    GenerateOptions gen;
    gen.max_new_tokens = spec.max_new_tokens;
    gen.eos_id = toyvocab::EOS;
    gen.time_limit_seconds = spec.time_limit_seconds;

    const SweepReport report = alpha_sweep(weights, order_a, order_b, spec.alphas, steer,
                                           spec.control_seed, spec.scope, gen, config.jobs);
    outcome.time_limit_flag = outcome.time_limit_flag || report.any_truncated;

    CsvWriter csv(artifact(outcome, config, "steer_sweep.csv"));
    csv.row({"prompt_order", "alpha", "arm", "word_count", "keyword_count", "first_symbol",
             "primary_satisfied", "secondary_satisfied", "truncated_by_time_limit"});
    for (const auto& cell : report.cells) {
        csv.row({cell.order_tag, CsvWriter::num(cell.alpha), to_string(cell.arm),
                 std::to_string(cell.result.compliance.word_count),
                 std::to_string(cell.result.compliance.keyword_count),
                 std::to_string(cell.result.compliance.first_symbol),
                 cell.result.compliance.primary_satisfied ? "true" : "false",
                 cell.result.compliance.secondary_satisfied ? "true" : "false",
                 cell.result.truncated_by_time_limit ? "true" : "false"});
    }

    std::ofstream jsonl(artifact(outcome, config, "steer_generations.jsonl"));
    if (!jsonl) throw DataError("cannot write steer_generations.jsonl");
    for (const auto& cell : report.cells) {
        json j;
        j["prompt_order"] = cell.order_tag;
        j["alpha"] = cell.alpha;
        j["arm"] = to_string(cell.arm);
        j["tokens"] = cell.result.tokens;
        json names = json::array();
        for (int t : cell.result.tokens) names.push_back(toyvocab::token_name(t));
        j["token_names"] = names;
        j["truncated_by_time_limit"] = cell.result.truncated_by_time_limit;
        jsonl << j.dump() << "\n";
    }

    json meta;
    meta["layer"] = layer;
    meta["position"] = to_string(spec.position);
    meta["norm"] = steer.norm;
    meta["source_a"] = prov.source_a;
    meta["source_b"] = prov.source_b;
    meta["n_a"] = prov.n_a;
    meta["n_b"] = prov.n_b;
    meta["scope"] = to_string(spec.scope);
    std::ofstream meta_out(artifact(outcome, config, "steering_meta.json"));
    meta_out << meta.dump(2) << "\n";
}

// ---------- orchestration ----------

void write_manifest(const PipelineConfig& config, const std::string& command,
                    const PipelineOutcome& outcome) {
    ensure_run_dir(config);
    json m;
    m["run_id"] = config.run_id;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["kernel_backend"] = kernels::backend_name();
    m["config"] = config.snapshot;
    m["constants"] = {{"norm_eps", kNormEps},
                      {"mlp_hidden_ratio", kMlpHiddenRatio},
                      {"mlp_nonlinearity", kMlpNonlinearity},
                      {"decoding", "greedy"},
                      {"rope_base", kRopeBase}};
    json artifacts = json::array();
    for (const auto& path : outcome.artifacts) {
        json a;
        a["path"] = path;
        std::error_code ec;
        const auto size = fs::file_size(path, ec);
        a["bytes"] = ec ? 0 : static_cast<std::uint64_t>(size);
        a["sha256"] = ec ? "" : Sha256::of_file(path);
        artifacts.push_back(a);
    }
    m["artifacts"] = artifacts;
    json timings = json::object();
    for (const auto& t : outcome.timings) timings[t.stage] = t.seconds;
    m["timings_sec"] = timings;
    m["time_limit_flag"] = outcome.time_limit_flag;
    if (!outcome.failed_stage.empty()) {
        m["failed_stage"] = outcome.failed_stage;
        m["failure_message"] = outcome.failure_message;
    }
    std::ofstream out(config.run_dir() + "/manifest.json");
    if (!out) throw DataError("cannot write manifest under " + config.run_dir());
    out << m.dump(2) << "\n";
}

PipelineOutcome run_pipeline(const PipelineConfig& config, const std::set<std::string>& only) {
    for (const auto& name : only) {
        if (std::find(kPipelineStages.begin(), kPipelineStages.end(), name) ==
            kPipelineStages.end()) {
            throw ConfigError("unknown pipeline stage: '" + name + "'");
        }
    }
    PipelineOutcome outcome;
    for (const auto& stage : kPipelineStages) {
        if (!only.empty() && only.count(stage) == 0) continue;
        const double t0 = now_seconds();
        try {
            if (stage == "train") stage_train(config, outcome);
            else if (stage == "capture") stage_capture(config, outcome);
            else if (stage == "probes") stage_probes(config, outcome);
            else if (stage == "elbow") stage_elbow(config, outcome);
            else if (stage == "similarity") stage_similarity(config, outcome);
            else if (stage == "dla") stage_dla(config, outcome);
            else if (stage == "steering") stage_steering(config, outcome);
        } catch (const std::exception& e) {
            outcome.timings.push_back({stage, now_seconds() - t0});
            outcome.failed_stage = stage;
            outcome.failure_message = e.what();
            write_manifest(config, "pipeline", outcome);
            throw;
        }
        outcome.timings.push_back({stage, now_seconds() - t0});
    }
    write_manifest(config, "pipeline", outcome);
    return outcome;
}

PipelineOutcome run_gen_corpus(const PipelineConfig& config) {
    const TextCorpusSpec& spec = config.text_corpus;
    if (spec.kinds.empty() || spec.framings.empty() || spec.n_variations < 1 ||
        spec.task_count < 1) {
        throw ConfigError("gen-corpus requires text_corpus with kinds, framings, n_variations, task_count");
    }
    PipelineOutcome outcome;
    const double t0 = now_seconds();
    ensure_run_dir(config);
    const auto tasks = make_task_bank(spec.task_count);
    const auto records =
        generate_corpus(spec.kinds, spec.n_variations, spec.framings, tasks, spec.seed, config.jobs);
    std::ofstream out(artifact(outcome, config, "corpus.jsonl"));
    if (!out) throw DataError("cannot write corpus.jsonl");
    for (const auto& r : records) out << prompt_record_to_jsonl(r) << "\n";
    out.close();
    outcome.timings.push_back({"gen-corpus", now_seconds() - t0});
    write_manifest(config, "gen-corpus", outcome);
    std::cout << "wrote " << records.size() << " records to " << config.run_dir()
              << "/corpus.jsonl\n";
    return outcome;
}

void run_report(const std::string& out_dir, const std::string& run_id, std::ostream& out) {
    const std::string dir = out_dir + "/" + run_id;
    std::ifstream manifest_in(dir + "/manifest.json");
    if (!manifest_in) throw DataError("unknown run id: no manifest at " + dir + "/manifest.json");
    json manifest;
    manifest_in >> manifest;

    out << "run " << run_id << " (tool " << manifest.value("tool_version", "?") << ", backend "
        << manifest.value("kernel_backend", "?") << ")\n";
    if (manifest.contains("failed_stage")) {
        out << "  FAILED at stage " << manifest["failed_stage"].get<std::string>() << ": "
            << manifest.value("failure_message", "") << "\n";
    }

    std::ifstream train_in(dir + "/train.json");
    if (train_in) {
        json t;
        train_in >> t;
        out << "train: final_loss=" << t.value("final_loss", 0.0)
            << " steps=" << t.value("steps_run", 0)
            << " eval_accuracy=" << t.value("eval_accuracy", -1.0) << "\n";
    }

    if (fs::exists(dir + "/probe_auc.csv")) {
        const auto rows = read_csv(dir + "/probe_auc.csv");
        std::map<std::string, std::pair<int, double>> best;  // position -> (layer, auc)
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() < 4) continue;
            const double auc = std::stod(rows[i][3]);
            auto it = best.find(rows[i][1]);
            if (it == best.end() || auc > it->second.second) {
                best[rows[i][1]] = {std::stoi(rows[i][0]), auc};
            }
        }
        out << "probe AUC peaks:\n";
        for (const auto& [position, la] : best) {
            out << "  " << position << ": layer " << la.first << " auc " << la.second << "\n";
        }
    }

    if (fs::exists(dir + "/elbow.csv")) {
        const auto rows = read_csv(dir + "/elbow.csv");
        out << "elbow layers:\n";
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() >= 2) out << "  " << rows[i][0] << ": " << rows[i][1] << "\n";
        }
    }

    if (fs::exists(dir + "/dla_table.csv")) {
        const auto rows = read_csv(dir + "/dla_table.csv");
        out << "DLA percentages (primary>=secondary | detected | primary-win given conflict):\n";
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() >= 4) {
                out << "  " << rows[i][0] << ": " << rows[i][1] << " | " << rows[i][2] << " | "
                    << (rows[i][3].empty() ? "undefined" : rows[i][3]) << "\n";
            }
        }
    }

    if (fs::exists(dir + "/steer_sweep.csv")) {
        const auto rows = read_csv(dir + "/steer_sweep.csv");
        // flip point: first alpha where the steer arm's emitted symbol differs
        // from the baseline (alpha = 0) of the same prompt order
        std::map<std::string, int> baseline;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() < 6) continue;
            if (rows[i][2] == "steer" && std::stod(rows[i][1]) == 0.0) {
                baseline[rows[i][0]] = std::stoi(rows[i][5]);
            }
        }
        std::map<std::string, std::string> flip;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() < 6 || rows[i][2] != "steer") continue;
            const auto base = baseline.find(rows[i][0]);
            if (base == baseline.end()) continue;
            if (std::stoi(rows[i][5]) != base->second && flip.count(rows[i][0]) == 0) {
                flip[rows[i][0]] = rows[i][1];
            }
        }
        out << "steering flip points (first alpha changing the emitted symbol):\n";
        for (const auto& [order, base] : baseline) {
            out << "  " << order << ": "
                << (flip.count(order) ? "alpha=" + flip[order] : "no flip in sweep") << "\n";
        }
    }

    out << "reference targets (Llama-3.1-8B study; not desk-reproducible):\n"
        << "  probe micro-AUC > 0.89 across settings, elbow near layer 10 of 32\n"
        << "  DLA %: system_user (2.47, 17.11, 6.60), social_consensus (64.47, 7.64, 63.90)\n"
        << "  steering word counts: ~50 at alpha=2 down to ~8 at alpha=10\n";
}

} // namespace hm
