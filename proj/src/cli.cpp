#include "popevo/cli.hpp"

#include "popevo/analysis.hpp"
#include "popevo/ensemble.hpp"
#include "popevo/error.hpp"
#include "popevo/evalproto.hpp"
#include "popevo/evolution.hpp"
#include "popevo/persistence.hpp"
#include "popevo/workload.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace popevo {

using nlohmann::json;

namespace {

struct SpecOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::string task;
};

struct EndpointOptions {
    std::string evaluator;
    double timeout_s = kDefaultTimeoutSeconds;
    unsigned workers = 1;
};

void add_spec_options(CLI::App* cmd, SpecOptions& o)
{
    cmd->add_option("--config", o.config_path, "Run configuration (flat JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override one configuration key, KEY=VALUE (repeatable)")
        ->allow_extra_args(false);
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--mode", o.mode, "genome or genome_plus")->check(CLI::IsMember({"genome", "genome_plus"}));
    cmd->add_option("--task", o.task, "Task name, or a comma list for a multi-task fitness");
}

void add_endpoint_options(CLI::App* cmd, EndpointOptions& o)
{
    cmd->add_option("--evaluator", o.evaluator,
                    "Fitness endpoint: mock (in-process protocol loopback), cmd:<argv...> or tcp:<host>:<port>");
    cmd->add_option("--timeout", o.timeout_s, "Seconds to wait for each external response")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--workers", o.workers, "Threads for in-process batch evaluation")->check(CLI::PositiveNumber);
}

json load_doc(const std::string& path)
{
    if (path.empty())
        return json::object();
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
    }
}

RunSpec resolve_spec(const SpecOptions& o, json doc)
{
    for (const auto& kv : o.overrides)
        apply_override(doc, kv);
    if (o.seed)
        doc["rng_seed"] = *o.seed;
    if (!o.mode.empty())
        doc["mode"] = o.mode;
    if (!o.task.empty())
        doc["task"] = o.task;
    return run_spec_from_json(doc);
}

std::unique_ptr<Evaluator> make_evaluator(const std::vector<TaskSpec>& tasks, const EndpointOptions& o)
{
    std::unique_ptr<Evaluator> ev;
    if (o.evaluator.empty() || o.evaluator == "builtin") {
        ev = std::make_unique<Evaluator>(tasks);
    } else {
        std::unique_ptr<LineChannel> channel;
        if (o.evaluator == "mock")
            channel = std::make_unique<LoopbackChannel>(std::make_shared<const MockEvaluator>(tasks));
        else
            channel = open_endpoint(o.evaluator);
        ev = std::make_unique<Evaluator>(as_external(tasks),
                                         std::make_shared<ExternalClient>(std::move(channel), o.timeout_s));
    }
    ev->set_workers(o.workers);
    return ev;
}

void print_summary(std::ostream& out, const RunResult& r)
{
    out << "best_genome_id " << r.best.id << "\n";
    out << "best_validation_fitness " << format_double(r.best_validation_fitness) << "\n";
    if (r.best_test_fitness)
        out << "best_test_fitness " << format_double(*r.best_test_fitness) << "\n";
    if (r.ensemble)
        out << "ensemble_fitness " << format_double(r.ensemble->ensemble_fitness) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text)
{
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(item, &used);
            if (used != item.size())
                throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw Error(ErrorCode::Usage, "bad seed '" + item + "' in --seeds");
        }
    }
    if (out.empty())
        throw Error(ErrorCode::Usage, "--seeds needs at least one seed");
    return out;
}

// --- subcommands -------------------------------------------------------------------

int cmd_evolve(const SpecOptions& so, const EndpointOptions& eo, const std::string& run_dir,
               std::optional<std::uint64_t> halt_after, bool wall_clock, std::ostream& out)
{
    const RunSpec spec = resolve_spec(so, load_doc(so.config_path));
    RunDirectory dir{run_dir};
    std::filesystem::create_directories(dir.root);
    for (const auto& entry : std::filesystem::directory_iterator(dir.root)) {
        const std::string name = entry.path().filename().string();
        if (name == "log.csv" || (name.starts_with("ckpt_") && name.ends_with(".bin")) || name.starts_with("report."))
            std::filesystem::remove(entry.path());
    }
    write_text_file(dir.config(), to_json(spec).dump(2) + "\n");

    const auto tasks = build_tasks(spec.workload);
    const auto experts = build_experts(spec.workload, tasks);
    auto evaluator = make_evaluator(tasks, eo);
    RunDirectorySink sink(dir);
    RunSink* sinks[] = {&sink};
    EvolveOptions opts;
    opts.record_wall_clock = wall_clock;
    opts.halt_after = halt_after;
    const auto result = evolve(experts, spec.evolution, *evaluator, sinks, opts);
    if (!result) {
        out << "halted at generation " << *halt_after << "\n";
        return kExitOk;
    }
    print_summary(out, *result);
    return kExitOk;
}

int cmd_resume(const EndpointOptions& eo, const std::string& run_dir, std::optional<std::uint64_t> halt_after,
               bool wall_clock, std::ostream& out)
{
    RunDirectory dir{run_dir};
    const RunSpec spec = run_spec_from_json(load_doc(dir.config().string()));
    const auto latest = dir.latest_checkpoint();
    if (!latest)
        throw Error(ErrorCode::IoError, "no checkpoint in " + run_dir);
    Checkpoint ckpt = load_checkpoint(*latest);
    if (!(ckpt.state.config == spec.evolution))
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint configuration differs from config.json");

    // The log is rebuilt from the checkpoint so rows past the boundary vanish.
    std::filesystem::remove(dir.log());
    for (const auto& rep : ckpt.state.log)
        append_iteration_log(rep, dir.log());

    const auto tasks = build_tasks(spec.workload);
    auto evaluator = make_evaluator(tasks, eo);
    restore_evaluator(ckpt, *evaluator);
    RunDirectorySink sink(dir);
    RunSink* sinks[] = {&sink};
    EvolveOptions opts;
    opts.record_wall_clock = wall_clock;
    opts.halt_after = halt_after;
    const auto result = resume(std::move(ckpt.state), *evaluator, sinks, opts);
    if (!result) {
        out << "halted at generation " << *halt_after << "\n";
        return kExitOk;
    }
    print_summary(out, *result);
    return kExitOk;
}

struct AblationVariant {
    std::string name;
    void (*apply)(EvolutionConfig&);
};

const std::vector<AblationVariant>& ablation_variants()
{
    static const std::vector<AblationVariant> v = {
        {"full", [](EvolutionConfig&) {}},
        {"w/o initialization", [](EvolutionConfig& c) { c.ablation.no_init_blend = true; }},
        {"w/o crossover", [](EvolutionConfig& c) { c.ablation.no_crossover = true; }},
        {"w/o mutation", [](EvolutionConfig& c) { c.ablation.no_mutation = true; }},
        {"random selection", [](EvolutionConfig& c) { c.ablation.random_selection = true; }},
        {"w/o succession", [](EvolutionConfig& c) { c.ablation.no_succession = true; }},
        {"w/o ensemble", [](EvolutionConfig& c) { c.ablation.no_ensemble = true; }},
    };
    return v;
}

int cmd_ablate(const SpecOptions& so, const EndpointOptions& eo, const std::string& seeds_text,
               const std::string& run_dir, std::ostream& out)
{
    RunSpec spec = resolve_spec(so, load_doc(so.config_path));
    spec.evolution.mode = Mode::GenomePlus;
    std::vector<std::uint64_t> seeds =
        seeds_text.empty() ? std::vector<std::uint64_t>{spec.evolution.rng_seed} : parse_seed_list(seeds_text);

    const auto tasks = build_tasks(spec.workload);
    const auto experts = build_experts(spec.workload, tasks);

    std::string csv = "variant,seeds,best_validation,best_test,final\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-16s %-16s %-16s\n", "variant", "best_validation", "best_test",
                  "final");
    out << line;
    for (const auto& variant : ablation_variants()) {
        double val = 0.0, test = 0.0, fin = 0.0;
        for (std::uint64_t seed : seeds) {
            EvolutionConfig cfg = spec.evolution;
            cfg.ablation = Ablation{};
            variant.apply(cfg);
            cfg.rng_seed = seed;
            auto evaluator = make_evaluator(tasks, eo);
            const auto r = evolve(experts, cfg, *evaluator, {});
            val += r->best_validation_fitness;
            const double t = r->best_test_fitness.value_or(r->best_validation_fitness);
            test += t;
            fin += r->ensemble ? r->ensemble->ensemble_fitness : t;
        }
        const double n = static_cast<double>(seeds.size());
        val /= n;
        test /= n;
        fin /= n;
        csv += variant.name + "," + std::to_string(seeds.size()) + "," + format_double(val) + "," +
               format_double(test) + "," + format_double(fin) + "\n";
        std::snprintf(line, sizeof line, "%-20s %-16.10g %-16.10g %-16.10g\n", variant.name.c_str(), val, test, fin);
        out << line;
    }
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        write_text_file(std::filesystem::path(run_dir) / "config.json", to_json(spec).dump(2) + "\n");
        write_text_file(std::filesystem::path(run_dir) / "ablation.csv", csv);
    }
    return kExitOk;
}

int cmd_sweep(const SpecOptions& so, std::size_t runs, unsigned workers, const std::string& out_path,
              std::ostream& out)
{
    json doc = load_doc(so.config_path);
    if (!doc.contains("task"))
        doc["task"] = "toy_classifier";
    SpecOptions local = so;
    SweepOptions opts;
    opts.n_runs = runs;
    opts.workers = workers;
    if (so.seed)
        opts.rng_seed = *so.seed;
    local.seed.reset();
    const RunSpec spec = resolve_spec(local, std::move(doc));
    opts.ensemble_k = std::min<std::size_t>(3, spec.evolution.population_size);
    const auto records = run_sweep(default_grid(), spec, opts);
    const std::string csv = sweep_csv_text(records);
    if (out_path.empty())
        out << csv;
    else
        write_text_file(out_path, csv);
    return kExitOk;
}

int cmd_stats(const std::string& input, const std::string& format, std::ostream& out)
{
    const auto records = parse_sweep_csv(read_text_file(input));
    const auto stats = sweep_statistics(records);
    if (format == "json")
        out << stats_json(stats).dump(2) << "\n";
    else
        out << stats_text(stats);
    return kExitOk;
}

int cmd_ensemble_eval(const EndpointOptions& eo, const std::string& run_dir, std::size_t k, std::ostream& out)
{
    RunDirectory dir{run_dir};
    const RunSpec spec = run_spec_from_json(load_doc(dir.config().string()));
    const auto latest = dir.latest_checkpoint();
    if (!latest)
        throw Error(ErrorCode::IoError, "no checkpoint in " + run_dir);
    const Checkpoint ckpt = load_checkpoint(*latest);
    const Population& pop = ckpt.state.population;

    std::vector<Member> members;
    if (k == 0 && std::filesystem::exists(dir.report(ReportFormat::Json))) {
        const json report = load_doc(dir.report(ReportFormat::Json).string());
        for (const auto& id : report.at("topk_ids")) {
            const auto it = std::find_if(pop.members.begin(), pop.members.end(),
                                         [&](const Member& m) { return m.genome.id == id.get<GenomeId>(); });
            if (it == pop.members.end())
                throw Error(ErrorCode::CorruptCheckpoint, "top-k genome missing from the final checkpoint");
            members.push_back(*it);
        }
    } else {
        members = select_top_k(pop, k == 0 ? spec.evolution.ensemble_k : k);
    }

    const auto tasks = build_tasks(spec.workload);
    auto evaluator = make_evaluator(tasks, eo);
    const EnsembleResult res = ensemble_evaluate(members, *evaluator);
    for (std::size_t i = 0; i < res.member_ids.size(); ++i)
        out << "member " << res.member_ids[i] << " test_fitness " << format_double(res.member_test_fitness[i])
            << "\n";
    out << "ensemble_fitness " << format_double(res.ensemble_fitness) << "\n";
    return kExitOk;
}

int cmd_serve_mock(const SpecOptions& so, std::optional<std::uint16_t> port, std::ostream& out)
{
    const RunSpec spec = resolve_spec(so, load_doc(so.config_path));
    auto server = std::make_shared<const MockEvaluator>(build_tasks(spec.workload));
    if (!port) {
        server->serve(std::cin, out);
        return kExitOk;
    }
    MockTcpServer tcp(server, *port);
    out << "listening on 127.0.0.1:" << tcp.port() << std::endl;
    // Serve until stdin closes.
    std::string ignored;
    while (std::getline(std::cin, ignored)) {
    }
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Evolutionary optimizer over flat weight vectors", "popevo"};
    app.require_subcommand(1);

    SpecOptions so;
    EndpointOptions eo;
    std::string run_dir = "run";
    std::optional<std::uint64_t> halt_after;
    bool wall_clock = false;
    std::string seeds;
    std::size_t runs = 50;
    unsigned sweep_workers = 1;
    std::string out_path;
    std::string input;
    std::string format = "text";
    std::size_t k = 0;
    std::optional<std::uint16_t> port;

    auto* evolve_cmd = app.add_subcommand("evolve", "Run GENOME or GENOME+ and write run-directory artifacts");
    add_spec_options(evolve_cmd, so);
    add_endpoint_options(evolve_cmd, eo);
    evolve_cmd->add_option("--run-dir", run_dir, "Output directory");
    evolve_cmd->add_option("--halt-after", halt_after, "Stop after this many generations, leaving a checkpoint");
    evolve_cmd->add_flag("--wall-clock", wall_clock, "Record per-iteration wall-clock time in log.csv");

    auto* resume_cmd = app.add_subcommand("resume", "Continue a run from its latest checkpoint");
    add_endpoint_options(resume_cmd, eo);
    resume_cmd->add_option("--run-dir", run_dir, "Run directory")->required();
    resume_cmd->add_option("--halt-after", halt_after, "Stop again after this many generations");
    resume_cmd->add_flag("--wall-clock", wall_clock, "Record per-iteration wall-clock time in log.csv");

    auto* ablate_cmd = app.add_subcommand("ablate", "Compare the full method with its six ablation variants");
    add_spec_options(ablate_cmd, so);
    add_endpoint_options(ablate_cmd, eo);
    ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds shared by every variant");
    ablate_cmd->add_option("--run-dir", out_path, "Directory for ablation.csv");

    auto* sweep_cmd = app.add_subcommand("sweep", "Random hyperparameter sweep in GENOME mode");
    add_spec_options(sweep_cmd, so);
    sweep_cmd->add_option("--runs", runs, "Number of runs");
    sweep_cmd->add_option("--workers", sweep_workers, "Concurrent runs")->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--out", out_path, "CSV output path (stdout when omitted)");

    auto* stats_cmd = app.add_subcommand("stats", "Correlation and regression tables for a sweep CSV");
    stats_cmd->add_option("--input", input, "Sweep CSV")->required()->check(CLI::ExistingFile);
    stats_cmd->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

    auto* ens_cmd = app.add_subcommand("ensemble-eval", "Score a saved top-k set on the test split");
    add_endpoint_options(ens_cmd, eo);
    ens_cmd->add_option("--run-dir", run_dir, "Run directory")->required();
    ens_cmd->add_option("--k", k, "Ensemble size (default: the run's saved top-k)");

    auto* serve_cmd = app.add_subcommand("serve-mock", "Serve the built-in tasks over the evaluation protocol");
    add_spec_options(serve_cmd, so);
    serve_cmd->add_option("--port", port, "Listen on loopback TCP instead of stdio");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*evolve_cmd)
            return cmd_evolve(so, eo, run_dir, halt_after, wall_clock, out);
        if (*resume_cmd)
            return cmd_resume(eo, run_dir, halt_after, wall_clock, out);
        if (*ablate_cmd)
            return cmd_ablate(so, eo, seeds, out_path, out);
        if (*sweep_cmd)
            return cmd_sweep(so, runs, sweep_workers, out_path, out);
        if (*stats_cmd)
            return cmd_stats(input, format, out);
        if (*ens_cmd)
            return cmd_ensemble_eval(eo, run_dir, k, out);
        if (*serve_cmd)
            return cmd_serve_mock(so, port, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::Usage || e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace popevo
