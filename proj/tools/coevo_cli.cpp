// coevo: run, ablate, worker, inspect.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "coevo/config.hpp"
#include "coevo/engine.hpp"
#include "coevo/error.hpp"
#include "coevo/evaluators.hpp"
#include "coevo/io.hpp"
#include "coevo/transport.hpp"

namespace fs = std::filesystem;
using namespace coevo;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("coevo");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("COEVO_LOG_LEVEL")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to "off"; only honour the literal.
        if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
        else spdlog::warn("ignoring unknown COEVO_LOG_LEVEL '{}'", env);
    }
}

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

/// Refuses enumeration above a million chromosomes.
std::optional<double> enumerable_optimum(const ExperimentConfig& cfg) {
    if (space_size(cfg.space) > 1'000'000 || cfg.run.evaluator.kind == "external") return std::nullopt;
    auto evaluator = make_evaluator(cfg.space, cfg.run.evaluator);
    return bruteforce_optimum(cfg.space, *evaluator).second;
}

struct RunArgs {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    int checkpoint_every = 0;
    std::string resume;
};

int cmd_run(const RunArgs& a) {
    ExperimentConfig cfg = load_config(a.config);
    if (a.seed) cfg.run.seed = *a.seed;
    auto evaluator = make_evaluator(cfg.space, cfg.run.evaluator);

    std::unique_ptr<TcpCoordinator> tcp;
    if (cfg.run.transport.mode == TransportMode::tcp && !cfg.run.ablation.disable_macc) {
        tcp = std::make_unique<TcpCoordinator>(cfg.space, cfg.run.madts, cfg.run.evaluator, cfg.run.transport);
        spdlog::info("waiting for {} workers on port {}", cfg.space.block_count(), tcp->port());
        std::cout << "listening on port " << tcp->port() << std::endl;
        tcp->wait_for_workers();
    }

    fs::create_directories(a.out);
    const fs::path out(a.out);
    Engine engine(cfg, *evaluator, tcp.get());
    engine.set_abort_checkpoint(join(out, "checkpoint_abort.json"));
    if (!a.resume.empty()) {
        engine.load_checkpoint(a.resume);
        spdlog::info("resumed from {} at generation {}", a.resume, engine.state().generation);
    }
    write_file_atomic(join(out, "config.json"), config_to_json(cfg).dump(2) + "\n");

    engine.initialize();
    while (!engine.done()) {
        const auto rec = engine.step();
        spdlog::info("gen {:>3}  best {:.6f}  mean {:.6f}  spdi {:.4f}  {}  evals {}", rec.generation, rec.best_fitness,
                     rec.mean_fitness, rec.spdi, to_string(rec.mode), rec.true_evals_cum);
        if (a.checkpoint_every > 0 && rec.generation % a.checkpoint_every == 0)
            engine.save_checkpoint(join(out, "checkpoint.json"));
    }
    if (tcp) tcp->shutdown();

    const RunResult result = engine.result();
    write_file_atomic(join(out, "trace.csv"), trace_to_csv(result.trace));
    write_file_atomic(join(out, "best.json"), best_json(cfg.space, result).dump(2) + "\n");
    write_file_atomic(join(out, "best_architectures.csv"), best_architectures_csv(cfg.space, {result}));
    std::cout << fmt::format("best fitness {} after {} true evaluations\n", format_double(result.best_fitness),
                             result.true_evals);
    for (const auto& name : candidate_names(cfg.space, result.best)) std::cout << "  " << name << "\n";
    return kOk;
}

int cmd_ablate(const std::string& config, const std::string& seeds_text, const std::string& out_dir) {
    const ExperimentConfig cfg = load_config(config);
    const auto seeds = parse_seed_list(seeds_text);
    const auto optimum = enumerable_optimum(cfg);
    const auto rows = run_ablation_suite(cfg, [&] { return make_evaluator(cfg.space, cfg.run.evaluator); }, seeds);

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    write_file_atomic(join(out, "ablation.csv"), ablation_csv(rows));
    std::vector<RunResult> full_runs = rows.front().runs;
    write_file_atomic(join(out, "best_architectures.csv"), best_architectures_csv(cfg.space, full_runs));

    double reference = 0.0;
    for (const auto& r : rows)
        for (const auto& run : r.runs) reference = std::max(reference, run.best_fitness);
    if (optimum) reference = *optimum;

    std::cout << fmt::format("{:<10} {:>10} {:>10} {:>12} {:>10} {:>16}\n", "method", "mean_best", "std_best",
                             "true_evals", "delta", "evals_to_99%");
    for (const auto& r : rows) {
        double to99 = 0.0;
        int reached = 0;
        for (const auto& run : r.runs)
            if (auto e = run.evals_to_reach(0.99 * reference)) {
                to99 += static_cast<double>(*e);
                ++reached;
            }
        std::cout << fmt::format("{:<10} {:>10.6f} {:>10.6f} {:>12.1f} {:>10} {:>10.1f} ({}/{})\n", r.method,
                                 r.mean_best, r.std_best, r.true_evals_mean,
                                 r.delta_vs_full ? fmt::format("{:+.6f}", *r.delta_vs_full) : std::string("--"),
                                 reached ? to99 / reached : 0.0, reached, r.runs.size());
    }
    if (optimum) std::cout << fmt::format("enumerated optimum {}\n", format_double(*optimum));
    return kOk;
}

int cmd_worker(const std::string& address, const std::string& tag_text, double idle_timeout_s) {
    BlockTag tag;
    try {
        tag = BlockTag::parse(tag_text);
    } catch (const Error& e) {
        std::cerr << "coevo worker: bad tag '" << tag_text << "': " << e.what() << "\n";
        return kUsageError;
    }
    WorkerOptions opts;
    opts.idle_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(idle_timeout_s * 1000.0));
    return worker_connect(address, tag, opts);
}

void print_archive_sizes(const nlohmann::json& ckpt) {
    const auto& st = ckpt.at("state");
    std::cout << "checkpoint generation " << st.at("generation").get<int>() << "\n";
    std::cout << "best fitness " << format_double(st.at("best").at("fitness").get<double>()) << "\n";
    std::cout << "true evaluations " << st.at("true_evals").get<std::uint64_t>() << "\n";
    for (const auto& [tag, w] : st.at("workers").items())
        std::cout << "  worker " << tag << ": archive " << w.at("archive").at("entries").size() << " entries\n";
}

int inspect_trace(const std::vector<GenerationRecord>& trace, const std::optional<fs::path>& out) {
    if (trace.empty()) {
        std::cout << "trace has no generations\n";
        return kOk;
    }
    bool monotone = true;
    double smin = trace.front().spdi, smax = smin, ssum = 0.0;
    int explore = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (i > 0 && trace[i].best_fitness < trace[i - 1].best_fitness) monotone = false;
        smin = std::min(smin, trace[i].spdi);
        smax = std::max(smax, trace[i].spdi);
        ssum += trace[i].spdi;
        explore += trace[i].mode == Mode::explore;
    }
    const double final_best = trace.back().best_fitness;
    int first_hit = trace.back().generation;
    for (const auto& r : trace)
        if (r.best_fitness == final_best) {
            first_hit = r.generation;
            break;
        }
    std::cout << fmt::format("generations {}\nfinal best {}\nfirst reached at generation {}\n", trace.size(),
                             format_double(final_best), first_hit);
    std::cout << fmt::format("best column monotone: {}\n", monotone ? "yes" : "no");
    std::cout << fmt::format("spdi min {:.6f} mean {:.6f} max {:.6f}; explore generations {}\n", smin,
                             ssum / static_cast<double>(trace.size()), smax, explore);
    std::cout << fmt::format("true evaluations {}\n", trace.back().true_evals_cum);
    if (out) {
        std::string csv = "generation,metric,value\n";
        for (const auto& r : trace)
            for (const auto& [metric, value] :
                 {std::pair{"best_fitness", r.best_fitness}, std::pair{"mean_fitness", r.mean_fitness},
                  std::pair{"spdi", r.spdi}, std::pair{"tau", r.tau},
                  std::pair{"true_evals_cum", static_cast<double>(r.true_evals_cum)}})
                csv += fmt::format("{},{},{}\n", r.generation, metric, format_double(value));
        fs::create_directories(*out);
        write_file_atomic(join(*out, "convergence_long.csv"), csv);
        std::cout << "wrote " << join(*out, "convergence_long.csv") << "\n";
    }
    return kOk;
}

int inspect_architectures(const std::string& text, const std::optional<fs::path>& out) {
    // Long format for parallel coordinates: one row per (seed, axis).
    std::string csv = "seed,axis,value,best_fitness\n";
    std::size_t rows = 0;
    std::size_t pos = text.find('\n');
    while (pos != std::string::npos && pos + 1 < text.size()) {
        const auto end = text.find('\n', pos + 1);
        const auto line = text.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1);
        pos = end;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) throw ParseError("best-architectures row has " + std::to_string(f.size()) + " fields");
        parse_int(f[0], "seed");
        parse_double(f[3], "best_fitness");
        csv += f[0] + "," + f[1] + "," + f[2] + "," + f[3] + "\n";
        ++rows;
    }
    std::cout << "best-architecture rows " << rows << "\n";
    if (out) {
        fs::create_directories(*out);
        write_file_atomic(join(*out, "parallel_coordinates_long.csv"), csv);
        std::cout << "wrote " << join(*out, "parallel_coordinates_long.csv") << "\n";
    }
    return kOk;
}

int cmd_inspect(const std::string& path, const std::string& out_dir) {
    const std::string text = read_file(path);
    std::optional<fs::path> out;
    if (!out_dir.empty()) out = fs::path(out_dir);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_discarded() || j.value("format", std::string()) != "coevo-checkpoint")
            throw ParseError(path + ": not a checkpoint");
        try {
            print_archive_sizes(j);
            return inspect_trace(checkpoint_trace(j), out);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": corrupt checkpoint: " + e.what());
        }
    }
    if (text.rfind("seed,gene_name,chosen_candidate,best_fitness", 0) == 0) return inspect_architectures(text, out);
    return inspect_trace(trace_from_csv(text), out);
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Cooperative coevolutionary architecture search"};
    app.require_subcommand(1);

    RunArgs run_args;
    std::uint64_t seed_override = 0;
    auto* run = app.add_subcommand("run", "Run one search and write trace.csv, best.json and a config echo");
    run->add_option("--config,-c", run_args.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--out,-o", run_args.out, "Output directory");
    auto* seed_opt = run->add_option("--seed", seed_override, "Override run.seed");
    run->add_option("--checkpoint-every", run_args.checkpoint_every, "Save checkpoint.json every K generations")
        ->check(CLI::NonNegativeNumber);
    run->add_option("--resume", run_args.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    std::string ablate_config, ablate_seeds = "0..9", ablate_out = "out";
    auto* ablate = app.add_subcommand("ablate", "Run the four-variant ablation and write ablation.csv");
    ablate->add_option("--config,-c", ablate_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    ablate->add_option("--seeds", ablate_seeds, "Seed list such as 0..9 or 1,2,5");
    ablate->add_option("--out,-o", ablate_out, "Output directory");

    std::string worker_address, worker_tag;
    double idle_timeout = 120.0;
    auto* worker = app.add_subcommand("worker", "Serve one block tag for a TCP coordinator");
    worker->add_option("--connect", worker_address, "Coordinator host:port")->required();
    worker->add_option("--tag", worker_tag, "Modality index (1..M) or 'fusion'")->required();
    worker->add_option("--idle-timeout", idle_timeout, "Seconds without coordinator traffic before exiting")
        ->check(CLI::PositiveNumber);

    std::string inspect_path, inspect_out;
    auto* inspect = app.add_subcommand("inspect", "Summarize a trace, checkpoint or best-architectures CSV");
    inspect->add_option("path", inspect_path, "trace.csv, checkpoint.json or best_architectures.csv")
        ->required()
        ->check(CLI::ExistingFile);
    inspect->add_option("--out,-o", inspect_out, "Directory for plot-ready long-format CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsageError;
    }

    try {
        if (*run) {
            if (*seed_opt) run_args.seed = seed_override;
            return cmd_run(run_args);
        }
        if (*ablate) return cmd_ablate(ablate_config, ablate_seeds, ablate_out);
        if (*worker) return cmd_worker(worker_address, worker_tag, idle_timeout);
        if (*inspect) return cmd_inspect(inspect_path, inspect_out);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeError;
    }
    return kUsageError;
}
