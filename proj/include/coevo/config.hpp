#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/diversity.hpp"
#include "coevo/evaluators.hpp"
#include "coevo/madts.hpp"
#include "coevo/search_space.hpp"

namespace coevo {

enum class TransportMode { in_process, tcp };

struct AblationFlags {
    bool disable_macc = false;
    bool disable_madts = false;
    bool disable_spdi = false;
    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TransportConfig {
    TransportMode mode = TransportMode::in_process;
    std::string bind = "127.0.0.1:7321";
    /// Expected worker connections; 0 means M + 1.
    int workers = 0;
    /// Seconds to wait for workers to register or reconnect.
    double accept_timeout_s = 60.0;
    /// Longest silence tolerated from a worker during a generation.
    double worker_timeout_s = 900.0;
};

struct RunConfig {
    int population = 20;       // N
    int generations = 30;      // T
    int local_steps = 5;       // T_LS
    int elites = 5;            // E per worker
    int budget = 125;          // B merged candidates evaluated per generation
    std::uint64_t seed = 0;
    int tournament_k = 2;
    /// Concurrent global evaluations; results are committed in candidate order.
    int eval_parallelism = 1;
    /// Run workers on threads in in-process mode.
    bool parallel_workers = false;
    /// Off by default so that traces are byte-reproducible.
    bool record_wallclock = false;
    DiversityConfig spdi;
    MadtsConfig madts;
    AblationFlags ablation;
    EvaluatorConfig evaluator;
    TransportConfig transport;
};

/// A complete experiment description: the space plus everything needed to run it.
struct ExperimentConfig {
    SearchSpace space;
    RunConfig run;
};

/// Every problem with the run parameters, each prefixed by its JSON path.
std::vector<std::string> validate(const RunConfig& cfg);

/// Strict parse: unknown keys and out-of-range values are collected and
/// reported together as a ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

nlohmann::json madts_to_json(const MadtsConfig& cfg);
MadtsConfig madts_from_json(const nlohmann::json& j);

/// Default experiment on the enumerable desk benchmark.
ExperimentConfig desk_experiment();

}  // namespace coevo
