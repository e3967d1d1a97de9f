#include <doctest.h>

#include <algorithm>

#include "coevo/config.hpp"
#include "coevo/error.hpp"

using namespace coevo;
using nlohmann::json;

namespace {

std::vector<std::string> problems_of(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.problems();
    }
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
    return std::any_of(problems.begin(), problems.end(), [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("minimal config takes defaults") {
    auto cfg = parse_config(json{{"space", "desk"}});
    CHECK(cfg.space.gene_count() == 9);
    CHECK(cfg.run.population == 20);
    CHECK(cfg.run.generations == 30);
    CHECK(cfg.run.local_steps == 5);
    CHECK(cfg.run.elites == 5);
    CHECK(cfg.run.budget == 125);
    CHECK(cfg.run.transport.mode == TransportMode::in_process);
}

TEST_CASE("space presets") {
    CHECK(parse_config(json{{"space", "nas_k18"}}).space.gene_count() == 18);
    CHECK(mentions(problems_of(json{{"space", "imagenet"}}), "space: unknown preset"));
    CHECK(mentions(problems_of(json::object()), "space: required"));
}

TEST_CASE("every problem is reported with its path") {
    json j{{"space", "desk"},
           {"run", {{"N", 1}, {"T", 0}, {"colour", "red"}}},
           {"madts", {{"window", "wide"}}},
           {"transport", {{"mode", "carrier pigeon"}}},
           {"extra", 1}};
    auto p = problems_of(j);
    CHECK(mentions(p, "run.N"));
    CHECK(mentions(p, "run.T:"));
    CHECK(mentions(p, "run.colour: unknown key"));
    CHECK(mentions(p, "madts.window"));
    CHECK(mentions(p, "transport.mode"));
    CHECK(mentions(p, "extra: unknown key"));
    CHECK(p.size() >= 6);
}

TEST_CASE("type errors are not coerced") {
    CHECK(mentions(problems_of(json{{"space", "desk"}, {"run", {{"N", "20"}}}}), "run.N: must be an integer"));
    CHECK(mentions(problems_of(json{{"space", "desk"}, {"run", {{"seed", -1}}}}), "run.seed"));
    CHECK(mentions(problems_of(json{{"space", "desk"}, {"ablation", {{"disable_spdi", 1}}}}), "ablation.disable_spdi"));
}

TEST_CASE("tcp worker count must match the block count") {
    json j{{"space", "desk"}, {"transport", {{"mode", "tcp"}, {"workers", 4}}}};
    CHECK(mentions(problems_of(j), "transport.workers"));
    j["transport"]["workers"] = 3;
    CHECK(problems_of(j).empty());
}

TEST_CASE("config json round trip") {
    auto cfg = desk_experiment();
    cfg.run.seed = 42;
    cfg.run.ablation.disable_madts = true;
    cfg.run.madts.grid.lengthscales = {0.5, 2.0};
    auto back = parse_config(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("missing files are config errors") {
    CHECK_THROWS_AS(load_config("/nonexistent/coevo.json"), ConfigError);
}
