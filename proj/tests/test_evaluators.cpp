#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "coevo/error.hpp"
#include "coevo/evaluators.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace coevo;

namespace {

std::vector<int> radices(const SearchSpace& space) {
    std::vector<int> r;
    for (const auto& g : space.genes) r.push_back(static_cast<int>(g.candidates.size()));
    return r;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("coevo_test_" + name)).string();
}

ExternalBridgeConfig shell_bridge(const std::string& script, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    ExternalBridgeConfig cfg;
    cfg.command = {"/bin/sh", "-c", script};
    cfg.timeout = timeout;
    return cfg;
}

}  // namespace

TEST_CASE("separable landscape spans exactly [0, 1]") {
    auto space = presets::desk_space();
    auto land = SyntheticLandscape::generate(space, {0.0, 0, 0.0, 11});
    Chromosome top, bottom;
    for (const auto& u : land->utilities()) {
        top.alleles.push_back(static_cast<int>(std::max_element(u.begin(), u.end()) - u.begin()));
        bottom.alleles.push_back(static_cast<int>(std::min_element(u.begin(), u.end()) - u.begin()));
    }
    CHECK(land->score(top) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(land->score(bottom) == doctest::Approx(0.0).epsilon(1e-12));
    auto [best, value] = bruteforce_optimum(space, *land);
    CHECK(best == top);
    CHECK(value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("brute-force optimum agrees with an independent enumeration") {
    auto space = presets::desk_space();
    auto land = SyntheticLandscape::generate(space, {});
    auto start = std::chrono::steady_clock::now();
    auto [best, value] = bruteforce_optimum(space, *land);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(1));
    CHECK(land->true_eval_count() == 19683);
    auto [digits, ref] = oracle::exhaustive_argmax(radices(space), [&](const std::vector<int>& a) {
        return land->score(Chromosome{a});
    });
    CHECK(best.alleles == digits);
    CHECK(value == ref);
    // Idempotent.
    auto again = bruteforce_optimum(space, *land);
    CHECK(again.first == best);
}

TEST_CASE("local scores are affinely normalized per block") {
    std::vector<GeneSpec> genes{{0, "a", {"x", "y", "z"}, BlockTag::modality(1)},
                                {0, "b", {"x", "y"}, BlockTag::modality(2)},
                                {0, "f", {"x", "y"}, BlockTag::fusion()}};
    auto space = SearchSpace::from_genes(genes, 2);
    SyntheticLandscape land(space, {{0.1, 0.5, 0.9}, {0.0, 1.0}, {0.3, 0.2}}, {}, 0.0);
    CHECK(land.local_score(Block{BlockTag::modality(1), {0}}) == doctest::Approx(0.0));
    CHECK(land.local_score(Block{BlockTag::modality(1), {1}}) == doctest::Approx(0.5));
    CHECK(land.local_score(Block{BlockTag::modality(1), {2}}) == doctest::Approx(1.0));
}

TEST_CASE("with coupling the block-local argmax can disagree with the global optimum") {
    auto space = presets::desk_space();
    auto land = SyntheticLandscape::generate(space, {3.0, 4, 0.0, 7});
    auto [best, value] = bruteforce_optimum(space, *land);
    bool differs = false;
    const auto blocks = decompose(space, best);
    for (const auto& b : blocks) {
        double top = -1.0;
        Block arg;
        for (const auto& cand : enumerate_blocks(space, b.tag)) {
            const double s = land->local_score(cand);
            if (s > top) {
                top = s;
                arg = cand;
            }
        }
        differs = differs || arg != b;
    }
    CHECK(differs);
}

TEST_CASE("counter counts global evaluations only") {
    auto space = presets::desk_space();
    auto land = SyntheticLandscape::generate(space, {});
    Rng rng(1);
    for (int i = 0; i < 7; ++i) land->eval_global(random_chromosome(space, rng));
    land->eval_local(random_block(space, BlockTag::modality(1), rng));
    CHECK(land->true_eval_count() == 7);
    auto copy = land->clone();
    CHECK(copy->true_eval_count() == 0);
    auto c = random_chromosome(space, rng);
    CHECK(copy->eval_global(c) == land->eval_global(c));
}

TEST_CASE("hash noise is repeatable and bounded") {
    auto space = presets::desk_space();
    auto noisy = SyntheticLandscape::generate(space, {0.3, 4, 0.05, 7});
    auto plain = SyntheticLandscape::generate(space, {0.3, 4, 0.0, 7});
    Rng rng(2);
    int moved = 0;
    for (int i = 0; i < 200; ++i) {
        auto c = random_chromosome(space, rng);
        const double a = noisy->eval_global(c);
        CHECK(a == noisy->eval_global(c));
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        moved += a != plain->eval_global(c);
    }
    CHECK(moved > 150);
}

TEST_CASE("enumeration refuses spaces over the cap") {
    auto space = presets::nas_space();
    auto land = SyntheticLandscape::generate(space, {});
    CHECK_THROWS_AS(bruteforce_optimum(space, *land), PreconditionError);
}

TEST_CASE("tabular benchmark lookup, missing keys and range checks") {
    auto space = testing_support::blocked_space({1, 1, 1}, 2);
    const auto path = temp_path("tab.csv");
    {
        std::ofstream out(path);
        out << "allele_0,allele_1,allele_2,score\n0,0,0,0.25\n1,0,1,0.75\n";
    }
    auto tab = TabularBenchmark::load(space, path);
    CHECK(tab->size() == 2);
    CHECK(tab->eval_global(Chromosome{{1, 0, 1}}) == 0.75);
    try {
        tab->eval_global(Chromosome{{1, 1, 1}});
        FAIL("expected a missing-architecture error");
    } catch (const EvaluationError& e) {
        CHECK(e.kind() == EvaluationError::Kind::missing_architecture);
        CHECK(std::string(e.what()).find("(1,1,1)") != std::string::npos);
    }
    {
        std::ofstream out(path);
        out << "allele_0,allele_1,allele_2,score\n0,0,0,1.2\n";
    }
    CHECK_THROWS_AS(TabularBenchmark::load(space, path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("external evaluator round trip") {
    auto space = testing_support::blocked_space({1, 1, 1}, 2);
    ExternalEvaluator ext(space, shell_bridge("read hello; while read line; do echo '{\"score\": 0.5}'; done"));
    CHECK(ext.eval_global(Chromosome{{0, 1, 0}}) == 0.5);
    CHECK(ext.eval_global(Chromosome{{1, 1, 0}}) == 0.5);
    CHECK(ext.true_eval_count() == 2);
}

TEST_CASE("external evaluator failures are structured") {
    auto space = testing_support::blocked_space({1, 1, 1}, 2);
    Chromosome c{{0, 0, 0}};

    ExternalEvaluator garbage(space, shell_bridge("read hello; while read line; do echo '{\"score\": \"high\"}'; done"));
    try {
        garbage.eval_global(c);
        FAIL("expected malformed response");
    } catch (const EvaluationError& e) {
        CHECK(e.kind() == EvaluationError::Kind::malformed_response);
    }

    ExternalEvaluator out_of_range(space, shell_bridge("read hello; while read line; do echo '{\"score\": 3}'; done"));
    try {
        out_of_range.eval_global(c);
        FAIL("expected out of range");
    } catch (const EvaluationError& e) {
        CHECK(e.kind() == EvaluationError::Kind::out_of_range);
    }

    ExternalEvaluator slow(space, shell_bridge("read hello; read line; sleep 5", std::chrono::milliseconds(200)));
    const auto start = std::chrono::steady_clock::now();
    try {
        slow.eval_global(c);
        FAIL("expected timeout");
    } catch (const EvaluationError& e) {
        CHECK(e.kind() == EvaluationError::Kind::timeout);
    }
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));

    auto cfg = shell_bridge("read hello; while read line; do echo nope; done");
    cfg.assign_zero_on_error = true;
    ExternalEvaluator lenient(space, cfg);
    CHECK(lenient.eval_global(c) == 0.0);
}

TEST_CASE("external evaluators fall back to frozen-context local scores") {
    auto space = testing_support::blocked_space({1, 1, 1}, 2);
    ExternalEvaluator ext(space, shell_bridge("read hello; while read line; do echo '{\"score\": 0.25}'; done"));
    CHECK_THROWS_AS(ext.eval_local(Block{BlockTag::modality(1), {1}}), PreconditionError);
    ext.set_context(Chromosome{{0, 0, 0}});
    CHECK(ext.eval_local(Block{BlockTag::modality(1), {1}}) == 0.25);
    CHECK(ext.true_eval_count() == 1);
}

TEST_CASE("evaluator config validation names each path") {
    EvaluatorConfig cfg{"synthetic", {{"lambda", -1}, {"bogus", 1}}};
    auto problems = validate(cfg);
    CHECK(problems.size() == 2);
    EvaluatorConfig unknown{"gpu", nlohmann::json::object()};
    CHECK(validate(unknown).size() == 1);
    EvaluatorConfig ext{"external", nlohmann::json::object()};
    CHECK(validate(ext).size() == 1);
}
