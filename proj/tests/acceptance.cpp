// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "wscurate/pipeline.hpp"

using namespace wscurate;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double agreement(const std::vector<Vote>& a, const std::vector<Vote>& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::string join(const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    return os.str();
}

struct Outcome {
    bool pass;
    std::string detail;
};

const std::vector<double> kRecoveryAccuracies{0.9, 0.85, 0.8, 0.7, 0.6};
const SynthSpec kRecoverySpec{200000, 0.3, kRecoveryAccuracies, {}, 20240601};

Outcome max_error_within(const std::vector<double>& est, const std::vector<double>& truth, double tol) {
    double worst = 0.0;
    for (std::size_t j = 0; j < truth.size(); ++j) worst = std::max(worst, std::abs(est[j] - truth[j]));
    return {worst <= tol, "estimates [" + join(est) + "], max |error| " + std::to_string(worst)};
}

Outcome triplet_recovery() {
    const auto start = Clock::now();
    const auto synth = generate(kRecoverySpec);
    const auto params = fit_triplet(synth.matrix, 0.3);
    const double elapsed = seconds_since(start);
    auto r = max_error_within(params.accuracies, kRecoveryAccuracies, 0.02);
    r.pass = r.pass && elapsed < 10.0;
    r.detail += ", " + std::to_string(elapsed) + " s";
    return r;
}

Outcome em_recovery() {
    const auto synth = generate(kRecoverySpec);
    const auto params = fit_em(synth.matrix, 0.3, EmOptions{1000, 1e-6});
    auto r = max_error_within(params.accuracies, kRecoveryAccuracies, 0.02);
    double worst_drop = 0.0;
    for (std::size_t t = 1; t < params.log_likelihood.size(); ++t)
        worst_drop = std::max(worst_drop, params.log_likelihood[t - 1] - params.log_likelihood[t]);
    r.pass = r.pass && worst_drop <= 1e-9;
    r.detail += ", " + std::to_string(params.iterations) + " iterations, converged=" + (params.converged ? "yes" : "no") +
                ", largest log-likelihood drop " + sci(worst_drop);
    return r;
}

Outcome posterior_equivalence() {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t m = 1; m <= 4; ++m)
        for (int draw = 0; draw < 20; ++draw) {
            std::vector<double> acc(m);
            for (auto& a : acc) a = u(gen);
            const auto params = LabelModelParams::from_accuracies(u(gen), acc);
            for (unsigned mask = 0; mask < (1u << m); ++mask) {
                std::vector<int> row01(m);
                std::vector<Vote> row(m);
                for (std::size_t j = 0; j < m; ++j) row[j] = static_cast<Vote>(row01[j] = (mask >> j) & 1u);
                const double diff = std::abs(posterior(params, row) -
                                             oracle::ising_posterior(params.canonical_thetas, params.theta_y, row01));
                worst = std::max(worst, diff);
                ++checked;
            }
        }
    return {worst <= 1e-12, std::to_string(checked) + " rows, max |difference| " + sci(worst)};
}

Outcome ws_beats_mv() {
    const auto synth = generate({100000, 0.5, {0.9, 0.6, 0.55, 0.55, 0.55}, {}, 314159});
    const auto params = fit_triplet(synth.matrix, 0.5);
    const double ws = agreement(infer_labels(params, synth.matrix).labels, synth.truth);
    const double mv = agreement(majority_vote(synth.matrix).labels, synth.truth);
    return {ws > mv, "WS agreement " + std::to_string(ws) + " vs MV " + std::to_string(mv)};
}

Outcome filter_exactness() {
    std::string detail;
    bool ok = true;
    for (std::size_t n : {1u, 7u, 10u, 997u, 10000u, 33333u}) {
        const SampleTable table(generate_manifest({n, 0.38, 0.5, n}).records);
        const auto expected = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(n) - 1e-9));
        const auto a = evaluate_filter(ClipTopFraction{0.3}, table);
        const auto b = evaluate_filter(ClipTopFraction{0.3}, table);
        ok = ok && a.kept() == expected && a.votes == b.votes;
        for (const FilterSpec& od : {FilterSpec{OdAvgLogitTopFraction{0.3}}, FilterSpec{OdMaxLogitTopFraction{0.3}},
                                     FilterSpec{OdNumObjectsRange{1, 4}}, FilterSpec{OdRelAreaBand{0.05, 0.95}},
                                     FilterSpec{And{{OdNumObjectsRange{1, 3}, ClipTopFraction{0.5}}}}}) {
            const auto v = evaluate_filter(od, table);
            for (std::size_t i = 0; i < n; ++i)
                if (table.metrics(i).num_objects == 0 && v.votes[i] != 0) ok = false;
        }
        detail += "n=" + std::to_string(n) + " kept " + std::to_string(a.kept()) + "/" + std::to_string(expected) + "; ";
    }
    return {ok, detail + "zero-detection samples never kept by OD filters"};
}

Outcome threshold_semantics() {
    // Each entry: detection boxes (w x h at the origin) plus the hand-derived
    // expected votes for count range [1,4] and area band [0.05,0.95].
    struct Case {
        std::vector<std::pair<double, double>> boxes;
        Vote count, area;
    };
    auto rep = [](std::size_t k, std::pair<double, double> b) { return std::vector<std::pair<double, double>>(k, b); };
    const std::vector<Case> cases{
        {{}, 0, 0},                                          // no detections
        {{{0.5, 0.5}}, 1, 1},                                // area 0.25
        {rep(4, {0.5, 0.5}), 1, 1},                          // 4 objects, upper count bound
        {rep(5, {0.5, 0.5}), 0, 1},                          // 5 objects
        {{{0.3, 0.1}}, 1, 0},                                // area 0.03
        {{{0.5, 0.1}}, 1, 1},                                // area exactly 0.05
        {{{1.0, 0.95}}, 1, 1},                               // area exactly 0.95
        {{{1.0, 1.0}}, 1, 0},                                // whole frame
        {{{0.2, 0.1}, {1.0, 0.1}}, 1, 1},                    // mean of 0.02 and 0.1 is 0.06
        {{{1.0, 0.9}, {1.0, 1.0}, {1.0, 1.0}}, 1, 0},        // mean 0.9667
        {{{0.2, 0.2}, {0.2, 0.2}}, 1, 0},                    // mean 0.04
        {rep(6, {1.0, 0.5}), 0, 1},                          // 6 objects, area 0.5
        {rep(8, {0.1, 0.01}), 0, 0},                         // 8 tiny objects
        {{{1.0, 0.5}, {0.1, 0.01}, {0.1, 0.01}}, 1, 1},      // mean 0.1673
        {{{0.98, 0.98}}, 1, 0},                              // area 0.9604
        {{{0.499, 0.1}}, 1, 0},                              // area 0.0499
        {{{0.97, 0.97}}, 1, 1},                              // area 0.9409
        {rep(4, {0.96, 1.0}), 1, 0},                         // 4 objects, area 0.96
        {rep(5, {1.0, 0.5}), 0, 1},                          // 5 objects, area 0.5
        {{{0.0, 0.0}, {0.0, 0.0}}, 1, 0},                    // degenerate point boxes
    };
    std::vector<SampleRecord> records;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        SampleRecord r{"hand" + std::to_string(i), 0.0, {}};
        for (auto [w, h] : cases[i].boxes) r.detections.push_back({0.0, 0.0, w, h, 0.5, "object"});
        records.push_back(std::move(r));
    }
    const SampleTable table(records);
    const auto count = evaluate_filter(OdNumObjectsRange{1, 4}, table).votes;
    const auto area = evaluate_filter(OdRelAreaBand{0.05, 0.95}, table).votes;
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        mismatches += (count[i] != cases[i].count) + (area[i] != cases[i].area);
    return {mismatches == 0 && cases.size() == 20,
            std::to_string(cases.size()) + " records, " + std::to_string(mismatches) + " mismatched votes"};
}

Outcome monotone_class_balance() {
    const auto synth = generate({50000, 0.3, {0.85, 0.75, 0.7, 0.65, 0.6}, {}, 2718});
    const auto fitted = fit_triplet(synth.matrix, 0.3);
    std::vector<Vote> prev(synth.matrix.rows(), 0);
    std::string sizes;
    bool nested = true;
    for (double cb : {0.1, 0.2, 0.3, 0.5}) {
        const auto labels = infer_labels(with_class_balance(fitted, cb), synth.matrix).labels;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (prev[i] && !labels[i]) nested = false;
        sizes += std::to_string(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Vote{1}))) + " ";
        prev = labels;
    }
    return {nested, "kept sizes " + sizes + (nested ? "(nested)" : "(not nested)")};
}

Outcome diagnostics() {
    const auto copies = generate({200000, 0.3, {0.8, 0.5}, {{0, 1, 0.05}}, 11});
    const double copy_corr = correlation_matrix(copies.matrix)(0, 1);

    const auto indep = generate({200000, 0.3, {0.85, 0.7}, {}, 12});
    double residual = 0.0;
    for (Vote y : {Vote{0}, Vote{1}}) {
        std::vector<Vote> a, b;
        for (std::size_t i = 0; i < indep.truth.size(); ++i)
            if (indep.truth[i] == y) {
                a.push_back(indep.matrix(i, 0));
                b.push_back(indep.matrix(i, 1));
            }
        const auto c = correlation_matrix(VoteMatrix({{"a", a}, {"b", b}}));
        residual = std::max(residual, std::abs(c(0, 1)));
    }

    const auto fitted = fit_em(generate(kRecoverySpec).matrix, 0.3);
    const bool exact = estimated_accuracy_report(fitted) == fitted.accuracies;
    return {copy_corr > 0.85 && residual < 0.02 && exact,
            "noisy-copy correlation " + std::to_string(copy_corr) + ", residual correlation " +
                std::to_string(residual) + ", accuracy report " + (exact ? "exact" : "differs")};
}

Outcome end_to_end_determinism() {
    oracle::TempDir dir;
    run_synth(nlohmann::json{{"schema_version", 1}, {"kind", "manifest"}, {"n", 10000}, {"seed", 99}}, dir.path());
    double total = 0.0;
    for (const char* out : {"run1", "run2"}) {
        const std::string cmd = std::string(CURATE_BIN) + " --config " + dir.file("config.json") + " --output-dir " +
                                dir.file(out) + " >/dev/null";
        const auto start = Clock::now();
        if (std::system(cmd.c_str()) != 0) return {false, std::string("curate failed for ") + out};
        total += seconds_since(start);
    }
    const auto ids1 = oracle::slurp(dir.file("run1/kept_ids.txt")), ids2 = oracle::slurp(dir.file("run2/kept_ids.txt"));
    const auto rep1 = oracle::slurp(dir.file("run1/report.json")), rep2 = oracle::slurp(dir.file("run2/report.json"));
    const auto par1 = oracle::slurp(dir.file("run1/params.json")), par2 = oracle::slurp(dir.file("run2/params.json"));
    const bool same = !ids1.empty() && ids1 == ids2 && rep1 == rep2 && par1 == par2;
    return {same && total < 5.0, std::string(same ? "byte-identical outputs" : "outputs differ") + ", two runs took " +
                                     std::to_string(total) + " s"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 triplet recovery", triplet_recovery},
        {"2 EM recovery", em_recovery},
        {"3 posterior oracle equivalence", posterior_equivalence},
        {"4 WS beats MV", ws_beats_mv},
        {"5 filter exactness", filter_exactness},
        {"6 threshold semantics", threshold_semantics},
        {"7 monotone class balance", monotone_class_balance},
        {"8 diagnostics", diagnostics},
        {"9 end-to-end determinism", end_to_end_determinism},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome r;
        try {
            r = check();
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        failures += !r.pass;
        std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", name.c_str(), r.detail.c_str());
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
