#pragma once

// Synthetic data with known ground truth.
//
// Randomness comes from SplitMix64 (Steele, Lea & Flood 2014) in counter
// mode: sample i draws from its own stream seeded with mix(seed, i), so
// outputs are bit-identical across platforms and independent of how samples
// are partitioned. Uniform doubles use the top 53 bits of each output.

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "wscurate/error.hpp"
#include "wscurate/filters.hpp"
#include "wscurate/manifest.hpp"

namespace wscurate {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    /// Stream for one (seed, counter) pair.
    static SplitMix64 for_counter(std::uint64_t seed, std::uint64_t counter) {
        return SplitMix64(mix(seed ^ mix(counter + 0x632BE59BD9B4E019ULL)));
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

struct CopyPair {
    std::size_t source = 0;
    std::size_t target = 0;
    double flip_prob = 0.0;
};

struct SynthSpec {
    std::size_t n = 0;
    double class_balance = 0.5;
    std::vector<double> accuracies;
    std::vector<CopyPair> copy_pairs;
    std::uint64_t seed = 0;

    void validate() const {
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!unit(class_balance)) throw ValidationError("synthetic class balance outside [0,1]");
        if (accuracies.empty()) throw ValidationError("synthetic spec needs at least one accuracy");
        for (double a : accuracies)
            if (!unit(a)) throw ValidationError("synthetic accuracy outside [0,1]");
        std::set<std::size_t> sources, targets;
        for (const auto& c : copy_pairs) {
            if (c.source >= accuracies.size() || c.target >= accuracies.size())
                throw ValidationError("copy pair index out of range");
            if (!unit(c.flip_prob)) throw ValidationError("copy pair flip probability outside [0,1]");
            if (!targets.insert(c.target).second) throw ValidationError("copy pair targets must be distinct");
            sources.insert(c.source);
        }
        for (std::size_t t : targets)
            if (sources.count(t)) throw ValidationError("copy pair target " + std::to_string(t) + " is also a source");
    }
};

struct SynthVotes {
    VoteMatrix matrix;
    std::vector<Vote> truth;
};

/// Sample ids "s0", "s1", ... zero-padded to a common width.
inline std::vector<std::string> synth_ids(std::size_t n) {
    const std::size_t width = std::to_string(n == 0 ? 0 : n - 1).size();
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string digits = std::to_string(i);
        ids.push_back("s" + std::string(width - digits.size(), '0') + digits);
    }
    return ids;
}

/// Draws y ~ Bernoulli(class_balance) per sample and one vote per column:
/// independent columns agree with y with their accuracy; copy targets take the
/// source vote and flip it with flip_prob. Column j is named "f<j>".
inline SynthVotes generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t m = spec.accuracies.size();
    std::vector<const CopyPair*> copy_of(m, nullptr);
    for (const auto& c : spec.copy_pairs) copy_of[c.target] = &c;

    std::vector<std::vector<Vote>> cols(m, std::vector<Vote>(spec.n));
    std::vector<Vote> truth(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        auto rng = SplitMix64::for_counter(spec.seed, i);
        const Vote y = rng.bernoulli(spec.class_balance);
        truth[i] = y;
        // Every column consumes one draw in index order, so adding a copy pair
        // does not perturb the other columns.
        std::vector<double> u(m);
        for (auto& v : u) v = rng.uniform();
        for (std::size_t j = 0; j < m; ++j)
            if (!copy_of[j]) cols[j][i] = u[j] < spec.accuracies[j] ? y : static_cast<Vote>(1 - y);
        for (std::size_t j = 0; j < m; ++j)
            if (const auto* c = copy_of[j]) {
                const Vote src = cols[c->source][i];
                cols[j][i] = u[j] < c->flip_prob ? static_cast<Vote>(1 - src) : src;
            }
    }

    VoteMatrix matrix(spec.n);
    for (std::size_t j = 0; j < m; ++j) matrix.add_column({"f" + std::to_string(j), std::move(cols[j])});
    return {std::move(matrix), std::move(truth)};
}

/// Synthetic manifest whose CLIP scores and detections depend on a latent
/// quality label, with a fixed share of samples carrying no detections.
struct ManifestSynthSpec {
    std::size_t n = 0;
    double empty_fraction = 0.38;
    double class_balance = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(empty_fraction >= 0.0 && empty_fraction <= 1.0))
            throw ValidationError("empty_fraction outside [0,1]");
        if (!(class_balance >= 0.0 && class_balance <= 1.0))
            throw ValidationError("synthetic class balance outside [0,1]");
    }
};

struct SynthManifest {
    std::vector<SampleRecord> records;
    std::vector<Vote> truth;
};

inline SynthManifest generate_manifest(const ManifestSynthSpec& spec) {
    spec.validate();
    static const char* const kPhrases[] = {"dog", "cat", "person", "car", "tree", "house", "bird", "flower"};
    SynthManifest out;
    out.records.reserve(spec.n);
    out.truth.reserve(spec.n);
    const auto ids = synth_ids(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        // Stream offset keeps manifests and vote matrices from sharing draws
        // when they are generated with the same seed.
        auto rng = SplitMix64::for_counter(spec.seed ^ 0xA5A5A5A5A5A5A5A5ULL, i);
        const Vote good = rng.bernoulli(spec.class_balance);
        SampleRecord rec;
        rec.id = ids[i];
        rec.clip_score = 0.22 + (good ? 0.06 : 0.0) + 0.05 * rng.normal();

        const bool empty = rng.bernoulli(spec.empty_fraction);
        if (!empty) {
            // Good samples favour 1-4 objects of moderate size and confident logits.
            const std::size_t count = good ? 1 + static_cast<std::size_t>(rng.uniform() * 4.0)
                                           : 1 + static_cast<std::size_t>(rng.uniform() * 8.0);
            for (std::size_t k = 0; k < count; ++k) {
                Detection d;
                const double side = good ? 0.25 + 0.6 * rng.uniform() : 0.1 + 0.9 * rng.uniform();
                const double w = std::min(1.0, side * (0.8 + 0.4 * rng.uniform()));
                const double h = std::min(1.0, side * (0.8 + 0.4 * rng.uniform()));
                d.x0 = (1.0 - w) * rng.uniform();
                d.y0 = (1.0 - h) * rng.uniform();
                d.x1 = std::min(1.0, d.x0 + w);
                d.y1 = std::min(1.0, d.y0 + h);
                const double base = good ? 0.45 : 0.3;
                d.logit = std::clamp(base + 0.15 * rng.normal(), 0.0, 1.0);
                d.phrase = kPhrases[rng.next() % (sizeof kPhrases / sizeof *kPhrases)];
                rec.detections.push_back(std::move(d));
            }
        }
        out.records.push_back(std::move(rec));
        out.truth.push_back(good);
    }
    return out;
}

} // namespace wscurate
