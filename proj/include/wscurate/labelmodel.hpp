#pragma once

// Label model for ensembling binary filter votes.
//
// Each filter j is modelled as a conditionally independent noisy copy of the
// latent inclusion label y with symmetric accuracy a_j = P(vote_j = y). In
// canonical (Ising) form with votes and y mapped to {-1,+1}, a_j = sigmoid(2
// theta_j) and the class prior P(y = 1) = sigmoid(2 theta_Y). Pairwise
// correlation terms are not modelled; `edges` is always empty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "wscurate/error.hpp"
#include "wscurate/filters.hpp"

namespace wscurate {

enum class EnsembleMethod { mv, triplet, em };

inline std::string to_string(EnsembleMethod m) {
    switch (m) {
    case EnsembleMethod::mv: return "mv";
    case EnsembleMethod::triplet: return "triplet";
    case EnsembleMethod::em: return "em";
    }
    return "unknown";
}

inline std::optional<EnsembleMethod> parse_ensemble_method(const std::string& s) {
    if (s == "mv") return EnsembleMethod::mv;
    if (s == "triplet") return EnsembleMethod::triplet;
    if (s == "em") return EnsembleMethod::em;
    return std::nullopt;
}

inline constexpr double kAccuracyFloor = 1e-6;
inline constexpr double kTripletEpsilon = 1e-6;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// P(vote = y) for canonical accuracy parameter theta.
inline double accuracy_from_canonical(double theta) { return sigmoid(2.0 * theta); }

inline double canonical_from_accuracy(double accuracy) {
    if (!(accuracy > 0.0 && accuracy < 1.0))
        throw DomainError("accuracy " + std::to_string(accuracy) + " outside (0,1)");
    return 0.5 * std::log(accuracy / (1.0 - accuracy));
}

struct LabelModelParams {
    double class_balance = 0.5;
    std::vector<double> accuracies;
    std::vector<double> canonical_thetas;
    double theta_y = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;

    EnsembleMethod method = EnsembleMethod::triplet;
    bool converged = true;
    std::size_t iterations = 0;
    /// Mean per-sample observed-data log-likelihood, one entry for the
    /// starting point and one per EM iteration. Empty for other fits.
    std::vector<double> log_likelihood;
    /// Set when a triplet estimate had to be clipped below 1.
    bool clipped = false;
    std::vector<std::string> warnings;

    std::size_t size() const noexcept { return accuracies.size(); }

    static LabelModelParams from_accuracies(double class_balance, std::vector<double> accuracies) {
        LabelModelParams p;
        p.class_balance = class_balance;
        p.theta_y = canonical_from_accuracy(class_balance);
        // Store the accuracy view recomputed from theta so both views agree bit for bit.
        p.canonical_thetas.reserve(accuracies.size());
        p.accuracies.reserve(accuracies.size());
        for (double a : accuracies) {
            p.canonical_thetas.push_back(canonical_from_accuracy(a));
            p.accuracies.push_back(accuracy_from_canonical(p.canonical_thetas.back()));
        }
        return p;
    }

    void validate() const {
        if (!(class_balance > 0.0 && class_balance < 1.0))
            throw DomainError("class balance " + std::to_string(class_balance) + " outside (0,1)");
        if (accuracies.size() != canonical_thetas.size())
            throw DomainError("accuracy and canonical parameter lists differ in length");
        if (!edges.empty()) throw DomainError("correlation edges are not supported");
        for (std::size_t j = 0; j < accuracies.size(); ++j) {
            if (!(accuracies[j] > 0.0 && accuracies[j] < 1.0))
                throw DomainError("accuracy of filter " + std::to_string(j) + " outside (0,1)");
            if (std::abs(accuracy_from_canonical(canonical_thetas[j]) - accuracies[j]) > 1e-12)
                throw DomainError("accuracy and canonical parameter of filter " + std::to_string(j) + " disagree");
        }
        if (std::abs(accuracy_from_canonical(theta_y) - class_balance) > 1e-12)
            throw DomainError("class balance and theta_y disagree");
    }
};

struct InferredLabels {
    std::vector<Vote> labels;
    std::vector<double> posteriors;

    std::size_t kept() const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Vote{1}));
    }
};

namespace detail {

inline double log_sum_exp(double a, double b) {
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

/// Log-weights of each class for one vote row: log p(y, votes) up to a shared
/// constant, returned as (y = 1, y = 0).
struct LogWeights {
    std::vector<double> log_acc, log_err, log_ratio;
    double log_p1 = 0.0, log_p0 = 0.0;

    LogWeights(double class_balance, std::span<const double> accuracies)
        : log_p1(std::log(class_balance)), log_p0(std::log1p(-class_balance)) {
        for (double a : accuracies) {
            log_acc.push_back(std::log(a));
            log_err.push_back(std::log1p(-a));
            log_ratio.push_back(log_acc.back() - log_err.back());
        }
    }

    template <typename Row>
    std::pair<double, double> operator()(const Row& row) const {
        double l1 = log_p1, l0 = log_p0;
        for (std::size_t j = 0; j < log_acc.size(); ++j) {
            if (row[j]) {
                l1 += log_acc[j];
                l0 += log_err[j];
            } else {
                l1 += log_err[j];
                l0 += log_acc[j];
            }
        }
        return {l1, l0};
    }

    /// log P(y=1|votes) - log P(y=0|votes). Summed as signed per-filter terms
    /// so evidence that cancels in exact arithmetic also cancels here.
    template <typename Row>
    double log_odds(const Row& row) const {
        double d = log_p1 - log_p0;
        for (std::size_t j = 0; j < log_ratio.size(); ++j) d += row[j] ? log_ratio[j] : -log_ratio[j];
        return d;
    }
};

/// Distinct vote rows with their multiplicities. The label model depends on a
/// row only through its pattern, so fits run over at most 2^m entries.
struct VotePatterns {
    std::vector<std::vector<Vote>> rows;
    std::vector<double> counts;

    explicit VotePatterns(const VoteMatrix& matrix) {
        std::unordered_map<std::string, std::size_t> index;
        std::string key(matrix.cols(), '\0');
        for (std::size_t i = 0; i < matrix.rows(); ++i) {
            for (std::size_t j = 0; j < matrix.cols(); ++j) key[j] = static_cast<char>(matrix(i, j));
            auto [it, fresh] = index.emplace(key, rows.size());
            if (fresh) {
                rows.push_back(matrix.row(i));
                counts.push_back(0.0);
            }
            counts[it->second] += 1.0;
        }
    }
};

} // namespace detail

/// P(y = 1 | votes) under the conditionally independent model.
inline double posterior(const LabelModelParams& params, std::span<const Vote> row) {
    if (row.size() != params.size())
        throw DomainError("vote row has " + std::to_string(row.size()) + " entries, model has " +
                          std::to_string(params.size()));
    const detail::LogWeights weights(params.class_balance, params.accuracies);
    return sigmoid(weights.log_odds(row));
}

/// Majority vote: posterior is the mean vote, label 1 when at least half vote 1.
inline InferredLabels majority_vote(const VoteMatrix& matrix) {
    if (matrix.cols() == 0) throw DomainError("majority vote over an empty vote matrix");
    const std::size_t m = matrix.cols();
    InferredLabels out;
    out.labels.resize(matrix.rows());
    out.posteriors.resize(matrix.rows());
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < m; ++j) ones += matrix(i, j);
        out.posteriors[i] = static_cast<double>(ones) / static_cast<double>(m);
        out.labels[i] = 2 * ones >= m;
    }
    return out;
}

inline InferredLabels infer_labels(const LabelModelParams& params, const VoteMatrix& matrix) {
    params.validate();
    if (matrix.cols() != params.size())
        throw DomainError("vote matrix has " + std::to_string(matrix.cols()) + " columns, model has " +
                          std::to_string(params.size()));
    const detail::LogWeights weights(params.class_balance, params.accuracies);
    InferredLabels out;
    out.labels.resize(matrix.rows());
    out.posteriors.resize(matrix.rows());
    std::vector<Vote> row(matrix.cols());
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = matrix(i, j);
        const double p = sigmoid(weights.log_odds(row));
        out.posteriors[i] = p;
        out.labels[i] = p >= 0.5;
    }
    return out;
}

/// Same accuracies, different prior.
inline LabelModelParams with_class_balance(LabelModelParams params, double class_balance) {
    params.class_balance = class_balance;
    params.theta_y = canonical_from_accuracy(class_balance);
    return params;
}

/// Empirical second moments E[v_j v_k] of the votes mapped to {-1,+1}.
inline std::vector<std::vector<double>> signed_vote_moments(const VoteMatrix& matrix) {
    const std::size_t m = matrix.cols(), n = matrix.rows();
    if (n == 0) throw DomainError("moments of an empty vote matrix");
    std::vector<std::vector<double>> agree(m, std::vector<double>(m, 0.0));
    const detail::VotePatterns patterns(matrix);
    for (std::size_t r = 0; r < patterns.rows.size(); ++r) {
        const auto& row = patterns.rows[r];
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = j; k < m; ++k)
                if (row[j] == row[k]) agree[j][k] += patterns.counts[r];
    }
    std::vector<std::vector<double>> moments(m, std::vector<double>(m, 1.0));
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = j + 1; k < m; ++k)
            moments[j][k] = moments[k][j] = 2.0 * agree[j][k] / static_cast<double>(n) - 1.0;
    return moments;
}

/// Closed-form triplet estimator. For every filter j and pair (k, l) of other
/// filters, |E[v_j y]| = sqrt(|M_jk M_jl / M_kl|); the per-filter estimate is the
/// median over all pairs whose |M_kl| is at least 1e-6. The class balance is
/// taken as given.
inline LabelModelParams fit_triplet(const VoteMatrix& matrix, double class_balance) {
    const std::size_t m = matrix.cols();
    if (m < 3) throw DomainError("triplet estimation needs at least 3 filters, got " + std::to_string(m));
    if (!(class_balance > 0.0 && class_balance < 1.0))
        throw DomainError("class balance " + std::to_string(class_balance) + " outside (0,1)");

    const auto M = signed_vote_moments(matrix);
    std::vector<double> accuracies(m);
    bool clipped = false;
    std::vector<std::string> warnings;
    for (std::size_t j = 0; j < m; ++j) {
        std::vector<double> estimates;
        std::pair<std::size_t, std::size_t> degenerate{0, 0};
        for (std::size_t k = 0; k < m; ++k) {
            if (k == j) continue;
            for (std::size_t l = k + 1; l < m; ++l) {
                if (l == j) continue;
                if (std::abs(M[k][l]) < kTripletEpsilon) {
                    degenerate = {k, l};
                    continue;
                }
                estimates.push_back(std::sqrt(std::abs(M[j][k] * M[j][l] / M[k][l])));
            }
        }
        if (estimates.empty())
            throw DegenerateTripletError("filters " + std::to_string(degenerate.first) + " and " +
                                             std::to_string(degenerate.second) +
                                             " are uncorrelated (|E[v_k v_l]| < 1e-6); accuracy of filter " +
                                             std::to_string(j) + " is not identifiable",
                                         degenerate.first, degenerate.second);
        std::sort(estimates.begin(), estimates.end());
        const std::size_t h = estimates.size() / 2;
        double mean_param = estimates.size() % 2 ? estimates[h] : 0.5 * (estimates[h - 1] + estimates[h]);
        if (mean_param > 1.0 - kAccuracyFloor) {
            mean_param = 1.0 - kAccuracyFloor;
            clipped = true;
            warnings.push_back("triplet estimate for filter " + std::to_string(j) + " (" + matrix.column(j).name +
                               ") clipped to 1 - 1e-6");
        }
        accuracies[j] = 0.5 * (1.0 + mean_param);
    }

    auto params = LabelModelParams::from_accuracies(class_balance, std::move(accuracies));
    params.method = EnsembleMethod::triplet;
    params.clipped = clipped;
    params.warnings = std::move(warnings);
    return params;
}

/// Mean per-sample observed-data log-likelihood of the vote matrix.
inline double log_likelihood(const LabelModelParams& params, const VoteMatrix& matrix) {
    const detail::VotePatterns patterns(matrix);
    const detail::LogWeights weights(params.class_balance, params.accuracies);
    double total = 0.0;
    for (std::size_t r = 0; r < patterns.rows.size(); ++r) {
        const auto [l1, l0] = weights(patterns.rows[r]);
        total += patterns.counts[r] * detail::log_sum_exp(l1, l0);
    }
    return total / static_cast<double>(matrix.rows());
}

struct EmOptions {
    std::size_t max_iters = 1000;
    double tol = 1e-6;
    double init_accuracy = 0.7;
};

/// Expectation-maximization with the class prior held fixed. Stops once no
/// accuracy moves by `tol` or more in one iteration.
inline LabelModelParams fit_em(const VoteMatrix& matrix, double class_balance, const EmOptions& opt = {}) {
    const std::size_t m = matrix.cols();
    if (m < 2) throw DomainError("EM needs at least 2 filters, got " + std::to_string(m));
    if (matrix.rows() == 0) throw DomainError("EM over an empty vote matrix");
    if (opt.max_iters < 1) throw DomainError("EM needs max_iters >= 1");
    if (!(opt.tol > 0.0)) throw DomainError("EM needs tol > 0");
    if (!(class_balance > 0.0 && class_balance < 1.0))
        throw DomainError("class balance " + std::to_string(class_balance) + " outside (0,1)");

    const detail::VotePatterns patterns(matrix);
    const double n = static_cast<double>(matrix.rows());
    const std::size_t R = patterns.rows.size();
    std::vector<double> acc(m, opt.init_accuracy);
    std::vector<double> resp(R);

    auto e_step = [&] {
        const detail::LogWeights weights(class_balance, acc);
        double ll = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            const auto [l1, l0] = weights(patterns.rows[r]);
            resp[r] = sigmoid(weights.log_odds(patterns.rows[r]));
            ll += patterns.counts[r] * detail::log_sum_exp(l1, l0);
        }
        return ll / n;
    };

    LabelModelParams out;
    out.log_likelihood.push_back(e_step());
    out.converged = false;
    std::size_t it = 0;
    while (it < opt.max_iters) {
        ++it;
        double max_change = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double agree = 0.0;
            for (std::size_t r = 0; r < R; ++r)
                agree += patterns.counts[r] * (patterns.rows[r][j] ? resp[r] : 1.0 - resp[r]);
            const double a = std::clamp(agree / n, kAccuracyFloor, 1.0 - kAccuracyFloor);
            max_change = std::max(max_change, std::abs(a - acc[j]));
            acc[j] = a;
        }
        out.log_likelihood.push_back(e_step());
        if (max_change < opt.tol) {
            out.converged = true;
            break;
        }
    }

    auto params = LabelModelParams::from_accuracies(class_balance, std::move(acc));
    params.method = EnsembleMethod::em;
    params.converged = out.converged;
    params.iterations = it;
    params.log_likelihood = std::move(out.log_likelihood);
    if (!params.converged)
        params.warnings.push_back("EM stopped after " + std::to_string(it) + " iteration(s) without converging");
    return params;
}

inline nlohmann::json to_json(const LabelModelParams& p) {
    return {{"schema_version", 1},
            {"class_balance", p.class_balance},
            {"accuracies", p.accuracies},
            {"thetas", p.canonical_thetas},
            {"theta_y", p.theta_y},
            {"method", to_string(p.method)},
            {"converged", p.converged}};
}

inline LabelModelParams params_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != 1) throw ParseError("unsupported params schema_version");
        LabelModelParams p;
        p.class_balance = j.at("class_balance").get<double>();
        p.accuracies = j.at("accuracies").get<std::vector<double>>();
        p.canonical_thetas = j.at("thetas").get<std::vector<double>>();
        p.theta_y = j.at("theta_y").get<double>();
        const auto method = parse_ensemble_method(j.at("method").get<std::string>());
        if (!method || *method == EnsembleMethod::mv) throw ParseError("params method must be \"triplet\" or \"em\"");
        p.method = *method;
        p.converged = j.at("converged").get<bool>();
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed label model params: ") + e.what());
    }
}

} // namespace wscurate
