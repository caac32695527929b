#pragma once

// Filter correlation, per-filter accuracy, and curation summary reports.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "wscurate/error.hpp"
#include "wscurate/filters.hpp"
#include "wscurate/labelmodel.hpp"
#include "wscurate/manifest.hpp"

namespace wscurate {

struct CorrelationMatrix {
    std::vector<std::vector<double>> values;
    /// Columns whose votes never vary; their correlations are reported as 0.
    std::vector<std::size_t> constant_columns;

    double operator()(std::size_t j, std::size_t k) const { return values[j][k]; }
    std::size_t size() const noexcept { return values.size(); }
};

/// Pearson (phi) correlation between the binary vote columns.
inline CorrelationMatrix correlation_matrix(const VoteMatrix& matrix) {
    const std::size_t n = matrix.rows(), m = matrix.cols();
    if (m == 0) throw DomainError("correlation of an empty vote matrix");
    if (n < 2) throw DomainError("correlation needs at least 2 samples, got " + std::to_string(n));

    // Exact integer co-occurrence counts, so the result does not depend on row order.
    std::vector<std::vector<std::uint64_t>> both(m, std::vector<std::uint64_t>(m, 0));
    for (std::size_t j = 0; j < m; ++j) {
        const auto& a = matrix.column(j).votes;
        for (std::size_t k = j; k < m; ++k) {
            const auto& b = matrix.column(k).votes;
            std::uint64_t c = 0;
            for (std::size_t i = 0; i < n; ++i) c += a[i] & b[i];
            both[j][k] = c;
        }
    }

    const double dn = static_cast<double>(n);
    CorrelationMatrix out;
    out.values.assign(m, std::vector<double>(m, 0.0));
    std::vector<double> mean(m);
    for (std::size_t j = 0; j < m; ++j) {
        mean[j] = static_cast<double>(both[j][j]) / dn;
        if (both[j][j] == 0 || both[j][j] == n) out.constant_columns.push_back(j);
        out.values[j][j] = 1.0;
    }
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = j + 1; k < m; ++k) {
            const double var = mean[j] * (1.0 - mean[j]) * mean[k] * (1.0 - mean[k]);
            double r = 0.0;
            if (var > 0.0) {
                const double cov = static_cast<double>(both[j][k]) / dn - mean[j] * mean[k];
                r = std::clamp(cov / std::sqrt(var), -1.0, 1.0);
            }
            out.values[j][k] = out.values[k][j] = r;
        }
    }
    return out;
}

/// Estimated P(vote_j = y) per filter, in column order, recomputed from the
/// canonical parameters.
inline std::vector<double> estimated_accuracy_report(const LabelModelParams& params) {
    std::vector<double> out;
    out.reserve(params.canonical_thetas.size());
    for (double theta : params.canonical_thetas) out.push_back(accuracy_from_canonical(theta));
    return out;
}

struct CurationReport {
    std::size_t n_total = 0;
    std::vector<std::pair<std::string, std::size_t>> per_filter_kept;
    std::vector<std::string> kept_ids;
    CorrelationMatrix correlation;
    std::vector<double> estimated_accuracies;
    EnsembleMethod ensemble_method = EnsembleMethod::mv;
    double class_balance = 0.0;
    std::vector<std::string> warnings;
};

/// Assembles the report for one curation run. Estimated accuracies are only
/// available when a label model was fitted.
inline CurationReport summarize(const SampleTable& table, const VoteMatrix& matrix, const InferredLabels& labels,
                                const std::optional<LabelModelParams>& params, EnsembleMethod method,
                                double class_balance) {
    if (matrix.rows() != table.size())
        throw DomainError("vote matrix has " + std::to_string(matrix.rows()) + " rows, table has " +
                          std::to_string(table.size()));
    if (labels.labels.size() != table.size())
        throw DomainError("label count " + std::to_string(labels.labels.size()) + " differs from table size " +
                          std::to_string(table.size()));
    if (params && params->size() != matrix.cols())
        throw DomainError("label model covers " + std::to_string(params->size()) + " filters, matrix has " +
                          std::to_string(matrix.cols()));

    CurationReport r;
    r.n_total = table.size();
    r.ensemble_method = method;
    r.class_balance = class_balance;
    for (const auto& c : matrix.columns()) r.per_filter_kept.emplace_back(c.name, c.kept());
    for (std::size_t i = 0; i < table.size(); ++i)
        if (labels.labels[i]) r.kept_ids.push_back(table.record(i).id);

    if (table.unknown_field_count() > 0)
        r.warnings.push_back("manifest contained " + std::to_string(table.unknown_field_count()) +
                             " unknown field(s); ignored");
    if (matrix.rows() >= 2) {
        r.correlation = correlation_matrix(matrix);
        for (std::size_t j : r.correlation.constant_columns)
            r.warnings.push_back("filter \"" + matrix.column(j).name +
                                 "\" votes the same on every sample; its correlations are reported as 0");
    } else {
        r.warnings.push_back("fewer than 2 samples; correlation matrix omitted");
    }
    if (params) {
        r.estimated_accuracies = estimated_accuracy_report(*params);
        r.warnings.insert(r.warnings.end(), params->warnings.begin(), params->warnings.end());
    }
    return r;
}

inline nlohmann::ordered_json to_json(const CurationReport& r) {
    nlohmann::ordered_json per_filter = nlohmann::ordered_json::object();
    for (const auto& [name, count] : r.per_filter_kept) per_filter[name] = count;
    return {{"schema_version", 1},
            {"n_total", r.n_total},
            {"n_kept", r.kept_ids.size()},
            {"ensemble_method", to_string(r.ensemble_method)},
            {"class_balance", r.class_balance},
            {"per_filter_kept", std::move(per_filter)},
            {"correlation", r.correlation.values},
            {"estimated_accuracies", r.estimated_accuracies},
            {"warnings", r.warnings},
            {"kept_ids", r.kept_ids}};
}

inline void write_kept_ids(std::ostream& out, const std::vector<std::string>& ids) {
    for (const auto& id : ids) out << id << '\n';
}

} // namespace wscurate
