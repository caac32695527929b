#pragma once

// Rule-based filters over a SampleTable. Each filter maps every sample to a
// binary inclusion vote; a VoteMatrix collects one column per filter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "json.hpp"

#include "wscurate/error.hpp"
#include "wscurate/manifest.hpp"

namespace wscurate {

using Vote = std::uint8_t;

struct ClipTopFraction { double fraction = 0.0; };
struct OdAvgLogitTopFraction { double fraction = 0.0; };
struct OdMaxLogitTopFraction { double fraction = 0.0; };
struct OdNumObjectsRange { long long min = 1; long long max = 1; };
struct OdRelAreaBand { double lo = 0.0; double hi = 1.0; };
struct ExternalVotes { std::string path; std::string name; };

struct FilterSpec;

/// Intersection of at least two child filters.
struct And { std::vector<FilterSpec> children; };

struct FilterSpec {
    using Rule = std::variant<ClipTopFraction, OdAvgLogitTopFraction, OdMaxLogitTopFraction,
                              OdNumObjectsRange, OdRelAreaBand, ExternalVotes, And>;
    Rule rule;

    FilterSpec() = default;
    template <typename R>
        requires std::is_constructible_v<Rule, R&&>
    FilterSpec(R&& r) : rule(std::forward<R>(r)) {}  // NOLINT(google-explicit-constructor)
};

struct NamedFilter {
    std::string name;
    FilterSpec spec;
};

struct VoteVector {
    std::string name;
    std::vector<Vote> votes;

    std::size_t kept() const {
        return static_cast<std::size_t>(std::count(votes.begin(), votes.end(), Vote{1}));
    }
};

/// Column-major n x m table of binary votes with unique column names.
class VoteMatrix {
public:
    VoteMatrix() = default;
    explicit VoteMatrix(std::size_t n) : n_(n) {}

    VoteMatrix(std::vector<VoteVector> columns) {  // NOLINT(google-explicit-constructor)
        if (!columns.empty()) n_ = columns.front().votes.size();
        for (auto& c : columns) add_column(std::move(c));
    }

    void add_column(VoteVector column) {
        if (columns_.empty() && n_ == 0) n_ = column.votes.size();
        if (column.votes.size() != n_)
            throw ValidationError("vote column \"" + column.name + "\" has length " +
                                  std::to_string(column.votes.size()) + ", expected " + std::to_string(n_));
        for (Vote v : column.votes)
            if (v > 1) throw ValidationError("vote column \"" + column.name + "\" holds a non-binary value");
        for (const auto& c : columns_)
            if (c.name == column.name) throw ValidationError("duplicate vote column name \"" + column.name + "\"");
        columns_.push_back(std::move(column));
    }

    std::size_t rows() const noexcept { return n_; }
    std::size_t cols() const noexcept { return columns_.size(); }

    const std::vector<VoteVector>& columns() const noexcept { return columns_; }
    const VoteVector& column(std::size_t j) const { return columns_.at(j); }
    Vote operator()(std::size_t i, std::size_t j) const { return columns_[j].votes[i]; }

    std::vector<Vote> row(std::size_t i) const {
        std::vector<Vote> out(columns_.size());
        for (std::size_t j = 0; j < columns_.size(); ++j) out[j] = columns_[j].votes[i];
        return out;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& c : columns_) out.push_back(c.name);
        return out;
    }

private:
    std::size_t n_ = 0;
    std::vector<VoteVector> columns_;
};

/// Number of kept items for a top-fraction rule: ceil(fraction * n), with
/// products within 1e-9 of an integer snapped to it so 0.3 * 10 keeps 3.
inline std::size_t top_fraction_count(double fraction, std::size_t n) {
    const double x = fraction * static_cast<double>(n);
    const double nearest = std::round(x);
    double k = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
    k = std::clamp(k, n == 0 ? 0.0 : 1.0, static_cast<double>(n));
    return static_cast<std::size_t>(k);
}

/// Indices of the ceil(fraction * n) largest values, ascending. Ties at the
/// cutoff go to the lower index.
inline std::vector<std::size_t> percentile_cutoff(const std::vector<double>& values, double fraction) {
    if (values.empty()) throw DomainError("percentile_cutoff over an empty value list");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw DomainError("top fraction " + std::to_string(fraction) + " outside (0,1]");
    for (double v : values)
        if (std::isnan(v)) throw DomainError("percentile_cutoff over NaN value");

    const std::size_t k = top_fraction_count(fraction, values.size());
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return values[a] > values[b] || (values[a] == values[b] && a < b);
    };
    if (k < order.size()) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

inline std::string describe(const FilterSpec& spec);

namespace detail {

inline std::string fmt_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

/// Top-fraction votes over the samples selected by `eligible`; others vote 0.
template <typename Select, typename Value>
std::vector<Vote> top_fraction_votes(const SampleTable& table, double fraction, Select eligible, Value value) {
    std::vector<Vote> votes(table.size(), 0);
    std::vector<double> values;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (!eligible(i)) continue;
        values.push_back(value(i));
        index.push_back(i);
    }
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw DomainError("top fraction " + std::to_string(fraction) + " outside (0,1]");
    if (values.empty()) return votes;
    for (std::size_t pos : percentile_cutoff(values, fraction)) votes[index[pos]] = 1;
    return votes;
}

} // namespace detail

/// Reads an external votes file ({"id", "vote"} per line) and aligns it to
/// the table's record order.
inline VoteVector import_external_votes(const std::string& path, const SampleTable& table, std::string name = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open votes file \"" + path + "\"", path);

    std::unordered_map<std::string, std::size_t> position;
    position.reserve(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) position.emplace(table.record(i).id, i);

    VoteVector out{name.empty() ? path : std::move(name), std::vector<Vote>(table.size(), 0)};
    std::vector<bool> seen(table.size(), false);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::blank(line)) continue;
        const auto obj = detail::parse_line(line, lineno);
        const std::string id = detail::require_string(obj, "id", lineno);
        auto vit = obj.find("vote");
        if (vit == obj.end()) throw ParseError("missing field \"vote\" on line " + std::to_string(lineno), lineno);
        if (!vit->is_number_integer() || (vit->get<long long>() != 0 && vit->get<long long>() != 1))
            throw ValidationError("vote for \"" + id + "\" on line " + std::to_string(lineno) + " of \"" + path +
                                  "\" is not 0 or 1");
        auto pit = position.find(id);
        if (pit == position.end())
            throw AlignmentError("votes file \"" + path + "\" names unknown id \"" + id + "\" on line " +
                                 std::to_string(lineno));
        if (seen[pit->second])
            throw AlignmentError("votes file \"" + path + "\" repeats id \"" + id + "\" on line " + std::to_string(lineno));
        seen[pit->second] = true;
        out.votes[pit->second] = static_cast<Vote>(vit->get<long long>());
    }

    std::vector<std::string> missing;
    for (std::size_t i = 0; i < table.size(); ++i)
        if (!seen[i]) missing.push_back(table.record(i).id);
    if (!missing.empty()) {
        std::string msg = "votes file \"" + path + "\" is missing " + std::to_string(missing.size()) + " id(s):";
        const std::size_t shown = std::min<std::size_t>(missing.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) msg += " " + missing[i];
        if (shown < missing.size()) msg += " ...";
        throw AlignmentError(msg);
    }
    return out;
}

inline void write_votes(std::ostream& out, const std::vector<std::string>& ids, const std::vector<Vote>& votes) {
    if (ids.size() != votes.size()) throw ValidationError("id and vote lists differ in length");
    for (std::size_t i = 0; i < ids.size(); ++i)
        out << nlohmann::json{{"id", ids[i]}, {"vote", static_cast<int>(votes[i])}}.dump() << '\n';
}

inline void write_votes(const std::string& path, const std::vector<std::string>& ids, const std::vector<Vote>& votes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write votes file \"" + path + "\"", path);
    write_votes(out, ids, votes);
}

inline VoteVector evaluate_filter(const FilterSpec& spec, const SampleTable& table, std::string name = {}) {
    if (name.empty()) name = describe(spec);
    struct Visitor {
        const SampleTable& table;
        const std::vector<DetectionMetrics>& metrics;

        auto has_objects() const {
            return [&m = metrics](std::size_t i) { return m[i].num_objects > 0; };
        }

        std::vector<Vote> operator()(const ClipTopFraction& f) const {
            return detail::top_fraction_votes(table, f.fraction, [](std::size_t) { return true; },
                                              [&](std::size_t i) { return table.record(i).clip_score; });
        }
        std::vector<Vote> operator()(const OdAvgLogitTopFraction& f) const {
            return detail::top_fraction_votes(table, f.fraction, has_objects(),
                                              [&](std::size_t i) { return *metrics[i].avg_logit; });
        }
        std::vector<Vote> operator()(const OdMaxLogitTopFraction& f) const {
            return detail::top_fraction_votes(table, f.fraction, has_objects(),
                                              [&](std::size_t i) { return *metrics[i].max_logit; });
        }
        std::vector<Vote> operator()(const OdNumObjectsRange& f) const {
            if (f.min < 1 || f.max < f.min)
                throw DomainError("object count range [" + std::to_string(f.min) + ", " + std::to_string(f.max) +
                                  "] must satisfy 1 <= min <= max");
            std::vector<Vote> v(table.size(), 0);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const auto c = static_cast<long long>(metrics[i].num_objects);
                v[i] = c >= f.min && c <= f.max;
            }
            return v;
        }
        std::vector<Vote> operator()(const OdRelAreaBand& f) const {
            if (!(f.lo >= 0.0 && f.lo < f.hi && f.hi <= 1.0))
                throw DomainError("relative area band [" + detail::fmt_number(f.lo) + ", " + detail::fmt_number(f.hi) +
                                  "] must satisfy 0 <= lo < hi <= 1");
            std::vector<Vote> v(table.size(), 0);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const auto& a = metrics[i].avg_rel_area;
                v[i] = a && *a >= f.lo && *a <= f.hi;
            }
            return v;
        }
        std::vector<Vote> operator()(const ExternalVotes& f) const {
            return import_external_votes(f.path, table, f.name).votes;
        }
        std::vector<Vote> operator()(const And& f) const {
            if (f.children.size() < 2) throw DomainError("intersection needs at least two children");
            std::vector<Vote> v(table.size(), 1);
            for (const auto& child : f.children) {
                const auto c = std::visit(*this, child.rule);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] &= c[i];
            }
            return v;
        }
    };

    return VoteVector{std::move(name), std::visit(Visitor{table, table.metrics()}, spec.rule)};
}

inline VoteMatrix build_vote_matrix(const std::vector<NamedFilter>& specs, const SampleTable& table) {
    if (specs.empty()) throw DomainError("no filters to evaluate");
    VoteMatrix matrix(table.size());
    for (const auto& f : specs) matrix.add_column(evaluate_filter(f.spec, table, f.name));
    return matrix;
}

/// Short human-readable label, e.g. "clip_top(0.3)&od_num(1,4)".
inline std::string describe(const FilterSpec& spec) {
    using detail::fmt_number;
    struct Visitor {
        std::string operator()(const ClipTopFraction& f) const { return "clip_top(" + fmt_number(f.fraction) + ")"; }
        std::string operator()(const OdAvgLogitTopFraction& f) const { return "od_avg_logit_top(" + fmt_number(f.fraction) + ")"; }
        std::string operator()(const OdMaxLogitTopFraction& f) const { return "od_max_logit_top(" + fmt_number(f.fraction) + ")"; }
        std::string operator()(const OdNumObjectsRange& f) const {
            return "od_num(" + std::to_string(f.min) + "," + std::to_string(f.max) + ")";
        }
        std::string operator()(const OdRelAreaBand& f) const { return "od_area(" + fmt_number(f.lo) + "," + fmt_number(f.hi) + ")"; }
        std::string operator()(const ExternalVotes& f) const { return f.name.empty() ? "external(" + f.path + ")" : f.name; }
        std::string operator()(const And& f) const {
            std::string out;
            for (const auto& c : f.children) {
                if (!out.empty()) out += "&";
                out += std::visit(*this, c.rule);
            }
            return out;
        }
    };
    return std::visit(Visitor{}, spec.rule);
}

} // namespace wscurate
