#pragma once

// Sample metadata ingestion: one JSON object per line carrying the CLIP score
// and the zero-shot detector output of one image-text pair.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "wscurate/error.hpp"

namespace wscurate {

/// One detected object. Box corners are normalized to [0,1] image coordinates.
struct Detection {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    double logit = 0.0;
    std::string phrase;

    double area_fraction() const { return (x1 - x0) * (y1 - y0); }

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct SampleRecord {
    std::string id;
    double clip_score = 0.0;
    std::vector<Detection> detections;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Per-sample aggregates consumed by the detection filters. The optional
/// fields are all empty exactly when there are no detections.
struct DetectionMetrics {
    std::size_t num_objects = 0;
    std::optional<double> avg_logit;
    std::optional<double> max_logit;
    std::optional<double> avg_rel_area;

    friend bool operator==(const DetectionMetrics&, const DetectionMetrics&) = default;
};

inline DetectionMetrics derive_metrics(const SampleRecord& record) {
    DetectionMetrics m;
    m.num_objects = record.detections.size();
    if (record.detections.empty()) return m;

    // Sort the summands so the aggregates do not depend on detection order
    // down to the last bit.
    std::vector<double> logits, areas;
    logits.reserve(m.num_objects);
    areas.reserve(m.num_objects);
    for (const auto& d : record.detections) {
        logits.push_back(d.logit);
        areas.push_back(d.area_fraction());
    }
    std::sort(logits.begin(), logits.end());
    std::sort(areas.begin(), areas.end());

    double logit_sum = 0.0, area_sum = 0.0;
    for (double v : logits) logit_sum += v;
    for (double v : areas) area_sum += v;
    const auto n = static_cast<double>(m.num_objects);
    m.avg_logit = std::clamp(logit_sum / n, logits.front(), logits.back());
    m.max_logit = logits.back();
    m.avg_rel_area = std::clamp(area_sum / n, areas.front(), areas.back());
    return m;
}

/// Immutable, index-aligned view of a loaded manifest.
class SampleTable {
public:
    SampleTable() = default;

    /// Validates ids and detection ranges and derives metrics for each record.
    explicit SampleTable(std::vector<SampleRecord> records, std::size_t unknown_fields = 0)
        : records_(std::move(records)), unknown_fields_(unknown_fields) {
        std::unordered_set<std::string> seen;
        seen.reserve(records_.size());
        metrics_.reserve(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& r = records_[i];
            if (!seen.insert(r.id).second)
                throw ValidationError("duplicate sample id \"" + r.id + "\" (record " +
                                      std::to_string(i + 1) + ")");
            validate_record(r, i + 1);
            metrics_.push_back(derive_metrics(r));
        }
    }

    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const std::vector<SampleRecord>& records() const noexcept { return records_; }
    const std::vector<DetectionMetrics>& metrics() const noexcept { return metrics_; }
    const SampleRecord& record(std::size_t i) const { return records_.at(i); }
    const DetectionMetrics& metrics(std::size_t i) const { return metrics_.at(i); }

    /// Number of JSON members that were not part of the record schema.
    std::size_t unknown_field_count() const noexcept { return unknown_fields_; }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(records_.size());
        for (const auto& r : records_) out.push_back(r.id);
        return out;
    }

private:
    static void validate_record(const SampleRecord& r, std::size_t line) {
        auto where = [&] { return " in record \"" + r.id + "\" (line " + std::to_string(line) + ")"; };
        if (!std::isfinite(r.clip_score)) throw ValidationError("clip_score is not finite" + where());
        for (const auto& d : r.detections) {
            auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
            if (!unit(d.x0) || !unit(d.y0) || !unit(d.x1) || !unit(d.y1))
                throw ValidationError("box coordinate outside [0,1]" + where());
            if (d.x0 > d.x1 || d.y0 > d.y1)
                throw ValidationError("box corners out of order" + where());
            if (!unit(d.logit)) throw ValidationError("logit outside [0,1]" + where());
        }
    }

    std::vector<SampleRecord> records_;
    std::vector<DetectionMetrics> metrics_;
    std::size_t unknown_fields_ = 0;
};

namespace detail {

inline double require_number(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(std::string("missing field \"") + key + "\" on line " + std::to_string(line), line);
    if (!it->is_number())
        throw ParseError(std::string("field \"") + key + "\" is not a number on line " + std::to_string(line), line);
    return it->get<double>();
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(std::string("missing field \"") + key + "\" on line " + std::to_string(line), line);
    if (!it->is_string())
        throw ParseError(std::string("field \"") + key + "\" is not a string on line " + std::to_string(line), line);
    return it->get<std::string>();
}

inline std::size_t count_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known) {
    std::size_t unknown = 0;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool found = std::any_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; });
        if (!found) ++unknown;
    }
    return unknown;
}

inline bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed JSON on line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    if (!obj.is_object()) throw ParseError("line " + std::to_string(lineno) + " is not a JSON object", lineno);
    return obj;
}

} // namespace detail

/// Parses one manifest line. Unknown members are tallied into `unknown_fields`.
inline SampleRecord parse_record(const std::string& line, std::size_t lineno, std::size_t& unknown_fields) {
    const auto obj = detail::parse_line(line, lineno);
    SampleRecord rec;
    rec.id = detail::require_string(obj, "id", lineno);
    rec.clip_score = detail::require_number(obj, "clip_score", lineno);
    auto dets = obj.find("detections");
    if (dets == obj.end()) throw ParseError("missing field \"detections\" on line " + std::to_string(lineno), lineno);
    if (!dets->is_array()) throw ParseError("field \"detections\" is not an array on line " + std::to_string(lineno), lineno);
    unknown_fields += detail::count_unknown(obj, {"id", "clip_score", "detections"});

    rec.detections.reserve(dets->size());
    for (const auto& d : *dets) {
        if (!d.is_object()) throw ParseError("detection is not an object on line " + std::to_string(lineno), lineno);
        Detection det;
        det.x0 = detail::require_number(d, "x0", lineno);
        det.y0 = detail::require_number(d, "y0", lineno);
        det.x1 = detail::require_number(d, "x1", lineno);
        det.y1 = detail::require_number(d, "y1", lineno);
        det.logit = detail::require_number(d, "logit", lineno);
        det.phrase = detail::require_string(d, "phrase", lineno);
        unknown_fields += detail::count_unknown(d, {"x0", "y0", "x1", "y1", "logit", "phrase"});
        rec.detections.push_back(std::move(det));
    }
    return rec;
}

/// Reads a manifest from a stream. Blank lines are skipped but still counted
/// for line numbers in error messages.
inline SampleTable read_manifest(std::istream& in) {
    std::vector<SampleRecord> records;
    std::size_t unknown = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::blank(line)) continue;
        records.push_back(parse_record(line, lineno, unknown));
    }
    return SampleTable(std::move(records), unknown);
}

inline SampleTable load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest \"" + path + "\"", path);
    return read_manifest(in);
}

inline nlohmann::json to_json(const SampleRecord& r) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : r.detections)
        dets.push_back({{"x0", d.x0}, {"y0", d.y0}, {"x1", d.x1}, {"y1", d.y1}, {"logit", d.logit}, {"phrase", d.phrase}});
    return {{"id", r.id}, {"clip_score", r.clip_score}, {"detections", std::move(dets)}};
}

inline void write_manifest(std::ostream& out, const std::vector<SampleRecord>& records) {
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void save_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest \"" + path + "\"", path);
    write_manifest(out, records);
    if (!out) throw IoError("failed writing manifest \"" + path + "\"", path);
}

} // namespace wscurate
