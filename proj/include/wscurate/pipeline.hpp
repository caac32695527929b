#pragma once

// End-to-end curation: manifest -> filter votes -> ensemble -> report.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wscurate/diagnostics.hpp"
#include "wscurate/error.hpp"
#include "wscurate/filters.hpp"
#include "wscurate/labelmodel.hpp"
#include "wscurate/manifest.hpp"
#include "wscurate/synth.hpp"

namespace wscurate {

namespace fs = std::filesystem;

struct ExternalSource {
    std::string name;
    std::string path;
};

struct CurationConfig {
    int schema_version = 1;
    std::string manifest_path;
    std::vector<NamedFilter> filters;
    std::vector<ExternalSource> external_votes;
    EnsembleMethod ensemble = EnsembleMethod::mv;
    double class_balance = 0.3;
    long long em_max_iters = 1000;
    double em_tol = 1e-6;
    std::string output_dir;
    std::uint64_t seed = 0;
};

/// The best-performing single filters from the small-scale experiments, each
/// intersected with a CLIP top-fraction filter.
inline std::vector<NamedFilter> default_filters() {
    return {
        {"od_avg_logit30_clip30", And{{OdAvgLogitTopFraction{0.3}, ClipTopFraction{0.3}}}},
        {"od_max_logit30_clip50", And{{OdMaxLogitTopFraction{0.3}, ClipTopFraction{0.5}}}},
        {"od_num1to3_clip50", And{{OdNumObjectsRange{1, 3}, ClipTopFraction{0.5}}}},
        {"od_area5to95_clip50", And{{OdRelAreaBand{0.05, 0.95}, ClipTopFraction{0.5}}}},
    };
}

// ---------------------------------------------------------------------------
// JSON <-> config

namespace detail {

template <typename T>
T config_get(const nlohmann::json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(where + ": missing \"" + key + "\"");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": \"" + key + "\" has the wrong type");
    }
}

template <typename T>
T config_get_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& where) {
    return obj.contains(key) ? config_get<T>(obj, key, where) : fallback;
}

} // namespace detail

inline FilterSpec filter_from_json(const nlohmann::json& j, const std::string& where) {
    using detail::config_get;
    if (!j.is_object()) throw ConfigError(where + ": filter must be an object");
    const auto type = config_get<std::string>(j, "type", where);
    if (type == "clip_top_fraction") return ClipTopFraction{config_get<double>(j, "fraction", where)};
    if (type == "od_avg_logit_top_fraction") return OdAvgLogitTopFraction{config_get<double>(j, "fraction", where)};
    if (type == "od_max_logit_top_fraction") return OdMaxLogitTopFraction{config_get<double>(j, "fraction", where)};
    if (type == "od_num_objects_range")
        return OdNumObjectsRange{detail::config_get_or<long long>(j, "min", 1, where),
                                 config_get<long long>(j, "max", where)};
    if (type == "od_rel_area_band")
        return OdRelAreaBand{config_get<double>(j, "lo", where), config_get<double>(j, "hi", where)};
    if (type == "external_votes")
        return ExternalVotes{config_get<std::string>(j, "path", where), detail::config_get_or<std::string>(j, "name", "", where)};
    if (type == "and") {
        auto it = j.find("children");
        if (it == j.end() || !it->is_array()) throw ConfigError(where + ": \"and\" needs a \"children\" array");
        And a;
        for (std::size_t k = 0; k < it->size(); ++k)
            a.children.push_back(filter_from_json((*it)[k], where + ".children[" + std::to_string(k) + "]"));
        return a;
    }
    throw ConfigError(where + ": unknown filter type \"" + type + "\"");
}

inline nlohmann::ordered_json filter_to_json(const FilterSpec& spec) {
    using J = nlohmann::ordered_json;
    struct Visitor {
        J operator()(const ClipTopFraction& f) const { return {{"type", "clip_top_fraction"}, {"fraction", f.fraction}}; }
        J operator()(const OdAvgLogitTopFraction& f) const {
            return {{"type", "od_avg_logit_top_fraction"}, {"fraction", f.fraction}};
        }
        J operator()(const OdMaxLogitTopFraction& f) const {
            return {{"type", "od_max_logit_top_fraction"}, {"fraction", f.fraction}};
        }
        J operator()(const OdNumObjectsRange& f) const {
            return {{"type", "od_num_objects_range"}, {"min", f.min}, {"max", f.max}};
        }
        J operator()(const OdRelAreaBand& f) const { return {{"type", "od_rel_area_band"}, {"lo", f.lo}, {"hi", f.hi}}; }
        J operator()(const ExternalVotes& f) const {
            return {{"type", "external_votes"}, {"path", f.path}, {"name", f.name}};
        }
        J operator()(const And& f) const {
            J children = J::array();
            for (const auto& c : f.children) children.push_back(std::visit(*this, c.rule));
            return {{"type", "and"}, {"children", std::move(children)}};
        }
    };
    return std::visit(Visitor{}, spec.rule);
}

/// Parses a config document. Relative paths are resolved against `base_dir`.
/// Value ranges are not checked here; see validate_config.
inline CurationConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    using detail::config_get;
    using detail::config_get_or;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const std::string top = "config";
    auto resolve = [&](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
        return (base_dir / p).lexically_normal().string();
    };

    CurationConfig c;
    c.schema_version = config_get<int>(j, "schema_version", top);
    c.manifest_path = resolve(config_get<std::string>(j, "manifest", top));

    if (auto it = j.find("filters"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("config: \"filters\" must be an array");
        for (std::size_t k = 0; k < it->size(); ++k) {
            const std::string where = "filters[" + std::to_string(k) + "]";
            const auto& f = (*it)[k];
            NamedFilter nf{config_get<std::string>(f, "name", where), filter_from_json(f, where)};
            std::visit([&](auto& rule) {
                using R = std::decay_t<decltype(rule)>;
                if constexpr (std::is_same_v<R, ExternalVotes>) {
                    rule.path = resolve(rule.path);
                    if (rule.name.empty()) rule.name = nf.name;
                }
            }, nf.spec.rule);
            c.filters.push_back(std::move(nf));
        }
    }
    if (auto it = j.find("external_votes"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("config: \"external_votes\" must be an array");
        for (std::size_t k = 0; k < it->size(); ++k) {
            const std::string where = "external_votes[" + std::to_string(k) + "]";
            c.external_votes.push_back({config_get<std::string>((*it)[k], "name", where),
                                        resolve(config_get<std::string>((*it)[k], "path", where))});
        }
    }

    const auto ensemble = config_get_or<std::string>(j, "ensemble", "mv", top);
    auto method = parse_ensemble_method(ensemble);
    if (!method) throw ConfigError("config: unknown ensemble \"" + ensemble + "\" (expected mv, triplet or em)");
    c.ensemble = *method;
    c.class_balance = config_get_or<double>(j, "class_balance", 0.3, top);
    c.em_max_iters = config_get_or<long long>(j, "em_max_iters", 1000, top);
    c.em_tol = config_get_or<double>(j, "em_tol", 1e-6, top);
    c.output_dir = resolve(config_get_or<std::string>(j, "output_dir", "", top));
    c.seed = config_get_or<std::uint64_t>(j, "seed", 0, top);
    return c;
}

inline CurationConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config \"" + path + "\"", path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("config \"" + path + "\" is not valid JSON: " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path());
}

inline nlohmann::ordered_json to_json(const CurationConfig& c) {
    nlohmann::ordered_json filters = nlohmann::ordered_json::array();
    for (const auto& f : c.filters) {
        auto j = filter_to_json(f.spec);
        nlohmann::ordered_json named = {{"name", f.name}};
        named.update(j);
        filters.push_back(std::move(named));
    }
    nlohmann::ordered_json ext = nlohmann::ordered_json::array();
    for (const auto& e : c.external_votes) ext.push_back({{"name", e.name}, {"path", e.path}});
    return {{"schema_version", c.schema_version},
            {"manifest", c.manifest_path},
            {"filters", std::move(filters)},
            {"external_votes", std::move(ext)},
            {"ensemble", to_string(c.ensemble)},
            {"class_balance", c.class_balance},
            {"em_max_iters", c.em_max_iters},
            {"em_tol", c.em_tol},
            {"output_dir", c.output_dir},
            {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// validation

namespace detail {

inline void validate_filter(const FilterSpec& spec, const std::string& where, std::vector<std::string>& findings) {
    auto fraction = [&](double f) {
        if (!(f > 0.0 && f <= 1.0)) findings.push_back(where + ": fraction " + fmt_number(f) + " outside (0,1]");
    };
    struct Visitor {
        const std::string& where;
        std::vector<std::string>& findings;
        decltype(fraction)& check_fraction;

        void operator()(const ClipTopFraction& f) const { check_fraction(f.fraction); }
        void operator()(const OdAvgLogitTopFraction& f) const { check_fraction(f.fraction); }
        void operator()(const OdMaxLogitTopFraction& f) const { check_fraction(f.fraction); }
        void operator()(const OdNumObjectsRange& f) const {
            if (f.min < 1) findings.push_back(where + ": object count min " + std::to_string(f.min) + " below 1");
            if (f.max < f.min)
                findings.push_back(where + ": object count max " + std::to_string(f.max) + " below min " +
                                   std::to_string(f.min));
        }
        void operator()(const OdRelAreaBand& f) const {
            if (!(f.lo >= 0.0 && f.lo < f.hi && f.hi <= 1.0))
                findings.push_back(where + ": area band [" + fmt_number(f.lo) + ", " + fmt_number(f.hi) +
                                   "] must satisfy 0 <= lo < hi <= 1");
        }
        void operator()(const ExternalVotes& f) const {
            if (f.path.empty()) findings.push_back(where + ": external votes path is empty");
        }
        void operator()(const And& f) const {
            if (f.children.size() < 2)
                findings.push_back(where + ": intersection needs at least 2 children, has " +
                                   std::to_string(f.children.size()));
            for (std::size_t k = 0; k < f.children.size(); ++k)
                validate_filter(f.children[k], where + ".children[" + std::to_string(k) + "]", findings);
        }
    };
    std::visit(Visitor{where, findings, fraction}, spec.rule);
}

} // namespace detail

/// Every invariant violation in `config`, in document order. Empty when valid.
inline std::vector<std::string> validate_config(const CurationConfig& config) {
    std::vector<std::string> findings;
    if (config.schema_version != 1)
        findings.push_back("schema_version " + std::to_string(config.schema_version) + " is not supported (expected 1)");
    if (config.manifest_path.empty()) findings.push_back("manifest path is empty");

    const std::size_t sources = config.filters.size() + config.external_votes.size();
    if (sources == 0) findings.push_back("no filters or external vote sources configured");

    std::set<std::string> names;
    auto check_name = [&](const std::string& name, const std::string& where) {
        if (name.empty()) findings.push_back(where + ": name is empty");
        else if (!names.insert(name).second) findings.push_back(where + ": duplicate filter name \"" + name + "\"");
    };
    for (std::size_t k = 0; k < config.filters.size(); ++k) {
        const std::string where = "filters[" + std::to_string(k) + "]";
        check_name(config.filters[k].name, where);
        detail::validate_filter(config.filters[k].spec, where, findings);
    }
    for (std::size_t k = 0; k < config.external_votes.size(); ++k) {
        const std::string where = "external_votes[" + std::to_string(k) + "]";
        check_name(config.external_votes[k].name, where);
        if (config.external_votes[k].path.empty()) findings.push_back(where + ": path is empty");
    }

    if (!(config.class_balance > 0.0 && config.class_balance < 1.0))
        findings.push_back("class_balance " + detail::fmt_number(config.class_balance) + " outside (0,1)");
    if (config.ensemble == EnsembleMethod::triplet && sources > 0 && sources < 3)
        findings.push_back("triplet ensemble needs at least 3 vote sources, have " + std::to_string(sources));
    if (config.ensemble == EnsembleMethod::em && sources > 0 && sources < 2)
        findings.push_back("em ensemble needs at least 2 vote sources, have " + std::to_string(sources));
    if (config.em_max_iters < 1) findings.push_back("em_max_iters must be at least 1");
    if (!(config.em_tol > 0.0)) findings.push_back("em_tol must be positive");
    return findings;
}

// ---------------------------------------------------------------------------
// running

struct CurationResult {
    CurationReport report;
    std::optional<LabelModelParams> params;
    VoteMatrix matrix;
    InferredLabels labels;
};

/// Runs the pipeline in memory without touching the output directory.
inline CurationResult curate(const CurationConfig& config) {
    if (auto findings = validate_config(config); !findings.empty()) {
        std::string msg = "invalid config:";
        for (const auto& f : findings) msg += "\n  " + f;
        throw ConfigError(msg);
    }
    const SampleTable table = load_manifest(config.manifest_path);

    CurationResult out;
    out.matrix = VoteMatrix(table.size());
    for (const auto& f : config.filters) out.matrix.add_column(evaluate_filter(f.spec, table, f.name));
    for (const auto& e : config.external_votes) out.matrix.add_column(import_external_votes(e.path, table, e.name));

    switch (config.ensemble) {
    case EnsembleMethod::mv:
        out.labels = majority_vote(out.matrix);
        break;
    case EnsembleMethod::triplet:
        out.params = fit_triplet(out.matrix, config.class_balance);
        out.labels = infer_labels(*out.params, out.matrix);
        break;
    case EnsembleMethod::em:
        out.params = fit_em(out.matrix, config.class_balance,
                            EmOptions{static_cast<std::size_t>(config.em_max_iters), config.em_tol});
        out.labels = infer_labels(*out.params, out.matrix);
        break;
    }
    out.report = summarize(table, out.matrix, out.labels, out.params, config.ensemble, config.class_balance);
    return out;
}

inline constexpr const char* kKeptIdsFile = "kept_ids.txt";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kParamsFile = "params.json";

namespace detail {

template <typename Write>
void write_file(const fs::path& path, Write&& write) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write \"" + path.string() + "\"", path.string());
    write(out);
    if (!out) throw IoError("failed writing \"" + path.string() + "\"", path.string());
}

} // namespace detail

/// Runs the pipeline and writes kept_ids.txt, report.json and, for fitted
/// ensembles, params.json into the configured output directory.
inline CurationReport run_curation(const CurationConfig& config) {
    if (config.output_dir.empty()) throw ConfigError("no output directory configured");
    auto result = curate(config);

    const fs::path dir(config.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory \"" + dir.string() + "\": " + ec.message(), dir.string());

    detail::write_file(dir / kKeptIdsFile, [&](std::ostream& o) { write_kept_ids(o, result.report.kept_ids); });
    detail::write_file(dir / kReportFile, [&](std::ostream& o) { o << to_json(result.report).dump(2) << '\n'; });
    if (result.params)
        detail::write_file(dir / kParamsFile, [&](std::ostream& o) { o << to_json(*result.params).dump(2) << '\n'; });
    return std::move(result.report);
}

// ---------------------------------------------------------------------------
// synthetic inputs for end-to-end runs

inline nlohmann::json error_json(const std::string& kind, const std::string& message,
                                 const std::optional<std::string>& path = std::nullopt) {
    nlohmann::json err = {{"kind", kind}, {"message", message}};
    if (path) err["path"] = *path;
    return {{"schema_version", 1}, {"error", std::move(err)}};
}

struct SynthOutput {
    std::vector<std::string> files;
};

/// Materializes a synthetic dataset described by a JSON document into `dir`.
///
/// kind "votes": SynthSpec fields (n, class_balance, accuracies, copy_pairs as
/// [source, target, flip_prob] triples, seed). Writes manifest.jsonl (ids
/// only), votes_f<j>.jsonl per column, truth.jsonl and a ready-to-run
/// config.json that ensembles the vote files.
///
/// kind "manifest": n, empty_fraction, class_balance, seed. Writes
/// manifest.jsonl, truth.jsonl and a config.json using default_filters().
inline SynthOutput run_synth(const nlohmann::json& spec, const fs::path& dir) {
    using detail::config_get;
    using detail::config_get_or;
    const std::string top = "synth spec";
    if (!spec.is_object()) throw ConfigError("synth spec must be a JSON object");
    if (config_get<int>(spec, "schema_version", top) != 1) throw ConfigError("synth spec: unsupported schema_version");
    const auto kind = config_get_or<std::string>(spec, "kind", "votes", top);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory \"" + dir.string() + "\": " + ec.message(), dir.string());

    SynthOutput out;
    auto write_truth = [&](const std::vector<std::string>& ids, const std::vector<Vote>& truth) {
        detail::write_file(dir / "truth.jsonl", [&](std::ostream& o) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                o << nlohmann::json{{"id", ids[i]}, {"label", static_cast<int>(truth[i])}}.dump() << '\n';
        });
        out.files.push_back("truth.jsonl");
    };
    auto write_config = [&](const CurationConfig& c) {
        detail::write_file(dir / "config.json", [&](std::ostream& o) { o << to_json(c).dump(2) << '\n'; });
        out.files.push_back("config.json");
    };

    CurationConfig config;
    config.manifest_path = "manifest.jsonl";
    config.output_dir = "out";

    if (kind == "votes") {
        SynthSpec s;
        s.n = config_get<std::size_t>(spec, "n", top);
        s.class_balance = config_get<double>(spec, "class_balance", top);
        s.accuracies = config_get<std::vector<double>>(spec, "accuracies", top);
        s.seed = config_get_or<std::uint64_t>(spec, "seed", 0, top);
        if (auto it = spec.find("copy_pairs"); it != spec.end()) {
            for (const auto& p : *it) {
                if (!p.is_array() || p.size() != 3) throw ConfigError("synth spec: copy pair must be [source, target, flip_prob]");
                s.copy_pairs.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<double>()});
            }
        }
        const auto synth = generate(s);
        const auto ids = synth_ids(s.n);
        std::vector<SampleRecord> records;
        records.reserve(s.n);
        for (const auto& id : ids) records.push_back({id, 0.0, {}});
        save_manifest((dir / "manifest.jsonl").string(), records);
        out.files.push_back("manifest.jsonl");
        for (const auto& col : synth.matrix.columns()) {
            const std::string file = "votes_" + col.name + ".jsonl";
            write_votes((dir / file).string(), ids, col.votes);
            out.files.push_back(file);
            config.external_votes.push_back({col.name, file});
        }
        write_truth(ids, synth.truth);
        const std::size_t m = s.accuracies.size();
        config.ensemble = m >= 3 ? EnsembleMethod::triplet : m == 2 ? EnsembleMethod::em : EnsembleMethod::mv;
        if (s.class_balance > 0.0 && s.class_balance < 1.0) config.class_balance = s.class_balance;
        config.seed = s.seed;
    } else if (kind == "manifest") {
        ManifestSynthSpec s;
        s.n = config_get<std::size_t>(spec, "n", top);
        s.empty_fraction = config_get_or<double>(spec, "empty_fraction", 0.38, top);
        s.class_balance = config_get_or<double>(spec, "class_balance", 0.5, top);
        s.seed = config_get_or<std::uint64_t>(spec, "seed", 0, top);
        const auto synth = generate_manifest(s);
        save_manifest((dir / "manifest.jsonl").string(), synth.records);
        out.files.push_back("manifest.jsonl");
        std::vector<std::string> ids;
        for (const auto& r : synth.records) ids.push_back(r.id);
        write_truth(ids, synth.truth);
        config.filters = default_filters();
        config.ensemble = EnsembleMethod::em;
        config.class_balance = 0.3;
        config.seed = s.seed;
    } else {
        throw ConfigError("synth spec: unknown kind \"" + kind + "\" (expected votes or manifest)");
    }
    write_config(config);
    return out;
}

} // namespace wscurate
