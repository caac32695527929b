// curate: filter an image-text sample pool and ensemble the filter votes.
//
//   curate --config cfg.json [--output-dir out]
//   curate validate --config cfg.json
//   curate synth --spec synth.json --output-dir dir
//
// Errors are reported as a JSON document on stderr with a nonzero exit code.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "wscurate/pipeline.hpp"

namespace {

int report_error(const std::string& kind, const std::string& message,
                 const std::optional<std::string>& path = std::nullopt) {
    std::cerr << wscurate::error_json(kind, message, path).dump() << '\n';
    return 1;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw wscurate::IoError("cannot open \"" + path + "\"", path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw wscurate::ParseError("\"" + path + "\" is not valid JSON: " + e.what());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rule-based filtering and weak-supervision ensembling for image-text pools", "curate"};
    app.require_subcommand(0, 1);

    std::string config_path, output_dir;
    app.add_option("--config", config_path, "Curation config (JSON)");
    app.add_option("--output-dir", output_dir, "Overrides the config's output_dir");

    auto* validate = app.add_subcommand("validate", "Check a config and list every problem found");
    std::string validate_path;
    validate->add_option("--config", validate_path, "Curation config (JSON)")->required();

    auto* synth = app.add_subcommand("synth", "Write a synthetic manifest or vote set with ground truth");
    std::string synth_spec, synth_out;
    synth->add_option("--spec", synth_spec, "Synthetic data spec (JSON)")->required();
    synth->add_option("--output-dir", synth_out, "Directory to write into")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage_error", e.what());
    }

    try {
        if (*validate) {
            const auto config = wscurate::load_config(validate_path);
            const auto findings = wscurate::validate_config(config);
            std::cout << nlohmann::json{{"schema_version", 1}, {"valid", findings.empty()}, {"findings", findings}}.dump(2)
                      << '\n';
            return findings.empty() ? 0 : 2;
        }
        if (*synth) {
            const auto out = wscurate::run_synth(read_json_file(synth_spec), synth_out);
            std::cout << nlohmann::json{{"schema_version", 1}, {"output_dir", synth_out}, {"files", out.files}}.dump(2)
                      << '\n';
            return 0;
        }
        if (config_path.empty()) return report_error("usage_error", "--config is required");

        auto config = wscurate::load_config(config_path);
        if (!output_dir.empty()) config.output_dir = output_dir;
        const auto report = wscurate::run_curation(config);
        std::cout << nlohmann::json{{"schema_version", 1},
                                    {"output_dir", config.output_dir},
                                    {"n_total", report.n_total},
                                    {"n_kept", report.kept_ids.size()},
                                    {"ensemble_method", wscurate::to_string(report.ensemble_method)},
                                    {"warnings", report.warnings}}
                         .dump(2)
                  << '\n';
        return 0;
    } catch (const wscurate::IoError& e) {
        return report_error(e.kind(), e.what(), e.path());
    } catch (const wscurate::Error& e) {
        return report_error(e.kind(), e.what());
    } catch (const std::exception& e) {
        return report_error("internal_error", e.what());
    }
}
