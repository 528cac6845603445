#pragma once

#include "ovb/dataio.hpp"
#include "ovb/dml.hpp"
#include "ovb/functionals.hpp"
#include "ovb/sensitivity.hpp"
#include "ovb/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ovb::cli {

inline constexpr const char* kReportSchema = "ovb-report/1";

using Json = nlohmann::ordered_json;

// Summary estimates supplied directly instead of data. Either (sigma2, nu2)
// or S must be present.
struct ComponentInput {
    double theta_s = 0.0;
    double se = 0.0;
    std::optional<double> sigma2;
    std::optional<double> nu2;
    std::optional<double> S;
};

struct AxisSpec {
    double min = 0.0;
    double max = 0.3;
    int count = 31;
};

struct ContourSpec {
    AxisSpec eta_d2;
    AxisSpec eta_y2;
    ContourQuantity quantity = ContourQuantity::ConfLower;
    double threshold = 0.0;
    double rho = 1.0;
    bool svg = true;
};

struct BenchmarkSpec {
    std::vector<std::string> covariates;
    std::vector<double> multipliers{1.0};
};

struct SimulateSpec {
    SynthSpec synth;
    CoverageConfig coverage;
};

struct AnalysisConfig {
    enum class Source { Csv, Synthetic, Components };
    Source source = Source::Csv;
    std::string data_path;
    CsvSchema schema;
    std::optional<SynthSpec> synthetic;
    std::optional<ComponentInput> components;

    std::optional<FunctionalSpec> functional;  // synthetic data falls back to the design's
    Json learners = Json::object();             // kept raw; learners depend on the functional
    EngineConfig engine;                        // everything except the learners

    std::vector<SensitivityParams> scenarios;
    std::vector<double> thresholds{0.0};
    double level = 0.05;
    ContourSpec contour;
    std::optional<BenchmarkSpec> benchmark;
    std::optional<SimulateSpec> simulate;
    int threads = 1;
};

// Parses and validates a config document. Relative paths are resolved
// against base_dir. Unknown keys are rejected with Error("invalid_config").
AnalysisConfig parse_config(const Json& doc, const std::string& base_dir = ".");
AnalysisConfig load_config(const std::string& path);

// Command-line overrides.
void apply_overrides(AnalysisConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<int> threads);

// Builds learners for the config's functional.
std::vector<LearnerPtr> build_learners(const Json& specs, bool outcome, bool plm,
                                       std::uint64_t seed);

struct Analysis {
    Dataset data;
    bool has_data = false;
    FunctionalSpec functional;
    DmlEstimate theta;
    DmlEstimate sigma2;
    DmlEstimate nu2;
    bool components_only = false;
    bool s_only = false;  // S supplied without sigma2 and nu2
    std::optional<ComponentEstimates> estimates;
    EngineConfig engine;  // with learners
};

Analysis run_analysis(const AnalysisConfig& config);

Json build_report(const AnalysisConfig& config, const Analysis& analysis);

// JSON text with doubles at 17 significant digits (non-finite as null).
std::string format_json(const Json& doc, int indent = 2);

std::string benchmark_csv(const BenchmarkResult& result);
std::string coverage_summary_csv(const CoverageSummary& summary);

// Each command writes its files into out_dir and returns the paths written.
std::vector<std::string> cmd_analyze(const AnalysisConfig& config, const std::string& out_dir);
std::vector<std::string> cmd_contour(const AnalysisConfig& config, const std::string& out_dir);
std::vector<std::string> cmd_benchmark(const AnalysisConfig& config, const std::string& out_dir);
std::vector<std::string> cmd_simulate(const AnalysisConfig& config, const std::string& out_dir);

Json error_json(const std::string& kind, const std::string& message);

// Full entry point behind the executable; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace ovb::cli
