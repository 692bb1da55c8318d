#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace crossrf {

/// counts(t, p): windows with true class t predicted as p.
struct ConfusionMatrix {
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;

    [[nodiscard]] int num_classes() const { return static_cast<int>(counts.rows()); }
    [[nodiscard]] std::int64_t total() const { return counts.sum(); }
    [[nodiscard]] std::int64_t trace() const { return counts.trace(); }
    bool operator==(const ConfusionMatrix& o) const { return counts == o.counts; }
};

/// Throws std::invalid_argument on length mismatch, K < 1 or a class outside [0, K).
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels, int num_classes);

struct Metrics {
    double accuracy = 0.0;  ///< fraction
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

/// Unweighted means over classes. A class with no predictions (or no samples) scores 0 for
/// precision (or recall); F1 is 0 when both are 0. Throws std::domain_error on an empty matrix.
Metrics metrics(const ConfusionMatrix& m);

enum class Stage { SourceOnly, TargetBefore, TargetAfter };
inline constexpr std::array<Stage, 3> kStages{Stage::SourceOnly, Stage::TargetBefore, Stage::TargetAfter};
const char* to_string(Stage s);

struct StageEval {
    std::vector<int> predictions;
    std::vector<int> labels;
};

struct ComparisonReport {
    std::string scenario;
    std::array<double, 3> accuracy{};  ///< percent, indexed by Stage
    std::array<ConfusionMatrix, 3> confusion;
    Metrics after;  ///< macro metrics of the adapted model

    [[nodiscard]] double stage_accuracy(Stage s) const { return accuracy[static_cast<std::size_t>(s)]; }
};

ComparisonReport comparison_report(const std::string& scenario, const StageEval& source_only,
                                   const StageEval& target_before, const StageEval& target_after, int num_classes);

/// The CSV row as written: accuracies with 2 decimals, macro metrics with 4.
struct ReportRow {
    std::string scenario;
    double source_only = 0, target_before = 0, target_after = 0;
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
};

ReportRow to_row(const ComparisonReport& r);

/// Header `scenario,source_only,target_before,target_after,macro_precision,macro_recall,macro_f1`
/// followed by one line per row. Scenario names are quoted when they need it.
std::string report_csv(std::span<const ReportRow> rows);
/// Inverse of report_csv. Throws std::invalid_argument on malformed input.
std::vector<ReportRow> parse_report_csv(const std::string& text);

/// Header `true\predicted,0,..,K-1`, then one row per true class.
std::string confusion_csv(const ConfusionMatrix& m);
ConfusionMatrix parse_confusion_csv(const std::string& text);

nlohmann::json to_json(const ComparisonReport& r);

/// Writes report.csv, report.json and confusion_<stage>.csv into `dir`.
void write_report(const ComparisonReport& r, const std::filesystem::path& dir);

}  // namespace crossrf
