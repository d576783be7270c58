#pragma once

#include "pep/training.hpp"

#include <json.hpp>

#include <istream>
#include <map>
#include <optional>
#include <string>

namespace pep {

inline constexpr const char* kRecordSchema = "pepgp.record/1";

enum class Task { Regression, Classification };
std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct Standardization {
    Vector x_mean;
    Vector x_std;
    double y_mean = 0.0;
    double y_std = 1.0;
};

struct Dataset {
    std::string name;
    Task task = Task::Regression;
    Matrix X;
    Vector y;
    std::optional<KernelHyper> h_true;  // set by synth_gen

    Index N() const { return X.rows(); }
    Index D() const { return X.cols(); }
};

struct CsvSchema {
    int target_column = -1;  // negative counts from the end
    bool header = false;
    Task task = Task::Regression;
};

Dataset parse_csv(std::istream& in, const CsvSchema& schema, const std::string& name = "data");
Dataset load_csv(const std::string& path, const CsvSchema& schema);
// Writes the inputs then the target as the last column, with a header row.
void write_csv(const std::string& path, const Dataset& ds);

// Statistics from `train`; the targets are only standardised for regression.
Standardization fit_standardization(const Dataset& train);
Dataset standardize(const Dataset& ds, const Standardization& st);
Vector destandardize_y(const Vector& y, const Standardization& st);
Vector destandardize_var(const Vector& var, const Standardization& st);

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);
// Seeded random subset of at most max_n rows (the full set when it is already small enough).
Dataset subsample(const Dataset& ds, Index max_n, std::uint64_t seed);

Dataset synth_gen(Index N, int D, const KernelHyper& h_true, std::uint64_t seed);

struct RegressionMetrics {
    double smse = 0.0;
    double smll = 0.0;
};
RegressionMetrics metrics_regression(const Vector& pred_mean, const Vector& pred_var, const Vector& y_test,
                                     double y_train_mean, double y_train_var);

struct ClassificationMetrics {
    double error = 0.0;
    double nll = 0.0;
};
ClassificationMetrics metrics_classification(const Vector& prob, const Vector& labels);

struct ExperimentRecord {
    std::string dataset;
    Task task = Task::Regression;
    int split = 0;
    std::string method;  // "VFE" or "PEP"
    double alpha = 0.0;
    int M = 0;
    int B = 0;  // 0: one block per datum
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    double energy = 0.0;
    std::vector<double> nlml_trace;
    double wall_time = 0.0;
    std::string status = "ok";
    std::string error;

    std::string key() const;
    std::string method_label() const;
    nlohmann::json to_json(bool include_timing = true) const;
    static ExperimentRecord from_json(const nlohmann::json& j);
};

std::vector<ExperimentRecord> read_records(const std::string& path);

struct MatrixConfig {
    std::vector<double> alphas{0.0, 0.5, 1.0};
    std::vector<int> Ms{5, 20};
    int splits = 2;
    int blocks = 0;
    double train_fraction = 0.5;
    Index max_train = 1000;
    std::uint64_t seed = 0;
    int workers = 1;
    bool resume = false;
    std::string out_path;  // JSON-lines sink; empty keeps records in memory only
    TrainConfig train;
};

// One fit per (dataset, split, alpha, M) cell. Records are appended to the sink as cells
// finish; with resume, cells already present in the sink are skipped. The return value is
// every record of the grid (loaded plus new), in grid order.
std::vector<ExperimentRecord> run_matrix(const std::vector<Dataset>& datasets, const MatrixConfig& cfg);
ExperimentRecord run_cell(const Dataset& ds, int split_id, double alpha, int M, const MatrixConfig& cfg);

struct PairStats {
    std::string a, b;
    double win = 0.0;  // fraction of cells where a is strictly better
    double tie = 0.0;
    std::vector<double> bin_edges;
    std::vector<int> counts;  // histogram of metric(a) - metric(b)
};

struct RankSummary {
    std::vector<std::string> methods;
    std::map<std::string, std::vector<double>> average_rank;  // per metric, aligned with methods
    std::map<std::string, int> cells;                         // complete cells per metric
    std::map<std::string, std::vector<PairStats>> pairs;
    std::vector<std::string> gaps;  // cells missing at least one method
};

// Lower is better for every metric. Cells are (dataset, split, M); ties share the mean rank.
RankSummary rank_summary(const std::vector<ExperimentRecord>& records, int histogram_bins = 10);

void write_records_csv(const std::string& path, const std::vector<ExperimentRecord>& records);
void write_long_csv(const std::string& path, const std::vector<ExperimentRecord>& records);
void write_rank_csv(const std::string& prefix, const RankSummary& summary);
nlohmann::json rank_to_json(const RankSummary& summary);

}  // namespace pep
