#include "pep/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace pep {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string fmt_alpha(double a) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", a);
    return buf;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 step, so nearby seeds give unrelated streams
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Dataset take_rows(const Dataset& ds, const std::vector<Index>& idx) {
    Dataset out;
    out.name = ds.name;
    out.task = ds.task;
    out.h_true = ds.h_true;
    out.X.resize(static_cast<Index>(idx.size()), ds.D());
    out.y.resize(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.X.row(i) = ds.X.row(idx[i]);
        out.y(i) = ds.y(idx[i]);
    }
    return out;
}

}  // namespace

std::string to_string(Task t) { return t == Task::Regression ? "regression" : "classification"; }

Task task_from_string(const std::string& s) {
    if (s == "regression" || s == "reg") return Task::Regression;
    if (s == "classification" || s == "cls") return Task::Classification;
    throw ArgumentError("unknown task '" + s + "'");
}

Dataset parse_csv(std::istream& in, const CsvSchema& schema, const std::string& name) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    bool header_pending = schema.header;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        if (header_pending) {
            header_pending = false;
            continue;
        }
        const auto fields = split_fields(line);
        if (width == 0) width = fields.size();
        if (fields.size() != width)
            throw IngestionError("expected " + std::to_string(width) + " columns, found " +
                                     std::to_string(fields.size()),
                                 lineno);
        std::vector<double> row(width);
        for (std::size_t c = 0; c < width; ++c) {
            const std::string& f = fields[c];
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size())
                throw IngestionError("non-numeric cell '" + f + "' in column " + std::to_string(c), lineno);
            if (!std::isfinite(v))
                throw IngestionError("non-finite cell in column " + std::to_string(c), lineno);
            row[c] = v;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IngestionError("no data rows", lineno);
    if (width < 2) throw IngestionError("need at least one input column and a target", 1);
    const int target = schema.target_column < 0 ? static_cast<int>(width) + schema.target_column
                                                : schema.target_column;
    if (target < 0 || target >= static_cast<int>(width))
        throw ArgumentError("target column " + std::to_string(schema.target_column) + " is out of range");

    Dataset ds;
    ds.name = name;
    ds.task = schema.task;
    const Index N = static_cast<Index>(rows.size());
    ds.X.resize(N, static_cast<Index>(width) - 1);
    ds.y.resize(N);
    for (Index i = 0; i < N; ++i) {
        Index d = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (static_cast<int>(c) == target)
                ds.y(i) = rows[i][c];
            else
                ds.X(i, d++) = rows[i][c];
        }
    }
    if (ds.task == Task::Classification) ds.y = to_signed_labels(ds.y);
    return ds;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path, 0);
    std::string name = path;
    const auto slash = name.find_last_of('/');
    if (slash != std::string::npos) name = name.substr(slash + 1);
    const auto dot = name.find_last_of('.');
    if (dot != std::string::npos) name = name.substr(0, dot);
    return parse_csv(in, schema, name);
}

void write_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    out << std::setprecision(17);
    for (Index d = 0; d < ds.D(); ++d) out << "x" << d << ",";
    out << "y\n";
    for (Index i = 0; i < ds.N(); ++i) {
        for (Index d = 0; d < ds.D(); ++d) out << ds.X(i, d) << ",";
        out << ds.y(i) << "\n";
    }
}

Standardization fit_standardization(const Dataset& train) {
    if (train.N() == 0) throw ArgumentError("cannot standardise an empty dataset");
    Standardization st;
    st.x_mean = train.X.colwise().mean().transpose();
    st.x_std.resize(train.D());
    for (Index d = 0; d < train.D(); ++d) {
        const double sd = std::sqrt((train.X.col(d).array() - st.x_mean(d)).square().mean());
        st.x_std(d) = sd > 0.0 ? sd : 1.0;
    }
    if (train.task == Task::Regression) {
        st.y_mean = train.y.mean();
        const double sd = std::sqrt((train.y.array() - st.y_mean).square().mean());
        st.y_std = sd > 0.0 ? sd : 1.0;
    }
    return st;
}

Dataset standardize(const Dataset& ds, const Standardization& st) {
    Dataset out = ds;
    out.X = (ds.X.rowwise() - st.x_mean.transpose()).array().rowwise() / st.x_std.transpose().array();
    if (ds.task == Task::Regression) out.y = (ds.y.array() - st.y_mean) / st.y_std;
    return out;
}

Vector destandardize_y(const Vector& y, const Standardization& st) {
    return (y.array() * st.y_std + st.y_mean).matrix();
}

Vector destandardize_var(const Vector& var, const Standardization& st) { return var * (st.y_std * st.y_std); }

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("fraction must lie in (0, 1)");
    const Index N = ds.N();
    const Index n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(N)));
    if (n_train < 1 || n_train >= N) throw ArgumentError("split leaves one side empty");
    std::vector<Index> idx(N);
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Index> tr(idx.begin(), idx.begin() + n_train), te(idx.begin() + n_train, idx.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    return {take_rows(ds, tr), take_rows(ds, te)};
}

Dataset subsample(const Dataset& ds, Index max_n, std::uint64_t seed) {
    if (max_n <= 0 || ds.N() <= max_n) return ds;
    std::vector<Index> idx(ds.N());
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_n);
    std::sort(idx.begin(), idx.end());
    return take_rows(ds, idx);
}

Dataset synth_gen(Index N, int D, const KernelHyper& h_true, std::uint64_t seed) {
    if (N < 1 || N > 2000) throw ArgumentError("synthetic N must lie in [1, 2000]");
    if (h_true.dim() != D) throw ArgumentError("hyper-parameter dimension differs from D");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset ds;
    ds.name = "synthetic";
    ds.task = Task::Regression;
    ds.h_true = h_true;
    ds.X.resize(N, D);
    for (Index i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d) ds.X(i, d) = normal(rng);
    const CholeskyFactor ch = chol_psd(gram(ds.X, ds.X, h_true));
    Vector eps(N);
    for (Index i = 0; i < N; ++i) eps(i) = normal(rng);
    const Vector f = ch.L.triangularView<Eigen::Lower>() * eps;
    const double sn = std::sqrt(h_true.noise_var());
    ds.y.resize(N);
    for (Index i = 0; i < N; ++i) ds.y(i) = f(i) + (sn > 0.0 ? sn * normal(rng) : 0.0);
    return ds;
}

RegressionMetrics metrics_regression(const Vector& pred_mean, const Vector& pred_var, const Vector& y_test,
                                     double y_train_mean, double y_train_var) {
    const Index n = y_test.size();
    if (n == 0 || pred_mean.size() != n || pred_var.size() != n)
        throw ArgumentError("prediction and target lengths differ");
    if (!(y_train_var > 0.0)) throw MetricError("training targets have zero variance");
    if (!(pred_var.minCoeff() > 0.0)) throw MetricError("predictive variances must be positive");
    const double ref = (y_test.array() - y_train_mean).square().mean();
    if (!(ref > 0.0)) throw MetricError("test targets have zero variance about the training mean");
    RegressionMetrics m;
    m.smse = (pred_mean - y_test).squaredNorm() / static_cast<double>(n) / ref;
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const auto nll_model =
        0.5 * (log2pi + pred_var.array().log()) + (y_test - pred_mean).array().square() / (2.0 * pred_var.array());
    const auto nll_trivial =
        0.5 * (log2pi + std::log(y_train_var)) + (y_test.array() - y_train_mean).square() / (2.0 * y_train_var);
    m.smll = nll_model.mean() - nll_trivial.mean();
    return m;
}

ClassificationMetrics metrics_classification(const Vector& prob, const Vector& labels) {
    if (prob.size() != labels.size() || prob.size() == 0) throw ArgumentError("probability and label lengths differ");
    const Vector y = to_signed_labels(labels);
    ClassificationMetrics m;
    for (Index i = 0; i < y.size(); ++i) {
        const double p = std::clamp(prob(i), 1e-12, 1.0 - 1e-12);
        const double pred = prob(i) >= 0.5 ? 1.0 : -1.0;
        if (pred != y(i)) m.error += 1.0;
        m.nll -= std::log(y(i) > 0 ? p : 1.0 - p);
    }
    m.error /= static_cast<double>(y.size());
    m.nll /= static_cast<double>(y.size());
    return m;
}

std::string ExperimentRecord::key() const {
    return dataset + "|" + std::to_string(split) + "|" + method + "|" + fmt_alpha(alpha) + "|" + std::to_string(M) +
           "|" + std::to_string(B);
}

std::string ExperimentRecord::method_label() const {
    std::string s = method == "VFE" ? "VFE" : "PEP(alpha=" + fmt_alpha(alpha) + ")";
    if (B > 0) s += "[B=" + std::to_string(B) + "]";
    return s;
}

nlohmann::json ExperimentRecord::to_json(bool include_timing) const {
    nlohmann::json j;
    j["schema"] = kRecordSchema;
    j["dataset"] = dataset;
    j["task"] = to_string(task);
    j["split"] = split;
    j["method"] = method;
    j["alpha"] = alpha;
    j["M"] = M;
    j["B"] = B;
    j["seed"] = seed;
    j["metrics"] = metrics;
    j["energy"] = energy;
    j["nlml_trace"] = nlml_trace;
    if (include_timing) j["wall_time"] = wall_time;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    return j;
}

ExperimentRecord ExperimentRecord::from_json(const nlohmann::json& j) {
    if (j.value("schema", std::string()) != kRecordSchema)
        throw ArgumentError("record schema is not " + std::string(kRecordSchema));
    ExperimentRecord r;
    r.dataset = j.at("dataset").get<std::string>();
    r.task = task_from_string(j.at("task").get<std::string>());
    r.split = j.at("split").get<int>();
    r.method = j.at("method").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.M = j.at("M").get<int>();
    r.B = j.at("B").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    if (j.contains("energy") && j["energy"].is_number()) r.energy = j["energy"].get<double>();
    if (j.contains("nlml_trace")) r.nlml_trace = j["nlml_trace"].get<std::vector<double>>();
    r.wall_time = j.value("wall_time", 0.0);
    r.status = j.value("status", std::string("ok"));
    r.error = j.value("error", std::string());
    return r;
}

std::vector<ExperimentRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path, 0);
    std::vector<ExperimentRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(ExperimentRecord::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw IngestionError(std::string("bad record: ") + e.what(), lineno);
        }
    }
    return out;
}

ExperimentRecord run_cell(const Dataset& ds, int split_id, double alpha, int M, const MatrixConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.dataset = ds.name;
    rec.task = ds.task;
    rec.split = split_id;
    rec.method = alpha == 0.0 ? "VFE" : "PEP";
    rec.alpha = alpha;
    rec.M = M;
    rec.B = ds.task == Task::Regression ? cfg.blocks : 0;
    rec.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(split_id));
    try {
        auto [train, test] = split(ds, cfg.train_fraction, rec.seed);
        train = subsample(train, cfg.max_train, rec.seed + 1);
        const Standardization st = fit_standardization(train);
        const Dataset tr = standardize(train, st);
        const Dataset te = standardize(test, st);
        TrainConfig tc = cfg.train;
        tc.seed = rec.seed;
        tc.alpha = alpha;
        tc.blocks = rec.B;
        if (ds.task == Task::Regression) {
            const RegressionFit fit = fit_regression(tr.X, tr.y, M, tc);
            const Prediction p = predict(fit.params.Z, fit.params.h, fit.state, te.X);
            const Vector var = p.var.array() + fit.params.h.noise_var();
            const double ym = tr.y.mean();
            const double yv = (tr.y.array() - ym).square().mean();
            const RegressionMetrics m = metrics_regression(p.mean, var, te.y, ym, yv);
            rec.metrics["smse"] = m.smse;
            rec.metrics["smll"] = m.smll;
            rec.energy = fit.energy;
            for (const auto& e : fit.trace)
                if (std::isfinite(e.objective)) rec.nlml_trace.push_back(e.objective);
        } else {
            const ClassificationFit fit = fit_classification(tr.X, tr.y, M, alpha, tc);
            const Prediction p = predict(fit.params.Z, fit.params.h, fit.state, te.X, true);
            const ClassificationMetrics m = metrics_classification(p.prob, te.y);
            rec.metrics["error"] = m.error;
            rec.metrics["nll"] = m.nll;
            rec.energy = fit.energy;
            for (const auto& e : fit.trace)
                if (std::isfinite(e.objective)) rec.nlml_trace.push_back(e.objective);
        }
        for (const auto& [k, v] : rec.metrics)
            if (!std::isfinite(v)) throw MetricError("metric " + k + " is not finite");
        if (!std::isfinite(rec.energy)) throw NumericalError("energy is not finite");
    } catch (const std::exception& e) {
        rec.status = "error";
        rec.error = e.what();
        rec.metrics.clear();
        rec.energy = 0.0;
        rec.nlml_trace.clear();
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<ExperimentRecord> run_matrix(const std::vector<Dataset>& datasets, const MatrixConfig& cfg) {
    if (cfg.alphas.empty() || cfg.Ms.empty() || cfg.splits < 1) throw ArgumentError("empty experiment grid");
    for (double a : cfg.alphas)
        if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("grid powers must lie in [0, 1]");
    for (int m : cfg.Ms)
        if (m < 1) throw ArgumentError("grid pseudo-point counts must be positive");
    if (cfg.workers < 1) throw ArgumentError("workers must be positive");

    struct Cell {
        std::size_t dataset;
        int split;
        double alpha;
        int M;
    };
    std::vector<Cell> cells;
    std::vector<std::string> keys;
    for (std::size_t d = 0; d < datasets.size(); ++d)
        for (int s = 0; s < cfg.splits; ++s)
            for (double a : cfg.alphas)
                for (int m : cfg.Ms) {
                    cells.push_back({d, s, a, m});
                    ExperimentRecord probe;
                    probe.dataset = datasets[d].name;
                    probe.split = s;
                    probe.method = a == 0.0 ? "VFE" : "PEP";
                    probe.alpha = a;
                    probe.M = m;
                    probe.B = datasets[d].task == Task::Regression ? cfg.blocks : 0;
                    keys.push_back(probe.key());
                }

    std::vector<std::optional<ExperimentRecord>> results(cells.size());
    std::ofstream sink;
    if (!cfg.out_path.empty()) {
        if (cfg.resume) {
            std::ifstream probe(cfg.out_path);
            if (probe) {
                std::map<std::string, ExperimentRecord> done;
                for (auto& r : read_records(cfg.out_path)) done[r.key()] = std::move(r);
                for (std::size_t i = 0; i < cells.size(); ++i) {
                    auto it = done.find(keys[i]);
                    if (it != done.end()) results[i] = it->second;
                }
            }
            sink.open(cfg.out_path, std::ios::app);
        } else {
            sink.open(cfg.out_path, std::ios::trunc);
        }
        if (!sink) throw ArgumentError("cannot write " + cfg.out_path);
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (!results[i]) todo.push_back(i);

    std::mutex sink_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= todo.size()) return;
            const std::size_t i = todo[k];
            const Cell& c = cells[i];
            ExperimentRecord rec = run_cell(datasets[c.dataset], c.split, c.alpha, c.M, cfg);
            std::lock_guard<std::mutex> lock(sink_mutex);
            if (sink.is_open()) {
                sink << rec.to_json().dump() << "\n";
                sink.flush();
            }
            results[i] = std::move(rec);
        }
    };
    const int n_threads = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(todo.size(), 1)));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<ExperimentRecord> out;
    out.reserve(results.size());
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

RankSummary rank_summary(const std::vector<ExperimentRecord>& records, int histogram_bins) {
    if (histogram_bins < 1) throw ArgumentError("need at least one histogram bin");
    RankSummary out;
    std::set<std::string> method_set, metric_set;
    // cell -> method -> metrics
    std::map<std::string, std::map<std::string, const ExperimentRecord*>> cells;
    for (const auto& r : records) {
        const std::string label = r.method_label();
        method_set.insert(label);
        if (r.status != "ok") continue;
        for (const auto& [k, v] : r.metrics) metric_set.insert(k);
        const std::string cell = r.dataset + "|split=" + std::to_string(r.split) + "|M=" + std::to_string(r.M);
        cells[cell][label] = &r;
    }
    for (const auto& r : records) {
        const std::string cell = r.dataset + "|split=" + std::to_string(r.split) + "|M=" + std::to_string(r.M);
        cells.try_emplace(cell);
    }
    out.methods.assign(method_set.begin(), method_set.end());
    const std::size_t K = out.methods.size();

    for (const auto& [cell, by_method] : cells) {
        std::vector<std::string> missing;
        for (const auto& m : out.methods)
            if (!by_method.count(m)) missing.push_back(m);
        if (!missing.empty()) {
            std::string s = cell + ": missing";
            for (const auto& m : missing) s += " " + m;
            out.gaps.push_back(s);
        }
    }

    for (const auto& metric : metric_set) {
        std::vector<double> rank_sum(K, 0.0);
        int n_cells = 0;
        std::vector<std::vector<double>> diffs(K * K);
        std::vector<int> wins(K * K, 0), ties(K * K, 0);
        for (const auto& [cell, by_method] : cells) {
            std::vector<double> vals(K);
            bool complete = true;
            for (std::size_t i = 0; i < K && complete; ++i) {
                auto it = by_method.find(out.methods[i]);
                if (it == by_method.end() || !it->second->metrics.count(metric)) {
                    complete = false;
                } else {
                    vals[i] = it->second->metrics.at(metric);
                }
            }
            if (!complete) continue;
            ++n_cells;
            for (std::size_t i = 0; i < K; ++i) {
                int less = 0, equal = 0;
                for (std::size_t j = 0; j < K; ++j) {
                    if (vals[j] < vals[i]) ++less;
                    else if (vals[j] == vals[i]) ++equal;
                }
                // positions less+1 .. less+equal share their mean
                rank_sum[i] += less + 0.5 * (equal + 1);
                for (std::size_t j = 0; j < K; ++j) {
                    if (i == j) continue;
                    if (vals[i] < vals[j]) ++wins[i * K + j];
                    else if (vals[i] == vals[j]) ++ties[i * K + j];
                    diffs[i * K + j].push_back(vals[i] - vals[j]);
                }
            }
        }
        std::vector<double> avg(K, 0.0);
        for (std::size_t i = 0; i < K; ++i) avg[i] = n_cells > 0 ? rank_sum[i] / n_cells : 0.0;
        out.average_rank[metric] = avg;
        out.cells[metric] = n_cells;
        auto& pairs = out.pairs[metric];
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) {
                if (i == j) continue;
                PairStats ps;
                ps.a = out.methods[i];
                ps.b = out.methods[j];
                if (n_cells > 0) {
                    ps.win = static_cast<double>(wins[i * K + j]) / n_cells;
                    ps.tie = static_cast<double>(ties[i * K + j]) / n_cells;
                }
                const auto& d = diffs[i * K + j];
                if (!d.empty()) {
                    double lo = *std::min_element(d.begin(), d.end());
                    double hi = *std::max_element(d.begin(), d.end());
                    if (lo == hi) {
                        lo -= 0.5;
                        hi += 0.5;
                    }
                    ps.bin_edges.resize(histogram_bins + 1);
                    for (int b = 0; b <= histogram_bins; ++b) ps.bin_edges[b] = lo + (hi - lo) * b / histogram_bins;
                    ps.counts.assign(histogram_bins, 0);
                    for (double v : d) {
                        int b = static_cast<int>((v - lo) / (hi - lo) * histogram_bins);
                        ps.counts[std::clamp(b, 0, histogram_bins - 1)]++;
                    }
                }
                pairs.push_back(std::move(ps));
            }
    }
    return out;
}

void write_records_csv(const std::string& path, const std::vector<ExperimentRecord>& records) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    std::set<std::string> metric_set;
    for (const auto& r : records)
        for (const auto& [k, v] : r.metrics) metric_set.insert(k);
    out << std::setprecision(17);
    out << "dataset,task,split,method,alpha,M,B,seed,status";
    for (const auto& m : metric_set) out << "," << m;
    out << ",energy,wall_time\n";
    for (const auto& r : records) {
        out << r.dataset << "," << to_string(r.task) << "," << r.split << "," << r.method << "," << r.alpha << ","
            << r.M << "," << r.B << "," << r.seed << "," << r.status;
        for (const auto& m : metric_set) {
            out << ",";
            if (r.metrics.count(m)) out << r.metrics.at(m);
        }
        out << "," << r.energy << "," << r.wall_time << "\n";
    }
}

void write_long_csv(const std::string& path, const std::vector<ExperimentRecord>& records) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    out << std::setprecision(17);
    out << "method,M,split,metric,value,dataset\n";
    for (const auto& r : records) {
        if (r.status != "ok") continue;
        for (const auto& [k, v] : r.metrics)
            out << r.method_label() << "," << r.M << "," << r.split << "," << k << "," << v << "," << r.dataset
                << "\n";
        out << r.method_label() << "," << r.M << "," << r.split << ",nlml," << -r.energy << "," << r.dataset << "\n";
    }
}

void write_rank_csv(const std::string& prefix, const RankSummary& s) {
    {
        std::ofstream out(prefix + "_ranks.csv");
        if (!out) throw ArgumentError("cannot write " + prefix + "_ranks.csv");
        out << std::setprecision(17) << "metric,method,average_rank,cells\n";
        for (const auto& [metric, ranks] : s.average_rank)
            for (std::size_t i = 0; i < s.methods.size(); ++i)
                out << metric << "," << s.methods[i] << "," << ranks[i] << "," << s.cells.at(metric) << "\n";
    }
    {
        std::ofstream out(prefix + "_pairs.csv");
        out << std::setprecision(17) << "metric,method_a,method_b,win_fraction,tie_fraction\n";
        for (const auto& [metric, pairs] : s.pairs)
            for (const auto& p : pairs) out << metric << "," << p.a << "," << p.b << "," << p.win << "," << p.tie << "\n";
    }
    {
        std::ofstream out(prefix + "_histograms.csv");
        out << std::setprecision(17) << "metric,method_a,method_b,bin_lo,bin_hi,count\n";
        for (const auto& [metric, pairs] : s.pairs)
            for (const auto& p : pairs)
                for (std::size_t b = 0; b < p.counts.size(); ++b)
                    out << metric << "," << p.a << "," << p.b << "," << p.bin_edges[b] << "," << p.bin_edges[b + 1]
                        << "," << p.counts[b] << "\n";
    }
    {
        std::ofstream out(prefix + "_gaps.csv");
        out << "gap\n";
        for (const auto& g : s.gaps) out << "\"" << g << "\"\n";
    }
}

nlohmann::json rank_to_json(const RankSummary& s) {
    nlohmann::json j;
    j["schema"] = "pepgp.rank/1";
    j["methods"] = s.methods;
    j["average_rank"] = s.average_rank;
    j["cells"] = s.cells;
    j["gaps"] = s.gaps;
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [metric, ps] : s.pairs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : ps)
            arr.push_back({{"a", p.a}, {"b", p.b}, {"win", p.win}, {"tie", p.tie}, {"bin_edges", p.bin_edges},
                           {"counts", p.counts}});
        pairs[metric] = arr;
    }
    j["pairs"] = pairs;
    return j;
}

}  // namespace pep
