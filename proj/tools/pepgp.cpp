// pepgp: command-line front end for sparse GP fitting with power EP.
#include "pep/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace pep;
using nlohmann::json;

namespace {

constexpr const char* kModelSchema = "pepgp.model/1";

struct CsvArgs {
    std::string path;
    int target = -1;
    bool header = false;
};

void add_csv_options(CLI::App* cmd, CsvArgs& a) {
    cmd->add_option("--data", a.path, "Numeric CSV file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--target", a.target, "Target column (negative counts from the end)");
    cmd->add_flag("--header", a.header, "First row is a header");
}

struct FitArgs {
    CsvArgs csv;
    double alpha = 0.5;
    int blocks = 0;
    int M = 20;
    std::uint64_t seed = 0;
    int max_evals = 2000;
    int minibatch = 200;
    int quad_nodes = 20;
    double learning_rate = 1e-3;
    std::string out;
};

void add_fit_options(CLI::App* cmd, FitArgs& a, bool classification) {
    add_csv_options(cmd, a.csv);
    cmd->add_option("--alpha", a.alpha, "Power in [0, 1]; 0 selects VFE")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--num-pseudo", a.M, "Number of pseudo-points")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.seed, "Random seed");
    cmd->add_option("--max-evals", a.max_evals, "Objective evaluation budget")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", a.out, "Model JSON output path")->required();
    if (classification) {
        cmd->add_option("--minibatch", a.minibatch, "Sites refreshed per step")->check(CLI::PositiveNumber);
        cmd->add_option("--quad-nodes", a.quad_nodes, "Gauss-Hermite nodes")->check(CLI::Range(2, 1000));
        cmd->add_option("--learning-rate", a.learning_rate, "Adam step size")->check(CLI::PositiveNumber);
    } else {
        cmd->add_option("--blocks", a.blocks, "Contiguous blocks (0: one per datum)")
            ->check(CLI::NonNegativeNumber);
    }
}

TrainConfig train_config(const FitArgs& a) {
    TrainConfig tc;
    tc.max_evals = a.max_evals;
    tc.minibatch = a.minibatch;
    tc.seed = a.seed;
    tc.learning_rate = a.learning_rate;
    tc.alpha = a.alpha;
    tc.blocks = a.blocks;
    tc.quad_nodes = a.quad_nodes;
    return tc;
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

json mat_json(const Matrix& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

Matrix json_mat(const json& j, Index cols) {
    Matrix m(static_cast<Index>(j.size()), cols);
    for (Index i = 0; i < m.rows(); ++i) {
        const Vector r = json_vec(j[i]);
        if (r.size() != cols) throw ArgumentError("model matrix rows have inconsistent lengths");
        m.row(i) = r.transpose();
    }
    return m;
}

struct Model {
    Task task = Task::Regression;
    std::string method;
    double alpha = 0.0;
    int blocks = 0;
    TrainableParams params;
    PosteriorState state;
    Standardization st;
    double energy = 0.0;
};

json model_json(const Model& m, const std::vector<TraceEntry>& trace, std::uint64_t seed, const std::string& data) {
    json j;
    j["schema"] = kModelSchema;
    j["task"] = to_string(m.task);
    j["method"] = m.method;
    j["alpha"] = m.alpha;
    j["blocks"] = m.blocks;
    j["seed"] = seed;
    j["data"] = data;
    j["energy"] = m.energy;
    j["hyper"] = {{"log_lengthscales", vec_json(m.params.h.log_lengthscales)},
                  {"log_signal_var", m.params.h.log_signal_var},
                  {"log_noise_var", m.params.h.log_noise_var}};
    j["Z"] = mat_json(m.params.Z);
    j["state"] = {{"gamma", vec_json(m.state.gamma)}, {"beta", mat_json(m.state.beta)}};
    j["standardization"] = {{"x_mean", vec_json(m.st.x_mean)},
                            {"x_std", vec_json(m.st.x_std)},
                            {"y_mean", m.st.y_mean},
                            {"y_std", m.st.y_std}};
    std::vector<double> objective;
    for (const auto& e : trace) objective.push_back(e.objective);
    j["objective_trace"] = objective;
    return j;
}

Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open " + path);
    const json j = json::parse(in);
    if (j.value("schema", std::string()) != kModelSchema)
        throw ArgumentError(path + " is not a " + std::string(kModelSchema) + " file");
    Model m;
    m.task = task_from_string(j.at("task").get<std::string>());
    m.method = j.at("method").get<std::string>();
    m.alpha = j.at("alpha").get<double>();
    m.blocks = j.at("blocks").get<int>();
    m.energy = j.at("energy").get<double>();
    const json& h = j.at("hyper");
    m.params.h = KernelHyper(json_vec(h.at("log_lengthscales")), h.at("log_signal_var").get<double>(),
                             h.at("log_noise_var").get<double>());
    const Index D = m.params.h.dim();
    m.params.Z = json_mat(j.at("Z"), D);
    m.state.gamma = json_vec(j.at("state").at("gamma"));
    m.state.beta = json_mat(j.at("state").at("beta"), m.params.Z.rows());
    const json& s = j.at("standardization");
    m.st.x_mean = json_vec(s.at("x_mean"));
    m.st.x_std = json_vec(s.at("x_std"));
    m.st.y_mean = s.at("y_mean").get<double>();
    m.st.y_std = s.at("y_std").get<double>();
    return m;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    out << j.dump(2) << "\n";
}

int cmd_synth_gen(Index N, int D, double ls, double sf2, double sn2, std::uint64_t seed, const std::string& out) {
    const Dataset ds = synth_gen(N, D, KernelHyper::isotropic(D, ls, sf2, sn2), seed);
    write_csv(out, ds);
    const json info = {{"path", out}, {"N", N}, {"D", D}, {"lengthscale", ls}, {"signal_var", sf2},
                       {"noise_var", sn2}, {"seed", seed}};
    std::cout << info.dump() << "\n";
    return 0;
}

int cmd_fit(const FitArgs& a, Task task) {
    const Dataset raw = load_csv(a.csv.path, {a.csv.target, a.csv.header, task});
    Model m;
    m.task = task;
    m.st = fit_standardization(raw);
    const Dataset ds = standardize(raw, m.st);
    const TrainConfig tc = train_config(a);
    std::vector<TraceEntry> trace;
    if (task == Task::Regression) {
        const RegressionFit fit = fit_regression(ds.X, ds.y, a.M, tc);
        m.params = fit.params;
        m.state = fit.state;
        m.energy = fit.energy;
        m.blocks = a.blocks;
        trace = fit.trace;
        if (fit.flagged) std::cerr << "warning: line search stopped before convergence\n";
    } else {
        const ClassificationFit fit = fit_classification(ds.X, ds.y, a.M, a.alpha, tc);
        m.params = fit.params;
        m.state = fit.state;
        m.energy = fit.energy;
        trace = fit.trace;
    }
    m.alpha = a.alpha;
    m.method = a.alpha == 0.0 ? "VFE" : "PEP";
    write_json(a.out, model_json(m, trace, a.seed, raw.name));
    std::cout << json{{"model", a.out}, {"energy", m.energy}, {"evals", trace.size()}}.dump() << "\n";
    return 0;
}

struct ModelPrediction {
    Vector mean, var, prob;
};

ModelPrediction predict_model(const Model& m, const Dataset& raw) {
    if (raw.D() != m.params.h.dim()) throw ArgumentError("data and model dimensions differ");
    const Dataset ds = standardize(raw, m.st);
    const Prediction p = predict(m.params.Z, m.params.h, m.state, ds.X, m.task == Task::Classification);
    ModelPrediction out;
    if (m.task == Task::Regression) {
        out.mean = destandardize_y(p.mean, m.st);
        out.var = destandardize_var((p.var.array() + m.params.h.noise_var()).matrix(), m.st);
    } else {
        out.mean = p.mean;
        out.var = p.var;
        out.prob = p.prob;
    }
    return out;
}

int cmd_predict(const std::string& model_path, const CsvArgs& csv, const std::string& out_path) {
    const Model m = load_model(model_path);
    const Dataset raw = load_csv(csv.path, {csv.target, csv.header, m.task});
    const ModelPrediction p = predict_model(m, raw);
    std::ofstream out(out_path);
    if (!out) throw ArgumentError("cannot write " + out_path);
    out << std::setprecision(17);
    out << (m.task == Task::Regression ? "mean,var\n" : "latent_mean,latent_var,prob\n");
    for (Index i = 0; i < p.mean.size(); ++i) {
        out << p.mean(i) << "," << p.var(i);
        if (m.task == Task::Classification) out << "," << p.prob(i);
        out << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const CsvArgs& csv, const std::string& out_path) {
    const Model m = load_model(model_path);
    const Dataset raw = load_csv(csv.path, {csv.target, csv.header, m.task});
    const ModelPrediction p = predict_model(m, raw);
    json j;
    j["schema"] = "pepgp.eval/1";
    j["model"] = model_path;
    j["data"] = raw.name;
    j["task"] = to_string(m.task);
    j["method"] = m.method;
    j["alpha"] = m.alpha;
    j["M"] = m.params.Z.rows();
    j["N"] = raw.N();
    if (m.task == Task::Regression) {
        const RegressionMetrics r = metrics_regression(p.mean, p.var, raw.y, m.st.y_mean, m.st.y_std * m.st.y_std);
        j["metrics"] = {{"smse", r.smse}, {"smll", r.smll}};
    } else {
        const ClassificationMetrics c = metrics_classification(p.prob, raw.y);
        j["metrics"] = {{"error", c.error}, {"nll", c.nll}};
    }
    if (out_path.empty()) {
        std::cout << j.dump() << "\n";
    } else {
        std::ofstream out(out_path, std::ios::app);
        if (!out) throw ArgumentError("cannot write " + out_path);
        out << j.dump() << "\n";
    }
    return 0;
}

std::string strip_jsonl(const std::string& path) {
    const std::string ext = ".jsonl";
    if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
        return path.substr(0, path.size() - ext.size());
    return path;
}

int cmd_rank(const std::string& records_path, const std::string& prefix, int bins) {
    const auto records = read_records(records_path);
    const RankSummary s = rank_summary(records, bins);
    write_rank_csv(prefix, s);
    write_json(prefix + "_rank.json", rank_to_json(s));
    for (const auto& g : s.gaps) std::cerr << "gap: " << g << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse Gaussian process regression and classification with power EP"};
    app.require_subcommand(1);

    Index synth_n = 1000;
    int synth_d = 5;
    double synth_ls = 1.0, synth_sf2 = 1.0, synth_sn2 = 0.01;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth-gen", "Sample a dataset from a GP prior with ARD SE kernel");
    synth->add_option("--n", synth_n, "Number of points")->check(CLI::Range(1, 2000));
    synth->add_option("--dim", synth_d, "Input dimension")->check(CLI::PositiveNumber);
    synth->add_option("--lengthscale", synth_ls)->check(CLI::PositiveNumber);
    synth->add_option("--signal-var", synth_sf2)->check(CLI::PositiveNumber);
    synth->add_option("--noise-var", synth_sn2)->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", synth_out, "CSV output (inputs, then target; with header)")->required();

    FitArgs reg_args, cls_args;
    auto* fit_reg = app.add_subcommand("fit-reg", "Fit a sparse GP regression model");
    add_fit_options(fit_reg, reg_args, false);
    auto* fit_cls = app.add_subcommand("fit-cls", "Fit a sparse GP probit classifier");
    add_fit_options(fit_cls, cls_args, true);

    std::string pred_model, pred_out;
    CsvArgs pred_csv;
    auto* pred = app.add_subcommand("predict", "Predict with a fitted model");
    pred->add_option("--model", pred_model)->required()->check(CLI::ExistingFile);
    add_csv_options(pred, pred_csv);
    pred->add_option("--out", pred_out, "Prediction CSV")->required();

    std::string eval_model, eval_out;
    CsvArgs eval_csv;
    auto* eval = app.add_subcommand("eval", "Score a fitted model on labelled data");
    eval->add_option("--model", eval_model)->required()->check(CLI::ExistingFile);
    add_csv_options(eval, eval_csv);
    eval->add_option("--out", eval_out, "Append the JSON result here instead of stdout");

    MatrixConfig mc;
    std::vector<std::string> mx_data;
    std::string mx_task = "regression";
    int mx_target = -1;
    bool mx_header = false;
    auto* mx = app.add_subcommand("run-matrix", "Run the (dataset, split, alpha, M) experiment grid");
    mx->add_option("--data", mx_data, "Numeric CSV files")->required()->check(CLI::ExistingFile);
    mx->add_option("--task", mx_task)->check(CLI::IsMember({"regression", "classification"}));
    mx->add_option("--target", mx_target);
    mx->add_flag("--header", mx_header);
    mx->add_option("--alpha", mc.alphas, "Comma-separated powers; 0 is VFE")->delimiter(',');
    mx->add_option("--num-pseudo", mc.Ms, "Comma-separated pseudo-point counts")->delimiter(',');
    mx->add_option("--splits", mc.splits)->check(CLI::PositiveNumber);
    mx->add_option("--blocks", mc.blocks)->check(CLI::NonNegativeNumber);
    mx->add_option("--train-fraction", mc.train_fraction)->check(CLI::Range(0.0, 1.0));
    mx->add_option("--max-train", mc.max_train, "Training subsample cap (0: no cap)");
    mx->add_option("--seed", mc.seed);
    mx->add_option("--max-evals", mc.train.max_evals)->check(CLI::NonNegativeNumber);
    mx->add_option("--minibatch", mc.train.minibatch)->check(CLI::PositiveNumber);
    mx->add_option("--quad-nodes", mc.train.quad_nodes)->check(CLI::Range(2, 1000));
    mx->add_option("--workers", mc.workers)->check(CLI::PositiveNumber);
    mx->add_flag("--resume", mc.resume, "Skip cells already in the output");
    mx->add_option("--out", mc.out_path, "JSON-lines record sink")->required();

    std::string rank_records, rank_out;
    int rank_bins = 10;
    auto* rank = app.add_subcommand("rank", "Average ranks, pairwise wins and difference histograms");
    rank->add_option("--records", rank_records)->required()->check(CLI::ExistingFile);
    rank->add_option("--out", rank_out, "Output prefix")->required();
    rank->add_option("--bins", rank_bins)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth_gen(synth_n, synth_d, synth_ls, synth_sf2, synth_sn2, synth_seed, synth_out);
        if (*fit_reg) return cmd_fit(reg_args, Task::Regression);
        if (*fit_cls) return cmd_fit(cls_args, Task::Classification);
        if (*pred) return cmd_predict(pred_model, pred_csv, pred_out);
        if (*eval) return cmd_eval(eval_model, eval_csv, eval_out);
        if (*mx) {
            const Task task = task_from_string(mx_task);
            std::vector<Dataset> datasets;
            for (const auto& p : mx_data) datasets.push_back(load_csv(p, {mx_target, mx_header, task}));
            const auto records = run_matrix(datasets, mc);
            const std::string base = strip_jsonl(mc.out_path);
            write_records_csv(base + "_summary.csv", records);
            write_long_csv(base + "_long.csv", records);
            int failed = 0;
            for (const auto& r : records)
                if (r.status != "ok") {
                    ++failed;
                    std::cerr << "cell " << r.key() << " failed: " << r.error << "\n";
                }
            std::cout << json{{"records", records.size()}, {"failed", failed}, {"out", mc.out_path}}.dump() << "\n";
            return 0;
        }
        if (*rank) return cmd_rank(rank_records, rank_out, rank_bins);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
