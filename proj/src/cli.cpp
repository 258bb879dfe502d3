#include "icl/cli.hpp"

#include "icl/constructions.hpp"
#include "icl/dynamics.hpp"
#include "icl/verification.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace icl {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    int S = 2;
    int k = 2;
    std::size_t T = 256;
    std::optional<double> kappa_pos;
    std::optional<double> kappa_sim;
    bool large_kappa = false;
    std::string family = "single_head";
    std::string variant = "mlp_only";
    std::uint64_t seed = 7;
    std::size_t count = 100;
    double tolerance = 0.02;
    std::size_t average = 1;
    std::string out = "artifacts";
    std::vector<std::string> inputs;
    TrainConfig train;
};

// Every flag is optional so that only explicitly given values override the config file.
struct Flags {
    std::optional<int> S, k;
    std::optional<std::size_t> T, count, average, n, kernels, seqs_per_kernel;
    std::optional<double> kappa_pos, kappa_sim, tolerance, gamma, eps, eta1, eta2, a2_init, kappa0, p0;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps1, steps2, log_every;
    std::optional<std::string> family, variant, out, config;
    bool large_kappa = false;
    std::vector<std::string> inputs;
};

void add_flags(CLI::App *sub, Flags &f) {
    sub->add_option("--config", f.config, "JSON file overriding defaults");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--S", f.S, "alphabet size");
    sub->add_option("--k", f.k, "Markov order");
    sub->add_option("--T", f.T, "sequence length minus one");
    sub->add_option("--seed", f.seed);
    sub->add_option("--count", f.count, "number of sequences");
    sub->add_option("--family", f.family)->check(CLI::IsMember({"single_head", "two_head"}));
    sub->add_option("--variant", f.variant)->check(CLI::IsMember({"mlp_only", "ln_in_attention"}));
    sub->add_option("--kappa-pos", f.kappa_pos);
    sub->add_option("--kappa-sim", f.kappa_sim);
    sub->add_flag("--large-kappa", f.large_kappa, "use the sharp second-layer scale");
    sub->add_option("--tolerance", f.tolerance);
    sub->add_option("--average", f.average, "sequences averaged by attn-export");
    sub->add_option("--input", f.inputs, "verification reports summarized by report");
    sub->add_option("--n", f.n, "training sequence length minus one");
    sub->add_option("--gamma", f.gamma);
    sub->add_option("--eps", f.eps);
    sub->add_option("--eta1", f.eta1);
    sub->add_option("--eta2", f.eta2);
    sub->add_option("--steps1", f.steps1);
    sub->add_option("--steps2", f.steps2);
    sub->add_option("--a2-init", f.a2_init);
    sub->add_option("--kappa0", f.kappa0);
    sub->add_option("--p0", f.p0, "sentinel for the offset-0 scalar");
    sub->add_option("--kernels", f.kernels);
    sub->add_option("--seqs-per-kernel", f.seqs_per_kernel);
    sub->add_option("--log-every", f.log_every);
}

template <class T>
void take(const json &j, const char *key, T &dst) {
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception &e) {
        throw UsageError(std::string("config key '") + key + "': " + e.what());
    }
}

double number(const json &v, const std::string &key) {
    if (!v.is_number()) throw UsageError("config key '" + key + "' must be a number");
    return v.get<double>();
}

void apply_config_file(const std::string &path, RunConfig &c) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    TrainConfig &t = c.train;
    for (const auto &[key, value] : j.items()) {
        if (key == "S") take(j, "S", c.S);
        else if (key == "k") take(j, "k", c.k);
        else if (key == "T") take(j, "T", c.T);
        else if (key == "kappa_pos") c.kappa_pos = number(value, key);
        else if (key == "kappa_sim") c.kappa_sim = number(value, key);
        else if (key == "large_kappa") take(j, "large_kappa", c.large_kappa);
        else if (key == "family") take(j, "family", c.family);
        else if (key == "variant") take(j, "variant", c.variant);
        else if (key == "seed") take(j, "seed", c.seed);
        else if (key == "count") take(j, "count", c.count);
        else if (key == "tolerance") take(j, "tolerance", c.tolerance);
        else if (key == "average") take(j, "average", c.average);
        else if (key == "out") take(j, "out", c.out);
        else if (key == "inputs") take(j, "inputs", c.inputs);
        else if (key == "n") take(j, "n", t.n);
        else if (key == "gamma") take(j, "gamma", t.gamma);
        else if (key == "eps") take(j, "eps", t.eps);
        else if (key == "eta1") take(j, "eta1", t.eta1);
        else if (key == "eta2") take(j, "eta2", t.eta2);
        else if (key == "steps1") take(j, "steps1", t.steps1);
        else if (key == "steps2") take(j, "steps2", t.steps2);
        else if (key == "a2_init") take(j, "a2_init", t.a2_init);
        else if (key == "kappa0") take(j, "kappa0", t.kappa0);
        else if (key == "p0") take(j, "p0", t.p0_sentinel);
        else if (key == "kernels") take(j, "kernels", t.kernels);
        else if (key == "seqs_per_kernel") take(j, "seqs_per_kernel", t.seqs_per_kernel);
        else if (key == "log_every") take(j, "log_every", t.log_every);
        else throw UsageError("unknown config key: " + key);
    }
}

template <class T, class U>
void over(const std::optional<T> &src, U &dst) {
    if (src) dst = *src;
}

RunConfig resolve(const Flags &f) {
    RunConfig c;
    if (f.config) apply_config_file(*f.config, c);
    if (const char *env = std::getenv(kOutDirEnv); env && *env) c.out = env;
    over(f.out, c.out);
    over(f.S, c.S);
    over(f.k, c.k);
    over(f.T, c.T);
    over(f.seed, c.seed);
    over(f.count, c.count);
    over(f.family, c.family);
    over(f.variant, c.variant);
    if (f.kappa_pos) c.kappa_pos = f.kappa_pos;
    if (f.kappa_sim) c.kappa_sim = f.kappa_sim;
    if (f.large_kappa) c.large_kappa = true;
    over(f.tolerance, c.tolerance);
    over(f.average, c.average);
    if (!f.inputs.empty()) c.inputs = f.inputs;
    TrainConfig &t = c.train;
    over(f.n, t.n);
    over(f.gamma, t.gamma);
    over(f.eps, t.eps);
    over(f.eta1, t.eta1);
    over(f.eta2, t.eta2);
    over(f.steps1, t.steps1);
    over(f.steps2, t.steps2);
    over(f.a2_init, t.a2_init);
    over(f.kappa0, t.kappa0);
    over(f.p0, t.p0_sentinel);
    over(f.kernels, t.kernels);
    over(f.seqs_per_kernel, t.seqs_per_kernel);
    over(f.log_every, t.log_every);
    t.S = c.S;
    t.k = c.k;
    t.seed = c.seed;

    if (c.S < 2 || c.S > 64) throw UsageError("S must be in 2..64");
    if (c.k < 1 || c.k > 6) throw UsageError("k must be in 1..6");
    if (c.T < static_cast<std::size_t>(c.k) + 1) throw UsageError("T must be >= k+1");
    if (c.count == 0) throw UsageError("count must be positive");
    if (c.average == 0) throw UsageError("average must be positive");
    if (!(c.tolerance > 0.0)) throw UsageError("tolerance must be positive");
    try {
        family_from_string(c.family);
        variant_from_string(c.variant);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    return c;
}

ConstructionSpec spec_of(const RunConfig &c) {
    ConstructionSpec sp = make_spec(c.S, c.k, c.T, family_from_string(c.family), variant_from_string(c.variant));
    if (c.large_kappa) sp.kappa_sim = large_kappa_sim(c.k, c.T);
    if (c.kappa_pos) sp.kappa_pos = *c.kappa_pos;
    if (c.kappa_sim) sp.kappa_sim = *c.kappa_sim;
    try {
        sp.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    return sp;
}

void write_file(const fs::path &path, const std::string &text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string kernels_json(const std::vector<MarkovSequence> &seqs) {
    json arr = json::array();
    for (const auto &s : seqs) {
        json item;
        item["seed"] = s.seed;
        item["kernel"] = json::parse(kernel_to_json(*s.kernel));
        arr.push_back(item);
    }
    return arr.dump(2) + "\n";
}

std::string check_json(const std::string &name, double value, double threshold, const char *cmp, bool pass) {
    json j;
    j["name"] = name;
    j["value"] = value;
    j["threshold"] = threshold;
    j["comparison"] = cmp;
    j["pass"] = pass;
    return j.dump();
}

int cmd_gen_data(const RunConfig &c) {
    const auto seqs = sample_sequences(c.k, c.S, c.T, c.count, c.seed);
    const fs::path out(c.out);
    write_file(out / "sequences.csv", sequences_to_csv(seqs));
    write_file(out / "kernels.json", kernels_json(seqs));
    std::cout << "wrote " << seqs.size() << " sequences to " << (out / "sequences.csv").string() << "\n";
    return kExitPass;
}

int cmd_build(const RunConfig &c) {
    const TransformerWeights w = build(spec_of(c));
    const fs::path path = fs::path(c.out) / "weights.json";
    write_file(path, weights_to_json(w));
    std::cout << "parameters " << parameter_count(w, c.T) << " (stored scalars " << stored_scalar_count(w) << ")\n"
              << "wrote " << path.string() << "\n";
    return kExitPass;
}

int cmd_verify(const RunConfig &c) {
    const TransformerWeights w = build(spec_of(c));
    const auto seqs = sample_sequences(c.k, c.S, c.T, c.count, c.seed);
    const VerificationReport r = compare_to_oracle(w, seqs, c.tolerance);
    const fs::path path = fs::path(c.out) / "verification_report.json";
    write_file(path, report_to_json(r));
    std::cout << "max error " << r.max_error << " excluded " << r.excluded << "/" << seqs.size() << " -> "
              << (r.pass ? "PASS" : "FAIL") << "\nreport " << path.string() << "\n";
    return r.pass ? kExitPass : kExitFail;
}

int cmd_attn_export(const RunConfig &c) {
    const TransformerWeights w = build(spec_of(c));
    const auto seqs = sample_sequences(c.k, c.S, c.T, c.average, c.seed);
    const std::size_t N = c.T + 1;
    const fs::path out(c.out);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        for (std::size_t h = 0; h < w.layers[l].heads.size(); ++h) {
            const Matrix actual = averaged_attention(w, seqs, l, h);
            Matrix pseudo(N, N);
            if (l == 0) {
                const bool u_head = w.layers[0].heads.size() == 2 && h == 0;
                pseudo = expected_first_layer_map(c.k, N, u_head);
            } else {
                for (const auto &s : seqs) {
                    const PseudoAttention p = pseudo_attention_map(s.symbols, c.k);
                    for (std::size_t i = 0; i < pseudo.data.size(); ++i)
                        pseudo.data[i] += p.map.data[i] / static_cast<double>(seqs.size());
                }
            }
            const std::string stem = "attention_layer" + std::to_string(l + 1) + "_head" + std::to_string(h + 1);
            write_file(out / (stem + "_actual.csv"), matrix_to_csv(actual));
            write_file(out / (stem + "_pseudo.csv"), matrix_to_csv(pseudo));
            write_file(out / (stem + "_diff.csv"), matrix_to_csv(attention_abs_diff(actual, pseudo)));
        }
    }
    std::cout << "wrote attention maps to " << out.string() << "\n";
    return kExitPass;
}

bool read_report(const std::string &path, json &j) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open report " + path);
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw UsageError("report " + path + ": " + e.what());
    }
    for (const char *key : {"max_error", "tolerance", "excluded_fraction", "sequences"})
        if (!j.contains(key)) throw UsageError("report " + path + " lacks '" + key + "'");
    return true;
}

int cmd_report(const RunConfig &c) {
    std::vector<json> reports;
    std::vector<std::string> names;
    if (c.inputs.empty()) {
        const TransformerWeights w = build(spec_of(c));
        const auto seqs = sample_sequences(c.k, c.S, c.T, c.count, c.seed);
        reports.push_back(json::parse(report_to_json(compare_to_oracle(w, seqs, c.tolerance))));
        names.push_back("S" + std::to_string(c.S) + "_k" + std::to_string(c.k) + "_T" + std::to_string(c.T));
    } else {
        for (const auto &p : c.inputs) {
            json j;
            read_report(p, j);
            reports.push_back(j);
            names.push_back(p);
        }
    }
    json out;
    json checks = json::array();
    bool all = true;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const json &r = reports[i];
        const double err = r["max_error"].get<double>();
        const double tol = r["tolerance"].get<double>();
        const double excl = r["excluded_fraction"].get<double>();
        std::size_t evaluated = 0;
        for (const auto &s : r["sequences"])
            if (!s["excluded"].get<bool>()) ++evaluated;
        const bool err_ok = evaluated > 0 && err <= tol;
        const bool excl_ok = excl <= kMaxExcludedFraction;
        checks.push_back(json::parse(check_json(names[i] + ": oracle error", err, tol, "<=", err_ok)));
        checks.push_back(json::parse(check_json(names[i] + ": excluded fraction", excl, kMaxExcludedFraction, "<=", excl_ok)));
        all = all && err_ok && excl_ok;
    }
    out["checks"] = checks;
    out["pass"] = all;
    const fs::path path = fs::path(c.out) / "report.json";
    write_file(path, out.dump(2) + "\n");
    for (const auto &ch : checks)
        std::cout << (ch["pass"].get<bool>() ? "PASS " : "FAIL ") << ch["name"].get<std::string>() << " = "
                  << ch["value"].get<double>() << "\n";
    std::cout << "report " << path.string() << "\n";
    return all ? kExitPass : kExitFail;
}

std::string final_softmax_csv(const TrainingRun &run) {
    const Vec sp = softmax(run.theta.p);
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.precision(17);
    os << "index,softmax_p\n";
    for (std::size_t m = 0; m < sp.size(); ++m) os << m << ',' << sp[m] << '\n';
    return os.str();
}

int cmd_train_c(RunConfig c) {
    c.train.k = 1;
    TrainingRun run;
    try {
        run = train_two_stage(c.train);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const fs::path out(c.out);
    write_file(out / "trajectory.csv", trajectory_to_csv(run));
    write_file(out / "config.json", config_to_json(c.train));
    write_file(out / "final_softmax.csv", final_softmax_csv(run));

    bool mono = true;
    double prev = 0.0;
    for (const auto &s : run.trajectory)
        if (s.stage == 1) {
            mono = mono && s.softmax_p[1] >= prev;
            prev = s.softmax_p[1];
        }
    const double sp1 = softmax(run.theta.p)[1];
    const double gap = run.trajectory.empty() ? 0.0 : run.trajectory.back().loss - run.batch_entropy;
    json s;
    s["diverged"] = run.diverged;
    s["rejected_kernels"] = run.rejected_kernels;
    s["softmax_p1"] = sp1;
    s["a2"] = run.theta.a2;
    s["final_loss"] = run.trajectory.empty() ? 0.0 : run.trajectory.back().loss;
    s["batch_entropy"] = run.batch_entropy;
    s["optimal_loss"] = run.optimal_loss;
    s["stage1_monotone"] = mono;
    json checks = json::array();
    checks.push_back(json::parse(check_json("softmax(p)_1 after stage 1", sp1, 0.9, ">=", sp1 >= 0.9)));
    checks.push_back(json::parse(check_json("loss gap to batch entropy", gap, 0.05, "<=", gap <= 0.05)));
    const bool pass = !run.diverged && mono && sp1 >= 0.9 && gap <= 0.05;
    s["checks"] = checks;
    s["pass"] = pass;
    write_file(out / "summary.json", s.dump(2) + "\n");
    std::cout << "softmax(p)_1 " << sp1 << " loss gap " << gap << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kExitPass : kExitFail;
}

int cmd_train_d(const RunConfig &c) {
    TrainingRun run;
    try {
        run = train_preconditioned(c.train);
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const fs::path out(c.out);
    write_file(out / "trajectory.csv", trajectory_to_csv(run));
    write_file(out / "config.json", config_to_json(c.train));
    write_file(out / "final_softmax.csv", final_softmax_csv(run));

    const Vec sp = softmax(run.theta.p);
    const double target = 1.0 / c.k;
    bool pass = !run.diverged;
    json checks = json::array();
    for (int m = 1; m <= c.k; ++m) {
        const bool ok = std::fabs(sp[m] - target) <= 0.05;
        pass = pass && ok;
        checks.push_back(json::parse(check_json("softmax(p)_" + std::to_string(m), sp[m], target, "within 0.05 of", ok)));
    }
    json s;
    s["diverged"] = run.diverged;
    s["rejected_kernels"] = run.rejected_kernels;
    s["checks"] = checks;
    s["pass"] = pass;
    write_file(out / "summary.json", s.dump(2) + "\n");
    for (int m = 1; m <= c.k; ++m) std::cout << "softmax(p)_" << m << " " << sp[m] << "\n";
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kExitPass : kExitFail;
}

} // namespace

int run(int argc, const char *const *argv) {
    CLI::App app{"In-context k-gram laboratory"};
    app.require_subcommand(1, 1);
    Flags f;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "sample kernels and sequences"},
        {"build", "write constructed transformer weights"},
        {"verify", "compare constructed logits with the conditional k-gram"},
        {"attn-export", "write actual, pseudo and difference attention maps"},
        {"train-c", "two-stage training of the first-order reduced model"},
        {"train-d", "preconditioned training of the k-th order reduced model"},
        {"report", "summarize verification reports against thresholds"},
    };
    for (const auto &[name, help] : commands) add_flags(app.add_subcommand(name, help), f);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitPass : kExitUsage;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        RunConfig c = resolve(f);
        if (cmd == "gen-data") return cmd_gen_data(c);
        if (cmd == "build") return cmd_build(c);
        if (cmd == "verify") return cmd_verify(c);
        if (cmd == "attn-export") return cmd_attn_export(c);
        if (cmd == "train-c") return cmd_train_c(c);
        if (cmd == "train-d") return cmd_train_d(c);
        return cmd_report(c);
    } catch (const UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFail;
    }
}

int run(const std::vector<std::string> &args) {
    std::vector<const char *> argv{"icl"};
    for (const auto &a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace icl
