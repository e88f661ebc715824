#include "concurl/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "concurl/serialize.hpp"

namespace fs = std::filesystem;

namespace concurl::cli {

using json = nlohmann::json;

namespace {

std::string iso_now() {
    std::time_t tt = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

namespace {

// One mutator per known config key; bad values report through `errors`.
struct KeyParser {
    using Apply = std::function<void(TrainConfig&, const std::string&)>;
    Apply apply;
};

template <typename T>
T parse_number(const std::string& v);

template <>
int parse_number<int>(const std::string& v) {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}
template <>
double parse_number<double>(const std::string& v) {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}
template <>
std::uint64_t parse_number<std::uint64_t>(const std::string& v) {
    size_t pos = 0;
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

const std::map<std::string, KeyParser>& config_keys() {
    static const std::map<std::string, KeyParser> keys = [] {
        std::map<std::string, KeyParser> m;
        auto num = [&m](const std::string& key, auto member) {
            using T = std::remove_reference_t<decltype(std::declval<TrainConfig>().*member)>;
            m[key] = {[member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(v); }};
        };
        num("epochs", &TrainConfig::epochs);
        num("batch_size", &TrainConfig::batch_size);
        num("lr", &TrainConfig::lr);
        num("lr_decay_factor", &TrainConfig::lr_decay_factor);
        num("momentum", &TrainConfig::momentum);
        num("weight_decay", &TrainConfig::weight_decay);
        num("alpha", &TrainConfig::alpha);
        num("beta", &TrainConfig::beta);
        num("k", &TrainConfig::k);
        num("tau_cluster", &TrainConfig::tau_cluster);
        num("tau_id", &TrainConfig::tau_id);
        num("epsilon", &TrainConfig::epsilon);
        num("sinkhorn_iters", &TrainConfig::sinkhorn_iters);
        num("ensemble_size", &TrainConfig::ensemble_size);
        num("proj_dim", &TrainConfig::proj_dim);
        num("enc_hidden", &TrainConfig::enc_hidden);
        num("feat_dim", &TrainConfig::feat_dim);
        num("head_hidden", &TrainConfig::head_hidden);
        num("embed_dim", &TrainConfig::embed_dim);
        num("bank_momentum", &TrainConfig::bank_momentum);
        num("m_noise", &TrainConfig::m_noise);
        num("seed", &TrainConfig::seed);
        num("eval_every", &TrainConfig::eval_every);
        num("kmeans_n_init", &TrainConfig::kmeans_n_init);
        num("kmeans_max_iter", &TrainConfig::kmeans_max_iter);
        m["noise_sigma"] = {[](TrainConfig& c, const std::string& v) {
            c.augment.noise_sigma = parse_number<double>(v);
        }};
        m["dropout_p"] = {[](TrainConfig& c, const std::string& v) {
            c.augment.dropout_p = parse_number<double>(v);
        }};
        m["scale_jitter"] = {[](TrainConfig& c, const std::string& v) {
            c.augment.scale_jitter = parse_number<double>(v);
        }};
        m["ensemble_kind"] = {[](TrainConfig& c, const std::string& v) {
            c.ensemble_kind = ensemble_kind_from_string(v);
        }};
        m["lr_decay_epochs"] = {[](TrainConfig& c, const std::string& v) {
            c.lr_decay_epochs.clear();
            if (trim(v).empty()) return;
            for (const std::string& part : split(v, ','))
                c.lr_decay_epochs.push_back(parse_number<int>(trim(part)));
        }};
        return m;
    }();
    return keys;
}

void apply_overrides(TrainConfig& cfg, const std::map<std::string, std::string>& kv,
                     const std::string& source, std::vector<std::string>& errors) {
    const auto& keys = config_keys();
    for (const auto& [key, value] : kv) {
        auto it = keys.find(key);
        if (it == keys.end()) {
            errors.push_back(source + ": unknown config key '" + key + "'");
            continue;
        }
        try {
            it->second.apply(cfg, value);
        } catch (const std::exception& e) {
            errors.push_back(source + ": bad value for '" + key + "': '" + value + "' (" + e.what() + ")");
        }
    }
}

}  // namespace

TrainConfig resolve_train_config(const std::string& config_path,
                                 const std::map<std::string, std::string>& flag_overrides,
                                 std::vector<std::string>& errors) {
    TrainConfig cfg;  // defaults
    if (!config_path.empty()) {
        try {
            apply_overrides(cfg, parse_config_file(config_path), "config file", errors);
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    apply_overrides(cfg, flag_overrides, "flag", errors);
    if (errors.empty()) {
        try {
            cfg.validate();
        } catch (const std::exception& e) {
            errors.push_back(e.what());
        }
    }
    return cfg;
}

Dataset dataset_from_synth_spec(const std::string& spec) {
    const std::string prefix = "blobs:";
    if (spec.rfind(prefix, 0) != 0)
        throw std::invalid_argument("unsupported synth spec (expected blobs:...): " + spec);
    int k = 0, n = 0, dim = 0;
    double spread = 0.5, separation = 8.0;
    std::uint64_t seed = 1;
    for (const std::string& part : split(spec.substr(prefix.size()), ',')) {
        auto kv = split(part, '=');
        if (kv.size() != 2) throw std::invalid_argument("bad synth spec item: " + part);
        const std::string key = trim(kv[0]), value = trim(kv[1]);
        if (key == "k") k = parse_number<int>(value);
        else if (key == "n") n = parse_number<int>(value);
        else if (key == "dim") dim = parse_number<int>(value);
        else if (key == "spread") spread = parse_number<double>(value);
        else if (key == "separation") separation = parse_number<double>(value);
        else if (key == "seed") seed = parse_number<std::uint64_t>(value);
        else throw std::invalid_argument("unknown synth spec key: " + key);
    }
    return make_gaussian_blobs(k, n, dim, spread, separation, seed);
}

Dataset resolve_dataset(const std::string& dataset_path, const std::string& synth_spec,
                        bool unlabeled) {
    if (dataset_path.empty() == synth_spec.empty())
        throw std::invalid_argument("exactly one of --dataset and --synth must be given");
    if (!dataset_path.empty()) return load_feature_dataset(dataset_path, !unlabeled);
    return dataset_from_synth_spec(synth_spec);
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (int i = 0; i < ds.n(); ++i)
        for (int j = 0; j < ds.dim(); ++j) {
            double v = ds.features(i, j);
            mix_bytes(&v, sizeof v);
        }
    if (ds.labels)
        for (int l : *ds.labels) mix_bytes(&l, sizeof l);
    return h;
}

namespace {

json manifest_json(const TrainConfig& cfg, const Dataset& ds, const std::string& started_at,
                   const std::string& finished_at) {
    json m{
        {"code_version", kCodeVersion},
        {"config", config_to_json(cfg)},
        {"config_hash", config_hash(cfg)},
        {"seed", cfg.seed},
        {"dataset",
         {{"rows", ds.n()},
          {"dim", ds.dim()},
          {"labeled", ds.labels.has_value()},
          {"checksum", dataset_checksum(ds)}}},
        {"started_at", started_at},
    };
    if (!finished_at.empty()) m["finished_at"] = finished_at;
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

json stats_row_json(const EpochStats& s) {
    json j{{"epoch", s.epoch},
           {"l_b", s.l_b_mean},
           {"l_z", s.l_z_mean},
           {"l_total", s.l_total_mean},
           {"wall_time_seconds", s.wall_time_seconds}};
    if (s.eval) {
        j["eval_acc"] = s.eval->acc;
        j["eval_nmi"] = s.eval->nmi;
        j["eval_ari"] = s.eval->ari;
    }
    if (s.diversity_nmi) {
        j["diversity_nmi_mean"] = s.diversity_nmi->first;
        j["diversity_nmi_std"] = s.diversity_nmi->second;
    }
    return j;
}

json report_json(const MetricReport& r) {
    return json{{"acc", r.acc}, {"nmi", r.nmi}, {"ari", r.ari}, {"permutation", r.permutation}};
}

void write_confusion_csvs(const MetricReport& r, const fs::path& dir) {
    std::ostringstream counts, percents;
    const Eigen::MatrixXi pct = confusion_percentages(r.matched_confusion);
    for (int i = 0; i < r.matched_confusion.rows(); ++i) {
        for (int j = 0; j < r.matched_confusion.cols(); ++j) {
            counts << (j ? "," : "") << r.matched_confusion(i, j);
            percents << (j ? "," : "") << pct(i, j);
        }
        counts << "\n";
        percents << "\n";
    }
    write_text(dir / "confusion.csv", counts.str());
    write_text(dir / "confusion_percent.csv", percents.str());
}

// Shared by cmd_train and sweep trials.
int run_training(const TrainConfig& cfg, const Dataset& ds, const fs::path& dir,
                 bool intermediate_checkpoints) {
    fs::create_directories(dir);
    const std::string started = iso_now();
    write_text(dir / "manifest.json", manifest_json(cfg, ds, started, "").dump(2) + "\n");

    std::ofstream stats(dir / "stats.jsonl");
    if (!stats) throw std::runtime_error("cannot write stats.jsonl in " + dir.string());

    FitCallbacks cb;
    cb.on_epoch = [&stats](const EpochStats& s) { stats << stats_row_json(s).dump() << "\n" << std::flush; };
    if (intermediate_checkpoints) {
        cb.on_checkpoint = [&dir](const ModelState& st) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_epoch%04d.json", st.epoch);
            save_checkpoint(st, (dir / name).string());
        };
    }
    auto [state, all_stats] = fit(cfg, ds, cb);
    save_checkpoint(state, (dir / "checkpoint_final.json").string());

    if (ds.labels) {
        MetricReport r = evaluate_clustering(state, ds);
        write_text(dir / "metrics.json", report_json(r).dump(2) + "\n");
        write_confusion_csvs(r, dir);
        std::cout << "final: acc=" << r.acc << " nmi=" << r.nmi << " ari=" << r.ari << "\n";
    }
    write_text(dir / "manifest.json", manifest_json(cfg, ds, started, iso_now()).dump(2) + "\n");
    return 0;
}

}  // namespace

int cmd_train(const TrainArgs& args) {
    std::vector<std::string> errors;
    TrainConfig cfg = resolve_train_config(args.config_path, args.overrides, errors);
    if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
        return 1;
    }
    if (args.out_dir.empty()) {
        std::cerr << "train: --out is required\n";
        return 1;
    }
    Dataset ds = resolve_dataset(args.dataset_path, args.synth_spec, args.unlabeled);
    return run_training(cfg, ds, args.out_dir, /*intermediate_checkpoints=*/true);
}

int cmd_eval(const EvalArgs& args) {
    ModelState state = load_checkpoint(args.checkpoint_path);
    Dataset ds = resolve_dataset(args.dataset_path, args.synth_spec, /*unlabeled=*/false);
    if (ds.dim() != state.encoder.in_dim())
        throw std::runtime_error("eval: dataset dim " + std::to_string(ds.dim()) +
                                 " does not match checkpoint input dim " +
                                 std::to_string(state.encoder.in_dim()));
    MetricReport r = evaluate_clustering(state, ds);
    std::cout << report_json(r).dump(2) << "\n";
    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        write_text(fs::path(args.out_dir) / "metrics.json", report_json(r).dump(2) + "\n");
        write_confusion_csvs(r, args.out_dir);
        if (args.retrieval_queries > 0) {
            Eigen::MatrixXd feats = extract_features(state, ds, /*normalized=*/true);
            RngStream rng(state.cfg.seed, "eval.retrieval");
            std::ostringstream os;
            os << "query,neighbor1,neighbor2,neighbor3,neighbor4,neighbor5\n";
            const int q = std::min(args.retrieval_queries, ds.n());
            const int kNeighbors = std::min(5, ds.n() - 1);
            for (int i = 0; i < q; ++i) {
                int query = static_cast<int>(rng.uniform_int(ds.n()));
                os << query;
                for (int nb : nearest_neighbors(feats, query, kNeighbors)) os << "," << nb;
                os << "\n";
            }
            write_text(fs::path(args.out_dir) / "retrieval.csv", os.str());
        }
    }
    return 0;
}

namespace {

struct SweepTrial {
    int index = 0;
    double tau_id = 0.0;
    double lr = 0.0;
    int m = 0;
    int proj_dim = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double acc = 0.0, nmi = 0.0, ari = 0.0;
};

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

double std_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / v.size());
}

std::string format_value(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

int cmd_sweep(const SweepArgs& args) {
    std::vector<std::string> errors;
    TrainConfig base = resolve_train_config(args.base.config_path, args.base.overrides, errors);
    if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
        return 1;
    }
    if (args.base.out_dir.empty()) {
        std::cerr << "sweep: --out is required\n";
        return 1;
    }
    Dataset ds = resolve_dataset(args.base.dataset_path, args.base.synth_spec, args.base.unlabeled);

    auto tau_grid = args.tau_id_grid.empty() ? std::vector<double>{base.tau_id} : args.tau_id_grid;
    auto lr_grid = args.lr_grid.empty() ? std::vector<double>{base.lr} : args.lr_grid;
    auto m_grid = args.m_grid.empty() ? std::vector<int>{base.ensemble_size} : args.m_grid;
    auto pd_grid = args.proj_dim_grid.empty() ? std::vector<int>{base.proj_dim} : args.proj_dim_grid;

    std::vector<SweepTrial> trials;
    for (double tau : tau_grid)
        for (double lr : lr_grid)
            for (int m : m_grid)
                for (int pd : pd_grid) {
                    SweepTrial t;
                    t.index = static_cast<int>(trials.size());
                    t.tau_id = tau;
                    t.lr = lr;
                    t.m = m;
                    t.proj_dim = pd;
                    t.seed = base.seed + static_cast<std::uint64_t>(t.index);
                    trials.push_back(t);
                }
    if (trials.empty()) {
        std::cerr << "sweep: empty grid\n";
        return 1;
    }

    const fs::path out_dir = args.base.out_dir;
    fs::create_directories(out_dir);

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= trials.size()) return;
            SweepTrial& t = trials[i];
            TrainConfig cfg = base;
            cfg.tau_id = t.tau_id;
            cfg.lr = t.lr;
            cfg.ensemble_size = t.m;
            cfg.proj_dim = t.proj_dim;
            cfg.seed = t.seed;
            char name[32];
            std::snprintf(name, sizeof name, "trial_%03d", t.index);
            try {
                run_training(cfg, ds, out_dir / name, /*intermediate_checkpoints=*/false);
                std::ifstream mf(out_dir / name / "metrics.json");
                if (mf) {
                    json r;
                    mf >> r;
                    t.acc = r.at("acc").get<double>();
                    t.nmi = r.at("nmi").get<double>();
                    t.ari = r.at("ari").get<double>();
                }
                t.ok = true;
            } catch (const std::exception& e) {
                t.ok = false;
                t.error = e.what();
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(args.jobs, static_cast<int>(trials.size())));
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    // Per-trial summary.
    {
        std::ostringstream os;
        os << "trial,tau_id,lr,ensemble_size,proj_dim,seed,status,acc,nmi,ari\n";
        for (const auto& t : trials) {
            os << t.index << "," << format_value(t.tau_id) << "," << format_value(t.lr) << ","
               << t.m << "," << t.proj_dim << "," << t.seed << ","
               << (t.ok ? "ok" : "failed") << "," << format_value(t.acc) << ","
               << format_value(t.nmi) << "," << format_value(t.ari) << "\n";
        }
        write_text(out_dir / "sweep_summary.csv", os.str());
    }

    // Conditional empirical means of accuracy: for each hyperparameter value,
    // alone and conditioned on a value of another hyperparameter, averaged
    // over the remaining grid axes.
    {
        auto value_of = [](const SweepTrial& t, int h) -> std::string {
            switch (h) {
                case 0: return format_value(t.tau_id);
                case 1: return format_value(t.lr);
                case 2: return std::to_string(t.m);
                default: return std::to_string(t.proj_dim);
            }
        };
        const char* names[4] = {"tau_id", "lr", "ensemble_size", "proj_dim"};
        std::ostringstream os;
        os << "param,value,given_param,given_value,mean_acc,std_acc,n_trials\n";
        for (int hi = 0; hi < 4; ++hi) {
            std::map<std::string, std::vector<double>> marginal;
            for (const auto& t : trials)
                if (t.ok) marginal[value_of(t, hi)].push_back(t.acc);
            for (const auto& [v, accs] : marginal)
                os << names[hi] << "," << v << ",,," << format_value(mean_of(accs)) << ","
                   << format_value(std_of(accs)) << "," << accs.size() << "\n";
            for (int hj = 0; hj < 4; ++hj) {
                if (hj == hi) continue;
                std::map<std::pair<std::string, std::string>, std::vector<double>> cond;
                for (const auto& t : trials)
                    if (t.ok) cond[{value_of(t, hi), value_of(t, hj)}].push_back(t.acc);
                for (const auto& [vv, accs] : cond)
                    os << names[hi] << "," << vv.first << "," << names[hj] << "," << vv.second
                       << "," << format_value(mean_of(accs)) << "," << format_value(std_of(accs))
                       << "," << accs.size() << "\n";
            }
        }
        write_text(out_dir / "sweep_conditional_means.csv", os.str());
    }

    // Accuracy histogram data (20 bins over [0,1]).
    {
        const int kBins = 20;
        std::vector<int> counts(kBins, 0);
        for (const auto& t : trials)
            if (t.ok) ++counts[std::min(kBins - 1, static_cast<int>(t.acc * kBins))];
        std::ostringstream os;
        os << "bin_lo,bin_hi,count\n";
        for (int b = 0; b < kBins; ++b)
            os << format_value(static_cast<double>(b) / kBins) << ","
               << format_value(static_cast<double>(b + 1) / kBins) << "," << counts[b] << "\n";
        write_text(out_dir / "sweep_accuracy_histogram.csv", os.str());
    }

    int failures = 0;
    for (const auto& t : trials)
        if (!t.ok) {
            ++failures;
            std::cerr << "trial " << t.index << " failed: " << t.error << "\n";
        }
    std::cout << "sweep: " << trials.size() - failures << "/" << trials.size() << " trials ok\n";
    return 0;  // individual failures are recorded, the sweep itself succeeds
}

int cmd_synth_demo(const SynthDemoArgs& args) {
    if (args.out_dir.empty()) {
        std::cerr << "synth-demo: --out is required\n";
        return 1;
    }
    fs::create_directories(args.out_dir);

    Dataset ds = make_gaussian_blobs(3, 50, 2, 0.3, 4.0, args.seed);
    const int K = 3;

    // Class centroids act as the prototypes.
    Prototypes protos;
    protos.C = Eigen::MatrixXd::Zero(2, K);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < ds.n(); ++i) {
        protos.C.col((*ds.labels)[i]) += ds.features.row(i).transpose();
        counts[(*ds.labels)[i]] += 1.0;
    }
    for (int c = 0; c < K; ++c) protos.C.col(c) /= counts[c];

    const double tau = 0.1;
    Eigen::MatrixXd p = assignment_probabilities(ds.features, protos, tau);

    TransformEnsemble ens = init_ensemble(1, EnsembleKind::GaussianProjection, 2, 2,
                                          derive_seed(args.seed, "demo.transform"));
    TransformedPair tp = apply_transform(ens.transforms[0], ds.features, protos.C, 0);
    Eigen::MatrixXd p_tilde = softmax_rows(tp.Z * tp.C / tau);

    Eigen::MatrixXd q = sinkhorn_codes_converged(ds.features, protos, 0.05).q_rows();

    RowNormalized zbar = l2_normalize_rows(ds.features);
    std::ostringstream os;
    os << "id,label,zx,zy";
    for (int c = 0; c < K; ++c) os << ",p" << c;
    for (int c = 0; c < K; ++c) os << ",pt" << c;
    for (int c = 0; c < K; ++c) os << ",q" << c;
    os << "\n";
    os.precision(10);
    for (int i = 0; i < ds.n(); ++i) {
        os << i << "," << (*ds.labels)[i] << "," << zbar.normalized(i, 0) << ","
           << zbar.normalized(i, 1);
        for (int c = 0; c < K; ++c) os << "," << p(i, c);
        for (int c = 0; c < K; ++c) os << "," << p_tilde(i, c);
        for (int c = 0; c < K; ++c) os << "," << q(i, c);
        os << "\n";
    }
    write_text(fs::path(args.out_dir) / "demo_table.csv", os.str());

    // The transformed assignments must look like noisy copies of the
    // originals: same argmax everywhere, small but nonzero drift, and
    // near-one-hot Sinkhorn targets wherever the assignment is confident.
    Partition am_p = argmax_assignment(p);
    Partition am_pt = argmax_assignment(p_tilde);
    int argmax_mismatches = 0;
    for (int i = 0; i < ds.n(); ++i)
        if (am_p.labels[i] != am_pt.labels[i]) ++argmax_mismatches;

    const double kMarginThreshold = 0.2;
    int confident = 0, confident_onehot = 0;
    for (int i = 0; i < ds.n(); ++i) {
        std::vector<double> row{p(i, 0), p(i, 1), p(i, 2)};
        std::sort(row.begin(), row.end());
        if (row[2] - row[1] >= kMarginThreshold) {
            ++confident;
            if (q.row(i).maxCoeff() >= 0.99) ++confident_onehot;
        }
    }
    const double mean_abs_diff = (p - p_tilde).cwiseAbs().mean();

    bool ok = true;
    auto check = [&ok](bool cond, const std::string& what) {
        std::cout << (cond ? "[PASS] " : "[FAIL] ") << what << "\n";
        ok = ok && cond;
    };
    check(argmax_mismatches == 0, "transformed assignments keep the original argmax for all rows");
    check(confident > 0 && confident_onehot == confident,
          "targets are near one-hot (max >= 0.99) for all " + std::to_string(confident) +
              " confidently assigned rows");
    check(mean_abs_diff > 0.0 && mean_abs_diff < 0.2,
          "transformed probabilities drift but stay close (mean |p - ptilde| = " +
              format_value(mean_abs_diff) + ")");
    return ok ? 0 : 1;
}

int cmd_diversity(const DiversityArgs& args) {
    ModelState state = load_checkpoint(args.checkpoint_path);
    if (state.ensemble.size() < 2)
        throw std::runtime_error("diversity: checkpoint ensemble has fewer than 2 transforms");
    Dataset ds = resolve_dataset(args.dataset_path, args.synth_spec, args.unlabeled);
    if (ds.dim() != state.encoder.in_dim())
        throw std::runtime_error("diversity: dataset dim does not match checkpoint");
    auto [mean, stddev] = diversity_snapshot(state, ds);
    json j{{"pairwise_nmi_mean", mean},
           {"pairwise_nmi_std", stddev},
           {"ensemble_size", state.ensemble.size()},
           {"epoch", state.epoch}};
    std::cout << j.dump(2) << "\n";
    if (!args.out_path.empty()) write_text(args.out_path, j.dump(2) + "\n");
    return 0;
}

namespace {

// Registers the config-affecting flags on a subcommand and returns holders
// whose values are copied into `overrides` for every flag the user set.
struct ConfigFlags {
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option*>> options;

    void add(CLI::App* app, const std::string& flag, const std::string& key,
             const std::string& desc) {
        auto* opt = app->add_option(flag, values[key], desc);
        options.emplace_back(key, opt);
    }
    void collect(std::map<std::string, std::string>& overrides) const {
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) overrides[key] = values.at(key);
    }
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
    flags.add(app, "--seed", "seed", "master random seed");
    flags.add(app, "--epochs", "epochs", "training epochs");
    flags.add(app, "--alpha", "alpha", "consensus loss weight");
    flags.add(app, "--beta", "beta", "instance-discrimination loss weight");
    flags.add(app, "--ensemble-size", "ensemble_size", "number of random transforms M");
    flags.add(app, "--ensemble-kind", "ensemble_kind",
              "gaussian_projection | diagonal | mixed");
    flags.add(app, "--proj-dim", "proj_dim", "projection output dim (0 = embed_dim/2)");
    flags.add(app, "--tau-id", "tau_id", "instance-discrimination temperature");
    flags.add(app, "--tau-cluster", "tau_cluster", "cluster softmax temperature");
    flags.add(app, "--epsilon", "epsilon", "Sinkhorn entropy weight");
    flags.add(app, "--sinkhorn-iters", "sinkhorn_iters", "Sinkhorn rounds per batch");
    flags.add(app, "--lr", "lr", "learning rate");
    flags.add(app, "--batch-size", "batch_size", "batch size");
    flags.add(app, "--k", "k", "number of prototypes (0 = label classes)");
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& part : split(s, ',')) out.push_back(parse_number<double>(trim(part)));
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    if (trim(s).empty()) return out;
    for (const auto& part : split(s, ',')) out.push_back(parse_number<int>(trim(part)));
    return out;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"consensus-clustering representation learning on feature-vector data"};
    app.require_subcommand(1);

    TrainArgs train_args;
    ConfigFlags train_flags;
    auto* train = app.add_subcommand("train", "train a model and write a run directory");
    train->add_option("--config", train_args.config_path, "key=value config file");
    train->add_option("--dataset", train_args.dataset_path, "CSV dataset path");
    train->add_option("--synth", train_args.synth_spec, "synthetic spec, e.g. blobs:k=3,n=50,dim=2");
    train->add_flag("--unlabeled", train_args.unlabeled, "CSV has no label column");
    train->add_option("--out", train_args.out_dir, "run output directory")->required();
    add_config_flags(train, train_flags);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint file")->required();
    eval->add_option("--dataset", eval_args.dataset_path, "CSV dataset path");
    eval->add_option("--synth", eval_args.synth_spec, "synthetic spec");
    eval->add_option("--out", eval_args.out_dir, "output directory for metrics files");
    eval->add_option("--retrieval", eval_args.retrieval_queries,
                     "also write nearest-neighbor retrieval rows for N random queries");

    SweepArgs sweep_args;
    ConfigFlags sweep_flags;
    std::string tau_grid_s, lr_grid_s, m_grid_s, pd_grid_s;
    auto* sweep = app.add_subcommand("sweep", "grid sweep over hyperparameters");
    sweep->add_option("--config", sweep_args.base.config_path, "key=value config file");
    sweep->add_option("--dataset", sweep_args.base.dataset_path, "CSV dataset path");
    sweep->add_option("--synth", sweep_args.base.synth_spec, "synthetic spec");
    sweep->add_flag("--unlabeled", sweep_args.base.unlabeled, "CSV has no label column");
    sweep->add_option("--out", sweep_args.base.out_dir, "sweep output directory")->required();
    sweep->add_option("--tau-id-grid", tau_grid_s, "comma list of tau_id values");
    sweep->add_option("--lr-grid", lr_grid_s, "comma list of learning rates");
    sweep->add_option("--m-grid", m_grid_s, "comma list of ensemble sizes (log-scale spacing)");
    sweep->add_option("--proj-dim-grid", pd_grid_s, "comma list of projection dims");
    sweep->add_option("--jobs", sweep_args.jobs, "worker pool size");
    add_config_flags(sweep, sweep_flags);

    SynthDemoArgs demo_args;
    auto* demo = app.add_subcommand("synth-demo",
                                    "three-cluster demonstration table (p vs transformed p vs q)");
    demo->add_option("--out", demo_args.out_dir, "output directory")->required();
    demo->add_option("--seed", demo_args.seed, "demo seed");

    DiversityArgs div_args;
    auto* div = app.add_subcommand("diversity", "pairwise-NMI diversity of a checkpoint's ensemble");
    div->add_option("--checkpoint", div_args.checkpoint_path, "checkpoint file")->required();
    div->add_option("--dataset", div_args.dataset_path, "CSV dataset path");
    div->add_option("--synth", div_args.synth_spec, "synthetic spec");
    div->add_flag("--unlabeled", div_args.unlabeled, "CSV has no label column");
    div->add_option("--out", div_args.out_path, "optional JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) {
            train_flags.collect(train_args.overrides);
            return cmd_train(train_args);
        }
        if (eval->parsed()) return cmd_eval(eval_args);
        if (sweep->parsed()) {
            sweep_flags.collect(sweep_args.base.overrides);
            sweep_args.tau_id_grid = parse_double_list(tau_grid_s);
            sweep_args.lr_grid = parse_double_list(lr_grid_s);
            sweep_args.m_grid = parse_int_list(m_grid_s);
            sweep_args.proj_dim_grid = parse_int_list(pd_grid_s);
            return cmd_sweep(sweep_args);
        }
        if (demo->parsed()) return cmd_synth_demo(demo_args);
        if (div->parsed()) return cmd_diversity(div_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace concurl::cli
