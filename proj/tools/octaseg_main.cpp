#include <CLI11.hpp>
#include <json.hpp>

#include "octa/experiments.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace octa;

namespace {

// Layered key=value config: defaults < config files (in order) < --set
// overrides. Every key must be consumed by some option; leftovers are
// reported as config errors to catch typos.
class KvStore {
public:
    void load_file(const std::string& path) {
        if (!file_exists(path)) throw ConfigError("config file not found: " + path);
        std::istringstream is(read_text_file(path));
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
            kv_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
        }
    }

    void set(const std::string& spec) {
        const size_t eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + spec);
        kv_[trim(spec.substr(0, eq))] = trim(spec.substr(eq + 1));
    }

    std::string get_str(const std::string& key, const std::string& def) {
        used_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }
    int get_int(const std::string& key, int def) {
        const std::string v = get_str(key, "");
        if (v.empty()) return def;
        try {
            size_t pos = 0;
            const int r = std::stoi(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
        }
    }
    uint64_t get_u64(const std::string& key, uint64_t def) {
        const std::string v = get_str(key, "");
        if (v.empty()) return def;
        try {
            size_t pos = 0;
            const uint64_t r = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + v +
                              "'");
        }
    }
    double get_double(const std::string& key, double def) {
        const std::string v = get_str(key, "");
        if (v.empty()) return def;
        try {
            size_t pos = 0;
            const double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
        }
    }
    bool get_bool(const std::string& key, bool def) {
        const std::string v = get_str(key, "");
        if (v.empty()) return def;
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
    }

    void finish() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }

private:
    static std::string trim(std::string s) {
        const char* ws = " \t\r";
        const size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return {};
        const size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    }
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> used_;
};

struct CommonArgs {
    std::vector<std::string> config_files;
    std::vector<std::string> sets;
    std::string out;
    bool resume = false;

    KvStore kv() const {
        KvStore s;
        for (const auto& f : config_files) s.load_file(f);
        for (const auto& v : sets) s.set(v);
        return s;
    }
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out = true) {
    cmd->add_option("--config", a.config_files, "config file(s), later files win");
    cmd->add_option("--set", a.sets, "override a config key, key=value");
    auto* out = cmd->add_option("--out", a.out, "output directory");
    if (needs_out) out->required();
    cmd->add_flag("--resume", a.resume, "allow writing into an existing, non-empty directory");
}

void prepare_out_dir(const std::string& out, bool resume) {
    const fs::path p(out);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw ConfigError("output path is not a directory: " + out);
        if (!resume && !fs::is_empty(p))
            throw ConfigError("output directory is not empty (pass --resume to allow): " + out);
    } else {
        fs::create_directories(p);
    }
}

TrainConfig train_from_kv(KvStore& kv) {
    TrainConfig tc;
    tc.epochs = kv.get_int("train.epochs", tc.epochs);
    tc.lr0 = kv.get_double("train.lr0", tc.lr0);
    tc.weight_decay = kv.get_double("train.weight_decay", tc.weight_decay);
    tc.batch_size = kv.get_int("train.batch_size", tc.batch_size);
    tc.poly_power = kv.get_double("train.poly_power", tc.poly_power);
    tc.rotation_deg = kv.get_double("train.rotation_deg", tc.rotation_deg);
    tc.dice_eps = kv.get_double("train.dice_eps", tc.dice_eps);
    tc.joint = kv.get_bool("train.joint", tc.joint);
    tc.seed = kv.get_u64("train.seed", tc.seed);
    return tc;
}

CoarseConfig coarse_from_kv(KvStore& kv) {
    CoarseConfig cc;
    cc.base_width = kv.get_int("coarse.base_width", cc.base_width);
    cc.dual_branch = kv.get_bool("coarse.dual_branch", cc.dual_branch);
    cc.shared_stages = kv.get_int("coarse.shared_stages", cc.shared_stages);
    cc.centerline_blocks = kv.get_int("coarse.centerline_blocks", cc.centerline_blocks);
    cc.reduction = kv.get_int("coarse.reduction", cc.reduction);
    return cc;
}

SrsConfig srs_from_kv(KvStore& kv) {
    SrsConfig sc;
    sc.m = kv.get_int("srs.m", sc.m);
    sc.hidden_channels = {kv.get_int("srs.hidden0", 32), kv.get_int("srs.hidden1", 32),
                          sc.m * sc.m};
    sc.refine_centerline_branch = kv.get_bool("srs.refine_centerline", true);
    sc.init_sigma = kv.get_double("srs.init_sigma", sc.init_sigma);
    return sc;
}

void freeze_config(const std::string& out, const std::string& command, const std::string& body) {
    write_text_file((fs::path(out) / "config.txt").string(),
                    "command = " + command + "\n" + body);
}

DatasetManifest manifest_from_arg(const std::string& data) {
    if (fs::is_directory(data)) {
        const fs::path m = fs::path(data) / "manifest.txt";
        if (!fs::exists(m))
            throw DataError("no manifest.txt in dataset directory: " + data);
        return DatasetManifest::from_file(m.string());
    }
    return DatasetManifest::from_file(data);
}

std::vector<DatasetItem> load_split_verbose(const DatasetManifest& m, const std::string& split) {
    std::vector<std::string> warnings;
    auto items = load_split(m, split, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return items;
}

std::vector<std::string> expand_pngs(const std::vector<std::string>& args) {
    std::vector<std::string> files;
    for (const auto& a : args) {
        if (fs::is_directory(a)) {
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(a))
                if (e.is_regular_file() && e.path().extension() == ".png")
                    found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::exists(a)) {
            files.push_back(a);
        } else {
            throw DataError("analyze-fd input not found: " + a);
        }
    }
    return files;
}

// exit 2: config, 3: data, 4: numeric/unexpected
struct RunContext {
    std::string command;
    std::string out_dir;
};

int run_guarded(RunContext& ctx, const std::function<void()>& body) {
    const auto record = [&](const std::string& kind, const std::string& msg, int code) {
        std::cerr << "error (" << kind << "): " << msg << '\n';
        nlohmann::json j{{"error", kind}, {"message", msg}, {"exit_code", code},
                         {"command", ctx.command}};
        if (!ctx.out_dir.empty()) {
            std::error_code ec;
            fs::create_directories(ctx.out_dir, ec);
            if (!ec) {
                std::ofstream f(fs::path(ctx.out_dir) / "error.json");
                if (f) f << j.dump(2) << '\n';
            }
        }
        return code;
    };
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        return record("config", e.what(), 2);
    } catch (const ShapeError& e) {
        return record("data", e.what(), 3);
    } catch (const DataError& e) {
        return record("data", e.what(), 3);
    } catch (const NumericError& e) {
        return record("numeric", e.what(), 4);
    } catch (const std::exception& e) {
        return record("internal", e.what(), 4);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"octaseg: two-stage vessel segmentation for OCTA images"};
    app.require_subcommand(1);
    RunContext ctx;
    std::function<void()> action;

    // train-coarse
    auto* tcoarse = app.add_subcommand("train-coarse", "train the coarse segmentation network");
    struct {
        CommonArgs common;
        std::string data;
        std::optional<uint64_t> seed;
        bool tiny = false;
    } tca;
    tcoarse->add_option("--data", tca.data, "dataset manifest file or directory")->required();
    tcoarse->add_option("--seed", tca.seed, "override train.seed");
    tcoarse->add_flag("--tiny", tca.tiny, "tiny preset (coarse.base_width = 8)");
    add_common(tcoarse, tca.common);
    tcoarse->callback([&] {
        ctx = {"train-coarse", tca.common.out};
        action = [&] {
            KvStore kv = tca.common.kv();
            if (tca.tiny) kv.set("coarse.base_width=8");
            TrainConfig tc = train_from_kv(kv);
            if (tca.seed) tc.seed = *tca.seed;
            CoarseConfig cc = coarse_from_kv(kv);
            kv.finish();
            tc.validate();
            cc.validate();
            prepare_out_dir(tca.common.out, tca.common.resume);
            const auto manifest = manifest_from_arg(tca.data);
            const auto items = load_split_verbose(manifest, "train");
            const TrainResult res = train_coarse(tc, cc, items);
            const fs::path out(tca.common.out);
            save_checkpoint((out / "coarse.ckpt").string(), res.ckpt);
            write_text_file((out / "train_log.csv").string(), train_log_csv(res.log));
            freeze_config(tca.common.out, "train-coarse",
                          encode_model_config(cc, nullptr) + encode_train_config(tc) +
                              "data = " + tca.data + "\n");
            std::cout << "coarse checkpoint: " << (out / "coarse.ckpt").string() << '\n';
        };
    });

    // train-fine
    auto* tfine = app.add_subcommand("train-fine", "train the refinement stage on a coarse checkpoint");
    struct {
        CommonArgs common;
        std::string data, coarse;
        std::optional<uint64_t> seed;
        bool joint = false;
    } tfa;
    tfine->add_option("--data", tfa.data, "dataset manifest file or directory")->required();
    tfine->add_option("--coarse", tfa.coarse, "coarse-stage checkpoint")->required();
    tfine->add_option("--seed", tfa.seed, "override train.seed");
    tfine->add_flag("--joint", tfa.joint, "fine-tune the coarse net jointly instead of freezing it");
    add_common(tfine, tfa.common);
    tfine->callback([&] {
        ctx = {"train-fine", tfa.common.out};
        action = [&] {
            KvStore kv = tfa.common.kv();
            TrainConfig tc = train_from_kv(kv);
            if (tfa.seed) tc.seed = *tfa.seed;
            if (tfa.joint) tc.joint = true;
            SrsConfig sc = srs_from_kv(kv);
            kv.finish();
            tc.validate();
            sc.validate();
            prepare_out_dir(tfa.common.out, tfa.common.resume);
            const auto manifest = manifest_from_arg(tfa.data);
            const auto items = load_split_verbose(manifest, "train");
            const Checkpoint coarse_ckpt = load_checkpoint(tfa.coarse);
            const TrainResult res = train_fine(tc, sc, items, coarse_ckpt, tfa.coarse);
            const fs::path out(tfa.common.out);
            save_checkpoint((out / "fine.ckpt").string(), res.ckpt);
            write_text_file((out / "train_log.csv").string(), train_log_csv(res.log));
            CoarseConfig cc;
            std::optional<SrsConfig> scfg;
            decode_model_config(res.ckpt.config_echo, cc, scfg);
            freeze_config(tfa.common.out, "train-fine",
                          encode_model_config(cc, &sc) + encode_train_config(tc) +
                              "data = " + tfa.data + "\ncoarse = " + tfa.coarse + "\n");
            std::cout << "fine checkpoint: " << (out / "fine.ckpt").string() << '\n';
        };
    });

    // predict
    auto* predict = app.add_subcommand("predict", "write confidence maps for a dataset split");
    struct {
        CommonArgs common;
        std::string data, ckpt, split = "test";
        int timing_runs = 1;
    } pda;
    predict->add_option("--data", pda.data, "dataset manifest file or directory")->required();
    predict->add_option("--ckpt", pda.ckpt, "checkpoint to run")->required();
    predict->add_option("--split", pda.split, "dataset split to predict")
        ->check(CLI::IsMember({"train", "test"}));
    predict->add_option("--timing-runs", pda.timing_runs,
                        "warm forward passes per image for the timing report");
    add_common(predict, pda.common);
    predict->callback([&] {
        ctx = {"predict", pda.common.out};
        action = [&] {
            KvStore kv = pda.common.kv();
            kv.finish();
            prepare_out_dir(pda.common.out, pda.common.resume);
            const auto manifest = manifest_from_arg(pda.data);
            const auto items = load_split_verbose(manifest, pda.split);
            const Predictor p(load_checkpoint(pda.ckpt));
            const PredictSummary sum =
                predict_to_dir(p, items, pda.common.out, pda.timing_runs);
            nlohmann::json j;
            j["warm_runs"] = sum.warm_runs;
            j["mean_seconds_per_image"] = sum.mean_seconds;
            j["note"] = "wall-clock, hardware dependent";
            for (const auto& r : sum.records) j["images"][r.stem] = r.seconds;
            write_text_file((fs::path(pda.common.out) / "predict_summary.json").string(),
                            j.dump(2) + "\n");
            freeze_config(pda.common.out, "predict",
                          "data = " + pda.data + "\nckpt = " + pda.ckpt +
                              "\nsplit = " + pda.split +
                              "\ntiming_runs = " + std::to_string(pda.timing_runs) + "\n");
            std::cout << "predicted " << sum.records.size() << " images, mean "
                      << sum.mean_seconds << " s/image\n";
        };
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    struct {
        CommonArgs common;
        std::string data, ckpt, pred, compare, split = "test";
        double threshold = 0.5;
        bool tolerance = false, exact = false, micro = false, auc_raw = false;
    } eva;
    evaluate->add_option("--data", eva.data, "dataset manifest file or directory")->required();
    evaluate->add_option("--ckpt", eva.ckpt, "checkpoint to evaluate in-process");
    evaluate->add_option("--pred", eva.pred, "directory of .f32 confidence sidecars");
    evaluate->add_option("--compare", eva.compare,
                         "second prediction directory for paired t-tests");
    evaluate->add_option("--split", eva.split, "dataset split")
        ->check(CLI::IsMember({"train", "test"}));
    evaluate->add_option("--threshold", eva.threshold, "binarization threshold");
    evaluate->add_flag("--tolerance", eva.tolerance, "force the centerline tolerance protocol");
    evaluate->add_flag("--exact", eva.exact, "force exact pixel-level scoring");
    evaluate->add_flag("--micro", eva.micro, "add a pooled-counts aggregate row");
    evaluate->add_flag("--auc-raw-centerline", eva.auc_raw,
                       "tolerance mode: sweep AUC against the raw centerline");
    add_common(evaluate, eva.common);
    evaluate->callback([&] {
        ctx = {"evaluate", eva.common.out};
        action = [&] {
            if (eva.ckpt.empty() == eva.pred.empty())
                throw ConfigError("evaluate: pass exactly one of --ckpt or --pred");
            if (eva.tolerance && eva.exact)
                throw ConfigError("evaluate: --tolerance and --exact conflict");
            KvStore kv = eva.common.kv();
            EvalOptions opt;
            opt.threshold = eva.threshold;
            opt.tolerance_radius = kv.get_int("eval.tolerance_radius", 3);
            opt.micro = eva.micro;
            opt.auc_on_raw_centerline = eva.auc_raw;
            kv.finish();
            prepare_out_dir(eva.common.out, eva.common.resume);
            const auto manifest = manifest_from_arg(eva.data);
            // DVC and centerline-only data default to the tolerance protocol
            const bool tol_default = manifest.subset == SubsetTag::rose2 ||
                                     manifest.subset == SubsetTag::rose1_dvc ||
                                     manifest.mode == AnnotationMode::centerline_only;
            opt.tolerance = eva.tolerance || (tol_default && !eva.exact);
            const auto items = load_split_verbose(manifest, eva.split);

            auto collect = [&](const std::string& src)
                -> std::vector<std::pair<std::string, ConfidenceMap>> {
                std::vector<std::pair<std::string, ConfidenceMap>> preds;
                if (src.empty()) {
                    const Predictor p(load_checkpoint(eva.ckpt));
                    for (const auto& it : items)
                        preds.emplace_back(it.stem, p.run(it.image).final_map);
                } else {
                    for (const auto& it : items) {
                        const fs::path f = fs::path(src) / (it.stem + ".f32");
                        if (!fs::exists(f))
                            throw DataError("evaluate: missing prediction sidecar " + f.string());
                        preds.emplace_back(it.stem, load_confidence_sidecar(f.string()));
                    }
                }
                return preds;
            };

            const EvalResult res = evaluate_maps(collect(eva.pred), items, opt);
            const fs::path out(eva.common.out);
            write_text_file((out / "metrics.csv").string(), res.csv());
            write_text_file((out / "summary.json").string(), res.json());
            if (!res.pooled_roc.points.empty()) {
                write_text_file((out / "roc.csv").string(), roc_csv(res.pooled_roc));
                write_text_file((out / "roc.svg").string(),
                                roc_svg({{"pooled", res.pooled_roc}}));
            }
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
            if (!eva.compare.empty()) {
                const EvalResult other = evaluate_maps(collect(eva.compare), items, opt);
                write_text_file((out / "compare_metrics.csv").string(), other.csv());
                write_text_file((out / "compare_ttest.csv").string(), compare_csv(res, other));
            }
            freeze_config(eva.common.out, "evaluate",
                          "data = " + eva.data + "\nsource = " +
                              (eva.pred.empty() ? eva.ckpt : eva.pred) +
                              "\nsplit = " + eva.split +
                              "\nthreshold = " + std::to_string(opt.threshold) +
                              "\ntolerance = " + (opt.tolerance ? "1" : "0") +
                              "\ntolerance_radius = " + std::to_string(opt.tolerance_radius) +
                              "\n");
            std::cout << res.csv();
        };
    });

    // analyze-fd
    auto* afd = app.add_subcommand("analyze-fd", "box-counting fractal dimension of segmentations");
    struct {
        CommonArgs common;
        std::vector<std::string> group_a, group_b;
        double threshold = 0.5;
        bool rank_sum = false, anchor_mean = false;
    } fda;
    afd->add_option("--group-a", fda.group_a, "segmentation PNGs or directories")->required();
    afd->add_option("--group-b", fda.group_b, "optional second group for the significance test");
    afd->add_option("--threshold", fda.threshold, "binarization threshold");
    afd->add_flag("--rank-sum", fda.rank_sum, "rank-sum test instead of the t-test");
    afd->add_flag("--anchor-mean", fda.anchor_mean, "average box counts over four grid anchors");
    add_common(afd, fda.common);
    afd->callback([&] {
        ctx = {"analyze-fd", fda.common.out};
        action = [&] {
            KvStore kv = fda.common.kv();
            kv.finish();
            prepare_out_dir(fda.common.out, fda.common.resume);
            const FdGroupResult res =
                analyze_fd(expand_pngs(fda.group_a), expand_pngs(fda.group_b), fda.threshold,
                           fda.rank_sum, fda.anchor_mean);
            const fs::path out(fda.common.out);
            write_text_file((out / "fd.csv").string(), res.fd_csv());
            nlohmann::json j;
            j["group_a_count"] = res.group_a.size();
            j["group_b_count"] = res.group_b.size();
            if (res.has_b) {
                write_text_file((out / "groups.csv").string(),
                                group_csv(res.comparison, "group_a", "group_b"));
                write_text_file((out / "boxplot.svg").string(),
                                group_box_svg(res.comparison, "group_a", "group_b"));
                j["test"] = {{"t", res.comparison.test.t},
                             {"p", res.comparison.test.p},
                             {"df", res.comparison.test.df},
                             {"tie", res.comparison.test.tie},
                             {"kind", fda.rank_sum ? "rank-sum" : "t-test"}};
                j["mean_a"] = res.comparison.mean_a;
                j["mean_b"] = res.comparison.mean_b;
            }
            write_text_file((out / "summary.json").string(), j.dump(2) + "\n");
            freeze_config(fda.common.out, "analyze-fd",
                          "threshold = " + std::to_string(fda.threshold) +
                              "\nrank_sum = " + (fda.rank_sum ? "1" : "0") +
                              "\nanchor_mean = " + (fda.anchor_mean ? "1" : "0") + "\n");
            std::cout << res.fd_csv();
        };
    });

    // synth
    auto* synth = app.add_subcommand("synth", "materialize a synthetic benchmark dataset");
    struct {
        CommonArgs common;
        int train = 20, test = 5;
        std::optional<uint64_t> seed;
    } sya;
    synth->add_option("--train", sya.train, "training images");
    synth->add_option("--test", sya.test, "test images");
    synth->add_option("--seed", sya.seed, "override synth.seed");
    add_common(synth, sya.common);
    synth->callback([&] {
        ctx = {"synth", sya.common.out};
        action = [&] {
            KvStore kv = sya.common.kv();
            SynthParams base = benchmark_synth_params();
            base.height = kv.get_int("synth.height", base.height);
            base.width = kv.get_int("synth.width", base.width);
            base.tree_count = kv.get_int("synth.tree_count", base.tree_count);
            base.branch_depth = kv.get_int("synth.branch_depth", base.branch_depth);
            base.width_min = kv.get_double("synth.width_min", base.width_min);
            base.width_max = kv.get_double("synth.width_max", base.width_max);
            base.capillary_density = kv.get_double("synth.capillary_density",
                                                   base.capillary_density);
            base.noise = kv.get_double("synth.noise", base.noise);
            base.seed = kv.get_u64("synth.seed", base.seed);
            if (sya.seed) base.seed = *sya.seed;
            kv.finish();
            base.validate();
            if (sya.train < 1 || sya.test < 0)
                throw ConfigError("synth: need at least one training image");
            prepare_out_dir(sya.common.out, sya.common.resume);
            write_synth_dataset(base, sya.train, sya.test, sya.common.out);
            std::ostringstream frozen;
            frozen << "synth.height = " << base.height << "\nsynth.width = " << base.width
                   << "\nsynth.tree_count = " << base.tree_count
                   << "\nsynth.branch_depth = " << base.branch_depth
                   << "\nsynth.width_min = " << base.width_min
                   << "\nsynth.width_max = " << base.width_max
                   << "\nsynth.capillary_density = " << base.capillary_density
                   << "\nsynth.noise = " << base.noise << "\nsynth.seed = " << base.seed
                   << "\ntrain = " << sya.train << "\ntest = " << sya.test << "\n";
            freeze_config(sya.common.out, "synth", frozen.str());
            std::cout << "wrote " << sya.train << " train / " << sya.test << " test images to "
                      << sya.common.out << '\n';
        };
    });

    // ablate
    auto* ablate = app.add_subcommand("ablate", "backbone / joint / two-stage comparison grid");
    struct {
        CommonArgs common;
        std::string data;
        std::optional<uint64_t> seed;
        bool tiny = false;
    } aba;
    ablate->add_option("--data", aba.data, "dataset manifest file or directory")->required();
    ablate->add_option("--seed", aba.seed, "override train.seed");
    ablate->add_flag("--tiny", aba.tiny, "tiny preset (coarse.base_width = 8)");
    add_common(ablate, aba.common);
    ablate->callback([&] {
        ctx = {"ablate", aba.common.out};
        action = [&] {
            KvStore kv = aba.common.kv();
            if (aba.tiny) kv.set("coarse.base_width=8");
            TrainConfig tc = train_from_kv(kv);
            if (aba.seed) tc.seed = *aba.seed;
            CoarseConfig cc = coarse_from_kv(kv);
            SrsConfig sc = srs_from_kv(kv);
            kv.finish();
            tc.validate();
            cc.validate();
            sc.validate();
            prepare_out_dir(aba.common.out, aba.common.resume);
            const auto manifest = manifest_from_arg(aba.data);
            const auto train = load_split_verbose(manifest, "train");
            const auto test = load_split_verbose(manifest, "test");
            const AblateResult res = run_ablation(tc, cc, sc, train, test, aba.common.out);
            freeze_config(aba.common.out, "ablate",
                          encode_model_config(cc, &sc) + encode_train_config(tc) +
                              "data = " + aba.data + "\n");
            std::cout << res.csv();
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return run_guarded(ctx, action);
}
