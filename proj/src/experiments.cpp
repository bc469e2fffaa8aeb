#include "octa/experiments.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace octa {

Predictor::Predictor(const Checkpoint& ck) : stage_(ck.stage) {
    if (stage_ != "coarse" && stage_ != "fine")
        throw DataError("unknown checkpoint stage: '" + stage_ + "'");
    std::optional<SrsConfig> sc;
    decode_model_config(ck.config_echo, coarse_cfg_, sc);
    coarse_cfg_.validate();
    if (stage_ == "fine" && !sc)
        throw DataError("fine checkpoint lacks the refiner configuration");
    srs_cfg_ = sc;
    store_ = std::make_shared<nn::ParamStore<float>>(ck.seed);
    coarse_ = build_coarse(*store_, coarse_cfg_, "coarse");
    if (srs_cfg_) {
        srs_cfg_->validate();
        srs_ = build_srs(*store_, *srs_cfg_, "srs");
    }
    blobs_to_store(ck, *store_, /*allow_partial=*/false);
}

Predictor::Maps Predictor::run(const RasterImage& img) const {
    img.validate();
    const int mult = 1 << (coarse_cfg_.depth - 1);
    const RasterImage padded = reflect_pad_to_multiple(img, mult);
    auto x = ag::constant(image_to_tensor(padded));
    const auto cmaps = coarse_.forward(nullptr, x, false);

    ag::VarPtr<float> final_var;
    if (srs_cfg_) {
        auto s = srs_.forward(nullptr, x, cmaps.pixel,
                              srs_cfg_->refine_centerline_branch ? cmaps.centerline : nullptr,
                              false);
        final_var = s.final_map;
    } else if (coarse_cfg_.dual_branch) {
        final_var = ag::maximum<float>(nullptr, cmaps.pixel, cmaps.centerline);
    } else {
        final_var = cmaps.pixel;
    }

    Maps maps;
    maps.pixel = crop_top_left(map_from_tensor(cmaps.pixel->value), img.h, img.w);
    if (cmaps.centerline)
        maps.centerline = crop_top_left(map_from_tensor(cmaps.centerline->value), img.h, img.w);
    maps.final_map = crop_top_left(map_from_tensor(final_var->value), img.h, img.w);
    return maps;
}

namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

PredictSummary predict_to_dir(const Predictor& p, const std::vector<DatasetItem>& items,
                              const std::string& out_dir, int warm_runs) {
    if (warm_runs < 1) throw ConfigError("predict: warm_runs must be >= 1");
    if (items.empty()) throw DataError("predict: empty dataset");
    fs::create_directories(out_dir);
    PredictSummary sum;
    sum.warm_runs = warm_runs;
    for (const auto& it : items) {
        if (warm_runs > 1) (void)p.run(it.image);  // untimed warmup
        Predictor::Maps maps;
        double total = 0.0;
        for (int r = 0; r < warm_runs; ++r) {
            const double t0 = now_seconds();
            maps = p.run(it.image);
            total += now_seconds() - t0;
        }
        sum.records.push_back({it.stem, total / warm_runs});

        const fs::path base = fs::path(out_dir) / it.stem;
        save_confidence(base.string() + ".png", base.string() + ".f32", maps.final_map);
        if (maps.centerline) {
            save_confidence(base.string() + "_pixel.png", base.string() + "_pixel.f32",
                            maps.pixel);
            save_confidence(base.string() + "_centerline.png",
                            base.string() + "_centerline.f32", *maps.centerline);
            save_mask(base.string() + "_centerline_display.png",
                      widen_centerline(binarize(*maps.centerline, 0.5), 7));
        }
    }
    for (const auto& r : sum.records) sum.mean_seconds += r.seconds;
    sum.mean_seconds /= double(sum.records.size());
    return sum;
}

EvalResult evaluate_maps(const std::vector<std::pair<std::string, ConfidenceMap>>& preds,
                         const std::vector<DatasetItem>& items, const EvalOptions& opt) {
    if (preds.size() != items.size())
        throw DataError("evaluate: prediction count does not match the dataset");
    if (preds.empty()) throw DataError("evaluate: nothing to evaluate");
    if (opt.tolerance_radius < 0) throw ConfigError("evaluate: tolerance radius must be >= 0");

    EvalResult res;
    res.options = opt;
    std::vector<float> pool_scores;
    std::vector<uint8_t> pool_gt;
    for (size_t i = 0; i < items.size(); ++i) {
        const auto& [stem, map] = preds[i];
        const auto& item = items[i];
        if (stem != item.stem)
            throw DataError("evaluate: prediction '" + stem + "' does not match item '" +
                            item.stem + "'");
        if (map.h != item.image.h || map.w != item.image.w)
            throw ShapeError("evaluate: map shape mismatch for " + stem);

        MetricsRow row;
        BinaryMask roc_gt;
        if (opt.tolerance) {
            if (!item.ann.centerline)
                throw DataError("evaluate: tolerance mode needs centerline gt (" + stem + ")");
            bool warned = false;
            const BinaryMask pred = binarize(map, opt.threshold);
            row = basic_metrics(
                tolerance_confusion(pred, *item.ann.centerline, opt.tolerance_radius, &warned));
            if (warned)
                res.warnings.push_back(stem + ": centerline ground truth is not thin");
            roc_gt = opt.auc_on_raw_centerline
                         ? *item.ann.centerline
                         : widen_centerline(*item.ann.centerline, 2 * opt.tolerance_radius + 1);
        } else {
            if (!item.ann.pixel)
                throw DataError("evaluate: exact mode needs pixel gt (" + stem +
                                "); use tolerance mode for centerline-only data");
            row = basic_metrics(confusion(binarize(map, opt.threshold), *item.ann.pixel));
            roc_gt = *item.ann.pixel;
        }
        try {
            row.auc = roc_auc(map, roc_gt).auc;
        } catch (const DataError&) {
            res.warnings.push_back(stem + ": AUC undefined (single-class ground truth)");
        }
        row.name = stem;
        res.rows.push_back(row);
        pool_scores.insert(pool_scores.end(), map.v.begin(), map.v.end());
        pool_gt.insert(pool_gt.end(), roc_gt.v.begin(), roc_gt.v.end());
    }
    res.aggregate = aggregate_macro(res.rows);
    if (opt.micro) res.micro = aggregate_micro(res.rows);

    ConfidenceMap pm;
    pm.h = 1;
    pm.w = int(pool_scores.size());
    pm.v = std::move(pool_scores);
    BinaryMask bg;
    bg.h = 1;
    bg.w = pm.w;
    bg.v = std::move(pool_gt);
    try {
        res.pooled_roc = roc_auc(pm, bg);
    } catch (const DataError&) {
        res.warnings.push_back("pooled ROC undefined (single-class ground truth)");
    }
    return res;
}

std::string EvalResult::csv() const {
    std::vector<MetricsRow> all = rows;
    all.push_back(aggregate);
    if (micro) all.push_back(*micro);
    return metrics_csv(all);
}

namespace {

json metric_json(const MetricsRow& r) {
    auto num = [](double v) { return std::isnan(v) ? json() : json(v); };
    return json{{"auc", num(r.auc)},     {"acc", num(r.acc)},   {"sen", num(r.sen)},
                {"spe", num(r.spe)},     {"kappa", num(r.kappa)}, {"fdr", num(r.fdr)},
                {"gmean", num(r.gmean)}, {"dice", num(r.dice)}};
}

}  // namespace

std::string EvalResult::json() const {
    ::json j;
    j["images"] = rows.size();
    j["threshold"] = options.threshold;
    j["tolerance"] = options.tolerance;
    j["tolerance_radius"] = options.tolerance ? ::json(options.tolerance_radius) : ::json();
    j["aggregate"] = metric_json(aggregate);
    j["micro"] = micro ? metric_json(*micro) : ::json();
    j["pooled_auc"] = pooled_roc.points.empty() ? ::json() : ::json(pooled_roc.auc);
    j["warnings"] = warnings;
    return j.dump(2) + "\n";
}

std::string compare_csv(const EvalResult& a, const EvalResult& b) {
    static const std::pair<const char*, double MetricsRow::*> fields[] = {
        {"auc", &MetricsRow::auc},     {"acc", &MetricsRow::acc},
        {"sen", &MetricsRow::sen},     {"spe", &MetricsRow::spe},
        {"kappa", &MetricsRow::kappa}, {"fdr", &MetricsRow::fdr},
        {"gmean", &MetricsRow::gmean}, {"dice", &MetricsRow::dice}};
    std::ostringstream os;
    os << "metric,n,t,p,df,tie\n";
    os.precision(9);
    for (const auto& [name, field] : fields) {
        std::vector<double> va, vb;
        for (const auto& ra : a.rows)
            for (const auto& rb : b.rows) {
                if (ra.name != rb.name) continue;
                const double x = ra.*field, y = rb.*field;
                if (!std::isnan(x) && !std::isnan(y)) {
                    va.push_back(x);
                    vb.push_back(y);
                }
            }
        if (va.size() < 2) {
            os << name << ',' << va.size() << ",n/a,n/a,n/a,0\n";
            continue;
        }
        const TTestResult t = paired_ttest(va, vb);
        os << name << ',' << va.size() << ',' << t.t << ',' << t.p << ',' << t.df << ','
           << (t.tie ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string AblateResult::csv() const {
    std::ostringstream os;
    os << "config,auc,acc,gmean,kappa,dice,fdr\n";
    os.precision(6);
    os << std::fixed;
    for (const auto& [name, r] : rows)
        os << name << ',' << r.auc << ',' << r.acc << ',' << r.gmean << ',' << r.kappa << ','
           << r.dice << ',' << r.fdr << '\n';
    return os.str();
}

AblateResult run_ablation(const TrainConfig& tc, const CoarseConfig& base_cc, const SrsConfig& sc,
                          const std::vector<DatasetItem>& train,
                          const std::vector<DatasetItem>& test, const std::string& work_dir) {
    if (test.empty()) throw DataError("ablate: empty test split");
    fs::create_directories(work_dir);

    auto eval_ckpt = [&](const Checkpoint& ck, const std::string& name) {
        Predictor p(ck);
        std::vector<std::pair<std::string, ConfidenceMap>> preds;
        preds.reserve(test.size());
        for (const auto& it : test) preds.emplace_back(it.stem, p.run(it.image).final_map);
        EvalOptions eo;
        EvalResult ev = evaluate_maps(preds, test, eo);
        write_text_file((fs::path(work_dir) / (name + "_eval.csv")).string(), ev.csv());
        MetricsRow row = ev.aggregate;
        row.name = name;
        return row;
    };
    auto persist = [&](const std::string& name, const TrainResult& r) {
        save_checkpoint((fs::path(work_dir) / (name + ".ckpt")).string(), r.ckpt);
        write_text_file((fs::path(work_dir) / (name + "_train.csv")).string(),
                        train_log_csv(r.log));
    };

    AblateResult out;

    CoarseConfig cc_single = base_cc;
    cc_single.dual_branch = false;
    const TrainResult backbone = train_coarse(tc, cc_single, train);
    persist("backbone", backbone);
    out.rows.emplace_back("backbone", eval_ckpt(backbone.ckpt, "backbone"));

    CoarseConfig cc_dual = base_cc;
    cc_dual.dual_branch = true;
    const TrainResult joint = train_coarse(tc, cc_dual, train);
    persist("joint", joint);
    out.rows.emplace_back("joint", eval_ckpt(joint.ckpt, "joint"));

    const TrainResult two_stage = train_fine(tc, sc, train, joint.ckpt,
                                             (fs::path(work_dir) / "joint.ckpt").string());
    persist("two_stage", two_stage);
    out.rows.emplace_back("two-stage", eval_ckpt(two_stage.ckpt, "two-stage"));

    write_text_file((fs::path(work_dir) / "ablation.csv").string(), out.csv());
    return out;
}

std::string FdGroupResult::fd_csv() const {
    std::ostringstream os;
    os << "group,file,fd,r2\n";
    os.precision(9);
    for (const auto& [name, fd] : group_a) os << "a," << name << ',' << fd.fd << ',' << fd.r2 << '\n';
    for (const auto& [name, fd] : group_b) os << "b," << name << ',' << fd.fd << ',' << fd.r2 << '\n';
    return os.str();
}

FdGroupResult analyze_fd(const std::vector<std::string>& files_a,
                         const std::vector<std::string>& files_b, double threshold,
                         bool rank_sum, bool anchor_mean) {
    if (files_a.empty()) throw DataError("analyze-fd: no input files");
    auto fd_of = [&](const std::string& path) {
        const RasterImage img = load_image(path);
        ConfidenceMap m;
        m.h = img.h;
        m.w = img.w;
        m.v = img.v;
        return box_count_fd(binarize(m, threshold), {}, anchor_mean);
    };
    FdGroupResult res;
    for (const auto& f : files_a)
        res.group_a.emplace_back(fs::path(f).stem().string(), fd_of(f));
    for (const auto& f : files_b)
        res.group_b.emplace_back(fs::path(f).stem().string(), fd_of(f));
    res.has_b = !res.group_b.empty();
    if (res.has_b) {
        std::vector<double> va, vb;
        for (const auto& [n, fd] : res.group_a) va.push_back(fd.fd);
        for (const auto& [n, fd] : res.group_b) vb.push_back(fd.fd);
        res.comparison = compare_groups(va, vb, rank_sum);
    }
    return res;
}

SynthParams benchmark_synth_params() {
    SynthParams p;
    p.height = 64;
    p.width = 64;
    p.tree_count = 2;
    p.branch_depth = 3;
    p.width_min = 1.0;
    p.width_max = 3.5;
    p.capillary_density = 0.5;
    p.noise = 0.08;
    p.seed = 1;
    return p;
}

DatasetManifest ensure_benchmark_split(const std::string& root) {
    const fs::path manifest = fs::path(root) / "manifest.txt";
    if (fs::exists(manifest)) return DatasetManifest::from_file(manifest.string());
    return write_synth_dataset(benchmark_synth_params(), 20, 5, root);
}

}  // namespace octa
