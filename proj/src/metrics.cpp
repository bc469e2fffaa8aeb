#include "octa/metrics.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace octa {

namespace {

double ratio(int64_t num, int64_t den) {
    return den == 0 ? std::nan("") : double(num) / double(den);
}

double student_two_sided_p(double t, double df) {
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

MetricsRow basic_metrics(const ConfusionCounts& c) {
    const int64_t total = c.total();
    if (total <= 0) throw DataError("basic_metrics: empty confusion counts");
    MetricsRow r;
    r.counts = c;
    r.sen = ratio(c.tp, c.tp + c.fn);
    r.spe = ratio(c.tn, c.tn + c.fp);
    r.acc = double(c.tp + c.tn) / double(total);
    r.fdr = ratio(c.fp, c.fp + c.tp);
    r.dice = ratio(2 * c.tp, c.fp + c.fn + 2 * c.tp);
    r.gmean = (std::isnan(r.sen) || std::isnan(r.spe)) ? std::nan("") : std::sqrt(r.sen * r.spe);
    const double tot2 = double(total) * double(total);
    const double pe =
        (double(c.tp + c.fn) * double(c.tp + c.fp) + double(c.tn + c.fp) * double(c.tn + c.fn)) /
        tot2;
    r.kappa = pe >= 1.0 ? std::nan("") : (r.acc - pe) / (1.0 - pe);
    return r;
}

RocCurve roc_auc(const ConfidenceMap& map, const BinaryMask& gt, const BinaryMask* region) {
    if (map.h != gt.h || map.w != gt.w) throw ShapeError("roc_auc: map/gt shapes differ");
    if (region && (region->h != gt.h || region->w != gt.w))
        throw ShapeError("roc_auc: region shape differs");

    std::vector<std::pair<float, uint8_t>> s;  // (score, label)
    s.reserve(map.v.size());
    for (size_t i = 0; i < map.v.size(); ++i) {
        if (region && !region->v[i]) continue;
        s.emplace_back(map.v[i], gt.v[i]);
    }
    int64_t P = 0, N = 0;
    for (const auto& [sc, lb] : s) (lb ? P : N)++;
    if (P == 0 || N == 0)
        throw DataError("roc_auc: ground truth contains a single class in the evaluated region");

    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    RocCurve roc;
    roc.points.emplace_back(0.0, 0.0);
    double auc = 0.0;
    int64_t tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    size_t i = 0;
    while (i < s.size()) {
        // consume one tie group: the sweep only has points at distinct values
        const float v = s[i].first;
        while (i < s.size() && s[i].first == v) {
            if (s[i].second) ++tp; else ++fp;
            ++i;
        }
        const double fpr = double(fp) / double(N);
        const double tpr = double(tp) / double(P);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        roc.points.emplace_back(fpr, tpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    roc.auc = auc;
    return roc;
}

ConfusionCounts tolerance_confusion(const BinaryMask& pred, const BinaryMask& gt_centerline,
                                    int radius, bool* warned) {
    if (pred.h != gt_centerline.h || pred.w != gt_centerline.w)
        throw ShapeError("tolerance_confusion: shapes differ");
    if (radius < 0) throw ConfigError("tolerance radius must be nonnegative");
    if (warned) *warned = false;
    if (!is_thin(gt_centerline) && warned) *warned = true;

    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);

    const int H = pred.h, W = pred.w;
    auto dilate = [&](const BinaryMask& m) {
        BinaryMask out;
        out.h = H;
        out.w = W;
        out.v.assign(size_t(H) * W, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!m.at(y, x)) continue;
                for (const auto& [dy, dx] : disk) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny >= 0 && ny < H && nx >= 0 && nx < W) out.at(ny, nx) = 1;
                }
            }
        return out;
    };

    const BinaryMask tol = dilate(gt_centerline);
    const BinaryMask covered = dilate(pred);

    ConfusionCounts c;
    for (int64_t i = 0; i < int64_t(H) * W; ++i) {
        const bool p = pred.v[size_t(i)] != 0;
        const bool in_tol = tol.v[size_t(i)] != 0;
        if (p) {
            if (in_tol) ++c.tp; else ++c.fp;
        } else if (!in_tol) {
            ++c.tn;
        }
        if (gt_centerline.v[size_t(i)] && !covered.v[size_t(i)]) ++c.fn;
    }
    return c;
}

namespace {

TTestResult t_from_mean_sd(double mean, double sd, int64_t n, int64_t df) {
    TTestResult r;
    r.df = df;
    if (sd == 0.0) {
        if (mean == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
            r.tie = true;
        } else {
            r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(double(n)));
    r.p = student_two_sided_p(r.t, double(df));
    return r;
}

}  // namespace

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("paired_ttest: unequal lengths");
    const int64_t n = int64_t(a.size());
    if (n < 2) throw DataError("paired_ttest: need at least 2 pairs");
    double mean = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= double(n);
    double ss = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / double(n - 1));
    return t_from_mean_sd(mean, sd, n, n - 1);
}

TTestResult two_sample_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    const int64_t na = int64_t(a.size()), nb = int64_t(b.size());
    if (na < 2 || nb < 2) throw DataError("two_sample_ttest: need at least 2 per group");
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(na);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(nb);
    double ssa = 0.0, ssb = 0.0;
    for (double x : a) ssa += (x - ma) * (x - ma);
    for (double x : b) ssb += (x - mb) * (x - mb);
    const int64_t df = na + nb - 2;
    const double pooled = (ssa + ssb) / double(df);
    TTestResult r;
    r.df = df;
    if (pooled == 0.0) {
        if (ma == mb) {
            r.tie = true;
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = ma > mb ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = (ma - mb) / std::sqrt(pooled * (1.0 / double(na) + 1.0 / double(nb)));
    r.p = student_two_sided_p(r.t, double(df));
    return r;
}

TTestResult rank_sum_test(const std::vector<double>& a, const std::vector<double>& b) {
    const int64_t na = int64_t(a.size()), nb = int64_t(b.size());
    if (na < 2 || nb < 2) throw DataError("rank_sum_test: need at least 2 per group");
    std::vector<std::pair<double, int>> all;
    all.reserve(size_t(na + nb));
    for (double x : a) all.emplace_back(x, 0);
    for (double x : b) all.emplace_back(x, 1);
    std::sort(all.begin(), all.end());
    const int64_t n = na + nb;
    std::vector<double> rank(size_t(n), 0.0);
    double tie_term = 0.0;
    for (size_t i = 0; i < all.size();) {
        size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double r = (double(i) + double(j - 1)) / 2.0 + 1.0;  // average rank, 1-based
        for (size_t k = i; k < j; ++k) rank[k] = r;
        const double tlen = double(j - i);
        tie_term += tlen * (tlen * tlen - 1.0);
        i = j;
    }
    double ra = 0.0;
    for (size_t i = 0; i < all.size(); ++i)
        if (all[i].second == 0) ra += rank[i];
    const double u = ra - double(na) * double(na + 1) / 2.0;
    const double mu = double(na) * double(nb) / 2.0;
    const double var = double(na) * double(nb) / 12.0 *
                       (double(n + 1) - tie_term / (double(n) * double(n - 1)));
    TTestResult r;
    r.t = u;
    r.df = n - 2;
    if (var == 0.0) {
        r.tie = true;
        return r;
    }
    const double z = (u - mu) / std::sqrt(var);
    boost::math::normal nd;
    r.p = 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(z)));
    return r;
}

namespace {

void mean_field(std::vector<MetricsRow>::const_iterator begin,
                std::vector<MetricsRow>::const_iterator end, double MetricsRow::* field,
                MetricsRow& out) {
    double acc = 0.0;
    int64_t n = 0;
    for (auto it = begin; it != end; ++it) {
        const double v = (*it).*field;
        if (!std::isnan(v)) {
            acc += v;
            ++n;
        }
    }
    out.*field = n == 0 ? std::nan("") : acc / double(n);
}

const std::vector<double MetricsRow::*>& metric_fields() {
    static const std::vector<double MetricsRow::*> f = {
        &MetricsRow::auc,   &MetricsRow::acc, &MetricsRow::sen,   &MetricsRow::spe,
        &MetricsRow::kappa, &MetricsRow::fdr, &MetricsRow::gmean, &MetricsRow::dice};
    return f;
}

}  // namespace

MetricsRow aggregate_macro(const std::vector<MetricsRow>& rows) {
    MetricsRow out;
    out.name = "macro-mean";
    for (auto field : metric_fields()) mean_field(rows.begin(), rows.end(), field, out);
    for (const auto& r : rows) out.counts += r.counts;
    return out;
}

MetricsRow aggregate_micro(const std::vector<MetricsRow>& rows) {
    ConfusionCounts pooled;
    for (const auto& r : rows) pooled += r.counts;
    MetricsRow out = basic_metrics(pooled);
    out.name = "micro-pooled";
    mean_field(rows.begin(), rows.end(), &MetricsRow::auc, out);
    return out;
}

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "n/a";
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "name,auc,acc,sen,spe,kappa,fdr,gmean,dice,tp,fp,tn,fn\n";
    for (const auto& r : rows) {
        os << r.name << ',' << fmt(r.auc) << ',' << fmt(r.acc) << ',' << fmt(r.sen) << ','
           << fmt(r.spe) << ',' << fmt(r.kappa) << ',' << fmt(r.fdr) << ',' << fmt(r.gmean) << ','
           << fmt(r.dice) << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn << ','
           << r.counts.fn << '\n';
    }
    return os.str();
}

std::string roc_csv(const RocCurve& roc) {
    std::ostringstream os;
    os << "fpr,tpr\n";
    os.precision(9);
    for (const auto& [fpr, tpr] : roc.points) os << fpr << ',' << tpr << '\n';
    return os.str();
}

std::string roc_svg(const std::vector<std::pair<std::string, RocCurve>>& curves) {
    const int W = 480, H = 480, M = 48;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    auto px = [&](double fpr) { return M + fpr * (W - 2 * M); };
    auto py = [&](double tpr) { return H - M - tpr * (H - 2 * M); };
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
       << py(0) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(0) << "\" y2=\""
       << py(1) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
       << py(1) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
       << "\" text-anchor=\"middle\" font-size=\"13\">false positive rate</text>\n";
    os << "<text x=\"14\" y=\"" << H / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 " << H / 2
       << ")\">true positive rate</text>\n";
    static const char* colors[] = {"#c02020", "#2040c0", "#208040", "#806020", "#602080"};
    int ci = 0;
    int legend_y = M + 6;
    for (const auto& [label, roc] : curves) {
        const char* color = colors[ci % 5];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [fpr, tpr] : roc.points) os << px(fpr) << ',' << py(tpr) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << W - M - 150 << "\" y=\"" << legend_y << "\" font-size=\"12\" fill=\""
           << color << "\">" << label << " (auc " << fmt(roc.auc).substr(0, 6) << ")</text>\n";
        legend_y += 16;
        ++ci;
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace octa
