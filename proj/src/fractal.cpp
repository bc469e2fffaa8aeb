#include "octa/fractal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace octa {

int64_t box_count(const BinaryMask& mask, int size, int oy, int ox) {
    if (size < 1) throw ConfigError("box_count: size must be positive");
    if (oy < 0 || ox < 0) throw ConfigError("box_count: offsets must be nonnegative");
    const int gh = (mask.h + oy + size - 1) / size;
    const int gw = (mask.w + ox + size - 1) / size;
    std::vector<uint8_t> hit(size_t(gh) * gw, 0);
    for (int y = 0; y < mask.h; ++y) {
        const int by = (y + oy) / size;
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) hit[size_t(by) * gw + (x + ox) / size] = 1;
    }
    int64_t n = 0;
    for (uint8_t h : hit) n += h;
    return n;
}

std::vector<int> default_box_sizes(int h, int w) {
    const int cap = std::min(h, w) / 4;
    std::vector<int> sizes;
    for (int s = 2; s <= cap; s *= 2) sizes.push_back(s);
    return sizes;
}

FdResult box_count_fd(const BinaryMask& mask, const std::vector<int>& sizes_in,
                      bool average_anchors) {
    bool any = false;
    for (uint8_t v : mask.v)
        if (v) { any = true; break; }
    if (!any) throw DataError("box_count_fd: mask has no foreground");

    std::vector<int> sizes = sizes_in.empty() ? default_box_sizes(mask.h, mask.w) : sizes_in;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    if (sizes.size() < 3) throw ConfigError("box_count_fd: need at least 3 box sizes");
    if (sizes.front() < 1) throw ConfigError("box_count_fd: sizes must be positive");
    if (sizes.back() > std::min(mask.h, mask.w))
        throw ConfigError("box_count_fd: box size exceeds the mask extent");

    FdResult r;
    r.sizes = sizes;
    std::vector<double> xs, ys;
    for (int s : sizes) {
        const int64_t n = box_count(mask, s);
        r.counts.push_back(n);
        double fit_n = double(n);
        if (average_anchors) {
            const int h = s / 2;
            fit_n = (double(n) + double(box_count(mask, s, h, 0)) +
                     double(box_count(mask, s, 0, h)) + double(box_count(mask, s, h, h))) /
                    4.0;
        }
        xs.push_back(std::log(1.0 / double(s)));
        ys.push_back(std::log(fit_n));
    }

    const size_t n = xs.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) { mx += xs[i]; my += ys[i]; }
    mx /= double(n);
    my /= double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    r.fd = sxy / sxx;
    r.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return r;
}

GroupComparison compare_groups(const std::vector<double>& a, const std::vector<double>& b,
                               bool use_rank_sum) {
    GroupComparison g;
    g.group_a = a;
    g.group_b = b;
    g.rank_sum = use_rank_sum;
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= double(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    };
    if (a.empty() || b.empty()) throw DataError("compare_groups: empty group");
    stats(a, g.mean_a, g.sd_a);
    stats(b, g.mean_b, g.sd_b);
    g.test = use_rank_sum ? rank_sum_test(a, b) : two_sample_ttest(a, b);
    return g;
}

namespace {

struct FiveNum {
    double lo, q1, med, q3, hi;
};

FiveNum five_num(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double idx = p * double(v.size() - 1);
        const size_t lo = size_t(std::floor(idx));
        const size_t hi = std::min(lo + 1, v.size() - 1);
        const double frac = idx - double(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

}  // namespace

std::string group_csv(const GroupComparison& g, const std::string& name_a,
                      const std::string& name_b) {
    std::ostringstream os;
    os.precision(9);
    os << "group,n,mean,sd,min,q1,median,q3,max\n";
    const FiveNum fa = five_num(g.group_a), fb = five_num(g.group_b);
    os << name_a << ',' << g.group_a.size() << ',' << g.mean_a << ',' << g.sd_a << ',' << fa.lo
       << ',' << fa.q1 << ',' << fa.med << ',' << fa.q3 << ',' << fa.hi << '\n';
    os << name_b << ',' << g.group_b.size() << ',' << g.mean_b << ',' << g.sd_b << ',' << fb.lo
       << ',' << fb.q1 << ',' << fb.med << ',' << fb.q3 << ',' << fb.hi << '\n';
    os << "test," << (g.rank_sum ? "rank-sum" : "t-test") << ",stat," << g.test.t << ",p,"
       << g.test.p << ",df," << g.test.df << ",tie," << (g.test.tie ? 1 : 0) << '\n';
    return os.str();
}

std::string group_box_svg(const GroupComparison& g, const std::string& name_a,
                          const std::string& name_b) {
    const int W = 360, H = 420, M = 48;
    double lo = 1e300, hi = -1e300;
    for (double x : g.group_a) { lo = std::min(lo, x); hi = std::max(hi, x); }
    for (double x : g.group_b) { lo = std::min(lo, x); hi = std::max(hi, x); }
    if (hi <= lo) { hi = lo + 1.0; lo -= 1.0; }
    const double pad = (hi - lo) * 0.08;
    lo -= pad;
    hi += pad;
    auto py = [&](double v) { return H - M - (v - lo) / (hi - lo) * (H - 2 * M); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    auto box = [&](const std::vector<double>& v, double cx, const std::string& label,
                   const char* color) {
        const FiveNum f = five_num(v);
        const double bw = 60;
        os << "<line x1=\"" << cx << "\" y1=\"" << py(f.lo) << "\" x2=\"" << cx << "\" y2=\""
           << py(f.hi) << "\" stroke=\"black\"/>\n";
        for (double w : {f.lo, f.hi})
            os << "<line x1=\"" << cx - bw / 4 << "\" y1=\"" << py(w) << "\" x2=\"" << cx + bw / 4
               << "\" y2=\"" << py(w) << "\" stroke=\"black\"/>\n";
        os << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << py(f.q3) << "\" width=\"" << bw
           << "\" height=\"" << py(f.q1) - py(f.q3) << "\" fill=\"" << color
           << "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << py(f.med) << "\" x2=\"" << cx + bw / 2
           << "\" y2=\"" << py(f.med) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << cx << "\" y=\"" << H - 14
           << "\" text-anchor=\"middle\" font-size=\"13\">" << label << "</text>\n";
    };
    box(g.group_a, W * 0.33, name_a, "#4060c0");
    box(g.group_b, W * 0.67, name_b, "#c06040");
    os.precision(4);
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"12\">p = "
       << g.test.p << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace octa
