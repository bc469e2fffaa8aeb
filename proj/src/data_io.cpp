#include "octa/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <sstream>

namespace fs = std::filesystem;

namespace octa {

SubsetTag parse_subset(const std::string& s) {
    if (s == "rose1-svc") return SubsetTag::rose1_svc;
    if (s == "rose1-dvc") return SubsetTag::rose1_dvc;
    if (s == "rose1-svc+dvc") return SubsetTag::rose1_svc_dvc;
    if (s == "rose2") return SubsetTag::rose2;
    if (s == "synthetic") return SubsetTag::synthetic;
    throw ConfigError("manifest: unknown subset '" + s + "'");
}

std::string subset_name(SubsetTag t) {
    switch (t) {
        case SubsetTag::rose1_svc: return "rose1-svc";
        case SubsetTag::rose1_dvc: return "rose1-dvc";
        case SubsetTag::rose1_svc_dvc: return "rose1-svc+dvc";
        case SubsetTag::rose2: return "rose2";
        case SubsetTag::synthetic: return "synthetic";
    }
    return "?";
}

AnnotationMode default_mode(SubsetTag t) {
    // rose2 and the rose1 deep complex ship centerline annotation only
    return t == SubsetTag::rose2 || t == SubsetTag::rose1_dvc ? AnnotationMode::centerline_only
                                                              : AnnotationMode::dual;
}

DatasetManifest DatasetManifest::parse(const std::string& text, const std::string& base_dir) {
    DatasetManifest m;
    bool have_subset = false, have_mode = false;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("manifest line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key == "root") m.root = val;
        else if (key == "subset") { m.subset = parse_subset(val); have_subset = true; }
        else if (key == "mode") {
            if (val == "dual") m.mode = AnnotationMode::dual;
            else if (val == "centerline-only") m.mode = AnnotationMode::centerline_only;
            else throw ConfigError("manifest: unknown mode '" + val + "'");
            have_mode = true;
        } else if (key == "dir.img") m.dir_img = val;
        else if (key == "dir.gt_pixel") m.dir_pixel = val;
        else if (key == "dir.gt_centerline") m.dir_centerline = val;
        else if (key == "split.train") m.dir_train = val;
        else if (key == "split.test") m.dir_test = val;
        else throw ConfigError("manifest: unknown key '" + key + "'");
    }
    if (!have_subset) throw ConfigError("manifest: missing subset");
    if (!have_mode) m.mode = default_mode(m.subset);
    if (m.root.empty()) m.root = ".";
    if (!base_dir.empty() && fs::path(m.root).is_relative())
        m.root = (fs::path(base_dir) / m.root).lexically_normal().string();
    return m;
}

DatasetManifest DatasetManifest::from_file(const std::string& path) {
    if (!file_exists(path)) throw DataError("manifest file not found: " + path);
    return parse(read_text_file(path), fs::path(path).parent_path().string());
}

std::string DatasetManifest::to_text() const {
    std::ostringstream os;
    os << "root = " << root << '\n';
    os << "subset = " << subset_name(subset) << '\n';
    os << "mode = " << (mode == AnnotationMode::dual ? "dual" : "centerline-only") << '\n';
    os << "dir.img = " << dir_img << '\n';
    os << "dir.gt_pixel = " << dir_pixel << '\n';
    os << "dir.gt_centerline = " << dir_centerline << '\n';
    os << "split.train = " << dir_train << '\n';
    os << "split.test = " << dir_test << '\n';
    return os.str();
}

std::vector<DatasetItem> load_split(const DatasetManifest& m, const std::string& split,
                                    std::vector<std::string>* warnings) {
    if (split != "train" && split != "test")
        throw ConfigError("load_split: split must be 'train' or 'test'");
    const fs::path base = fs::path(m.root) / (split == "train" ? m.dir_train : m.dir_test);
    const fs::path img_dir = base / m.dir_img;
    if (!fs::is_directory(img_dir))
        throw DataError("dataset: missing directory " + img_dir.string());

    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(img_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw DataError("dataset: no .png images in " + img_dir.string());

    std::vector<DatasetItem> items;
    std::vector<std::string> problems;
    for (const auto& stem : stems) {
        try {
            DatasetItem it;
            it.stem = stem;
            it.image = load_image((img_dir / (stem + ".png")).string());
            auto need = [&](const fs::path& dir) {
                const fs::path p = dir / (stem + ".png");
                if (!fs::exists(p)) throw DataError("missing annotation " + p.string());
                BinaryMask mk = load_mask(p.string());
                if (mk.h != it.image.h || mk.w != it.image.w)
                    throw ShapeError("annotation shape mismatch: " + p.string());
                return mk;
            };
            if (m.mode == AnnotationMode::dual) it.ann.pixel = need(base / m.dir_pixel);
            it.ann.centerline = need(base / m.dir_centerline);
            it.ann.validate();
            items.push_back(std::move(it));
        } catch (const DataError& e) {
            problems.push_back(stem + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::ostringstream os;
        os << "dataset load failed for " << problems.size() << " item(s):";
        for (const auto& p : problems) os << "\n  " << p;
        throw DataError(os.str());
    }

    int expected = -1;
    switch (m.subset) {
        case SubsetTag::rose1_svc:
        case SubsetTag::rose1_dvc:
        case SubsetTag::rose1_svc_dvc: expected = split == "train" ? 90 : 27; break;
        case SubsetTag::rose2: expected = split == "train" ? 90 : 22; break;
        case SubsetTag::synthetic: break;
    }
    if (expected > 0 && int(items.size()) != expected && warnings)
        warnings->push_back("split '" + split + "' has " + std::to_string(items.size()) +
                            " images; the canonical " + subset_name(m.subset) + " split has " +
                            std::to_string(expected));
    return items;
}

// ---- thinning ----

namespace {

// deletions for one subiteration, simultaneous within it
int thin_subiteration(BinaryMask& img, int it) {
    const int H = img.h, W = img.w;
    auto at = [&](int y, int x) -> int {
        return (y < 0 || y >= H || x < 0 || x >= W) ? 0 : img.at(y, x);
    };
    std::vector<std::pair<int, int>> dele;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!img.at(y, x)) continue;
            const int P2 = at(y - 1, x), P3 = at(y - 1, x + 1), P4 = at(y, x + 1);
            const int P5 = at(y + 1, x + 1), P6 = at(y + 1, x), P7 = at(y + 1, x - 1);
            const int P8 = at(y, x - 1), P9 = at(y - 1, x - 1);
            const int C = (!P2 && (P3 || P4)) + (!P4 && (P5 || P6)) + (!P6 && (P7 || P8)) +
                          (!P8 && (P9 || P2));
            const int N1 = (P9 || P2) + (P3 || P4) + (P5 || P6) + (P7 || P8);
            const int N2 = (P2 || P3) + (P4 || P5) + (P6 || P7) + (P8 || P9);
            const int N = std::min(N1, N2);
            const bool m = it == 0 ? ((P6 || P7 || !P9) && P8) : ((P2 || P3 || !P5) && P4);
            if (C == 1 && 2 <= N && N <= 3 && !m) dele.emplace_back(y, x);
        }
    for (const auto& [y, x] : dele) img.at(y, x) = 0;
    return int(dele.size());
}

// Yokoi connectivity number for 8-connected foreground; == 1 means the pixel
// can be deleted without changing topology.
int yokoi8(const BinaryMask& img, int y, int x) {
    auto at = [&](int dy, int dx) -> int {
        const int ny = y + dy, nx = x + dx;
        return (ny < 0 || ny >= img.h || nx < 0 || nx >= img.w) ? 0 : img.at(ny, nx);
    };
    // x1..x8 counterclockwise from east
    const int n[9] = {at(0, 1),  at(-1, 1), at(-1, 0), at(-1, -1),
                      at(0, -1), at(1, -1), at(1, 0),  at(1, 1),  at(0, 1)};
    int c = 0;
    for (int k = 0; k < 8; k += 2) {
        const int a = 1 - n[k], b = 1 - n[k + 1], d = 1 - n[(k + 2) % 8 == 0 ? 8 : k + 2];
        c += a - a * b * d;
    }
    return c;
}

int fg_neighbors(const BinaryMask& img, int y, int x) {
    int n = 0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            const int ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < img.h && nx >= 0 && nx < img.w && img.at(ny, nx)) ++n;
        }
    return n;
}

// removes residual 2x2 blocks by sequential simple-point deletion; a block
// whose four corners each anchor a distinct arm (crossing parity) has no
// simple corner, so one corner is traded for an unused support pixel instead,
// guarded by the global component count
int cleanup_2x2(BinaryMask& img, const BinaryMask& support) {
    auto block_at = [&](int y, int x) {
        return img.at(y, x) && img.at(y, x + 1) && img.at(y + 1, x) && img.at(y + 1, x + 1);
    };
    auto in_2x2 = [&](int y, int x) {
        for (int by = std::max(0, y - 1); by <= std::min(img.h - 2, y); ++by)
            for (int bx = std::max(0, x - 1); bx <= std::min(img.w - 2, x); ++bx)
                if (block_at(by, bx)) return true;
        return false;
    };
    int removed = 0;
    bool progressed = true;
    while (progressed) {
        progressed = false;
        for (int y = 0; y + 1 < img.h; ++y)
            for (int x = 0; x + 1 < img.w; ++x) {
                if (!block_at(y, x)) continue;
                const std::pair<int, int> cand[4] = {{y, x}, {y, x + 1}, {y + 1, x},
                                                     {y + 1, x + 1}};
                bool done = false;
                for (const auto& [cy, cx] : cand) {
                    if (yokoi8(img, cy, cx) == 1 && fg_neighbors(img, cy, cx) >= 2) {
                        img.at(cy, cx) = 0;
                        done = true;
                        break;
                    }
                }
                if (!done) {
                    const int comps = count_components8(img);
                    for (const auto& [cy, cx] : cand) {
                        for (int dy = -1; dy <= 1 && !done; ++dy)
                            for (int dx = -1; dx <= 1 && !done; ++dx) {
                                if (!dy && !dx) continue;
                                const int ry = cy + dy, rx = cx + dx;
                                if (ry < 0 || ry >= img.h || rx < 0 || rx >= img.w) continue;
                                if (img.at(ry, rx) || !support.at(ry, rx)) continue;
                                img.at(ry, rx) = 1;
                                img.at(cy, cx) = 0;
                                if (!in_2x2(ry, rx) && count_components8(img) == comps) {
                                    done = true;
                                } else {
                                    img.at(ry, rx) = 0;
                                    img.at(cy, cx) = 1;
                                }
                            }
                        if (done) break;
                    }
                }
                if (done) {
                    ++removed;
                    progressed = true;
                }
            }
    }
    return removed;
}

}  // namespace

BinaryMask skeletonize(const BinaryMask& mask) {
    BinaryMask img = mask;
    // alternate thinning-to-convergence and block cleanup until a whole cycle
    // is a no-op, which makes the operation idempotent
    bool changed = true;
    while (changed) {
        changed = false;
        bool thinning = true;
        while (thinning) {
            int d = thin_subiteration(img, 0);
            d += thin_subiteration(img, 1);
            thinning = d > 0;
            changed = changed || thinning;
        }
        if (cleanup_2x2(img, mask) > 0) changed = true;
    }
    return img;
}

int count_components8(const BinaryMask& mask) {
    const int H = mask.h, W = mask.w;
    std::vector<uint8_t> seen(size_t(H) * W, 0);
    int count = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!mask.at(y, x) || seen[size_t(y) * W + x]) continue;
            ++count;
            seen[size_t(y) * W + x] = 1;
            queue.push_back({y, x});
            while (!queue.empty()) {
                const auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        if (!mask.at(ny, nx) || seen[size_t(ny) * W + nx]) continue;
                        seen[size_t(ny) * W + nx] = 1;
                        queue.push_back({ny, nx});
                    }
            }
        }
    return count;
}

BinaryMask widen_centerline(const BinaryMask& m, int width) {
    if (width < 1) throw ConfigError("widen_centerline: width must be positive");
    const int r = width / 2;
    BinaryMask out;
    out.h = m.h;
    out.w = m.w;
    out.v.assign(m.v.size(), 0);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (dy * dy + dx * dx > r * r) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny >= 0 && ny < m.h && nx >= 0 && nx < m.w) out.at(ny, nx) = 1;
                }
        }
    return out;
}

// ---- synthetic generator ----

void SynthParams::validate() const {
    if (height < 64 || width < 64) throw ConfigError("synth: image size must be at least 64");
    if (width_min < 1.0 || width_max < width_min)
        throw ConfigError("synth: vessel widths must satisfy 1 <= width_min <= width_max");
    if (tree_count < 1) throw ConfigError("synth: tree_count must be positive");
    if (branch_depth < 1) throw ConfigError("synth: branch_depth must be positive");
    if (capillary_density < 0.0) throw ConfigError("synth: capillary_density must be nonnegative");
    if (noise < 0.0) throw ConfigError("synth: noise must be nonnegative");
}

namespace {

struct Canvas {
    int h, w;
    std::vector<float> v;
    void stamp_disk(double cy, double cx, double radius, float value) {
        const int y0 = std::max(0, int(std::floor(cy - radius)));
        const int y1 = std::min(h - 1, int(std::ceil(cy + radius)));
        const int x0 = std::max(0, int(std::floor(cx - radius)));
        const int x1 = std::min(w - 1, int(std::ceil(cx + radius)));
        const double r2 = radius * radius;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx <= r2) {
                    float& p = v[size_t(y) * w + x];
                    p = std::max(p, value);
                }
            }
    }
};

struct Vec2 {
    double y, x;
};

// quadratic curve stamped as overlapping disks, width tapering p0 -> p2
void stamp_curve(Canvas& cv, Vec2 p0, Vec2 p1, Vec2 p2, double w0, double w1, float value) {
    const double chord = std::hypot(p2.y - p0.y, p2.x - p0.x);
    const int steps = std::max(8, int(std::ceil(chord * 3.0)));
    for (int i = 0; i <= steps; ++i) {
        const double t = double(i) / steps;
        const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
        const double y = a * p0.y + b * p1.y + c * p2.y;
        const double x = a * p0.x + b * p1.x + c * p2.x;
        const double wd = w0 + (w1 - w0) * t;
        cv.stamp_disk(y, x, wd * 0.5, value);
    }
}

struct Branch {
    Vec2 start;
    double angle;
    double length;
    double width;
    int depth;
};

}  // namespace

SynthSample synth_generate(const SynthParams& p) {
    p.validate();
    Rng rng(p.seed);
    Rng tree_rng = rng.fork("trees");
    Rng cap_rng = rng.fork("capillaries");
    Rng noise_rng = rng.fork("noise");

    Canvas cv{p.height, p.width, std::vector<float>(size_t(p.height) * p.width, 0.f)};
    const double diag = std::hypot(double(p.height), double(p.width));

    std::deque<Branch> work;
    for (int t = 0; t < p.tree_count; ++t) {
        // root on a random border, heading inward
        const int side = int(tree_rng.uniform_int(0, 3));
        Vec2 s;
        double ang;
        switch (side) {
            case 0: s = {0.0, tree_rng.uniform() * (p.width - 1)}; ang = M_PI / 2; break;
            case 1: s = {double(p.height - 1), tree_rng.uniform() * (p.width - 1)}; ang = -M_PI / 2; break;
            case 2: s = {tree_rng.uniform() * (p.height - 1), 0.0}; ang = 0.0; break;
            default: s = {tree_rng.uniform() * (p.height - 1), double(p.width - 1)}; ang = M_PI; break;
        }
        ang += (tree_rng.uniform() - 0.5) * 0.8;
        work.push_back({s, ang, diag * 0.28, p.width_max, 0});
    }

    while (!work.empty()) {
        const Branch b = work.front();
        work.pop_front();
        const Vec2 end{b.start.y + std::sin(b.angle) * b.length,
                       b.start.x + std::cos(b.angle) * b.length};
        const Vec2 mid{(b.start.y + end.y) / 2, (b.start.x + end.x) / 2};
        const double bend = (tree_rng.uniform() - 0.5) * b.length * 0.5;
        const Vec2 ctrl{mid.y + std::cos(b.angle) * bend, mid.x - std::sin(b.angle) * bend};
        const double child_w = std::max(p.width_min, b.width * tree_rng.uniform(0.62, 0.8));
        const float value = float(0.55 + 0.4 * (1.0 - double(b.depth) / p.branch_depth));
        stamp_curve(cv, b.start, ctrl, end, b.width, child_w, value);
        if (b.depth + 1 >= p.branch_depth) continue;
        const int kids = tree_rng.uniform() < 0.85 ? 2 : 1;
        for (int k = 0; k < kids; ++k) {
            const double spread = tree_rng.uniform(0.25, 0.7) * (k == 0 ? 1.0 : -1.0);
            work.push_back({end, b.angle + spread, b.length * tree_rng.uniform(0.6, 0.8),
                            child_w, b.depth + 1});
        }
    }

    // low-contrast capillary mesh, width ~1, included in the pixel mask
    const int strands =
        int(std::lround(p.capillary_density * double(p.height) * p.width / 2048.0));
    for (int s = 0; s < strands; ++s) {
        Vec2 pos{cap_rng.uniform(0.15, 0.85) * p.height, cap_rng.uniform(0.15, 0.85) * p.width};
        double ang = cap_rng.uniform() * 2 * M_PI;
        const int steps = int(cap_rng.uniform_int(12, 30));
        for (int i = 0; i < steps; ++i) {
            const Vec2 nxt{pos.y + std::sin(ang) * 3.0, pos.x + std::cos(ang) * 3.0};
            const Vec2 mid{(pos.y + nxt.y) / 2 + (cap_rng.uniform() - 0.5),
                           (pos.x + nxt.x) / 2 + (cap_rng.uniform() - 0.5)};
            stamp_curve(cv, pos, mid, nxt, 1.0, 1.0, float(cap_rng.uniform(0.28, 0.4)));
            pos = nxt;
            ang += (cap_rng.uniform() - 0.5) * 0.9;
            if (pos.y < 1 || pos.y > p.height - 2 || pos.x < 1 || pos.x > p.width - 2) break;
        }
    }

    SynthSample out;
    BinaryMask pixel;
    pixel.h = p.height;
    pixel.w = p.width;
    pixel.v.resize(cv.v.size());
    for (size_t i = 0; i < cv.v.size(); ++i) pixel.v[i] = cv.v[i] > 0.f ? 1 : 0;

    out.image.h = p.height;
    out.image.w = p.width;
    out.image.v = cv.v;
    if (p.noise > 0.0) {
        // multiplicative speckle + horizontal stripe gain; both clamped
        // positive so the support still equals the pixel mask
        const double period = noise_rng.uniform(8.0, 24.0);
        const double phase = noise_rng.uniform() * 2 * M_PI;
        for (int y = 0; y < p.height; ++y) {
            const double stripe =
                std::max(0.05, 1.0 + 0.5 * p.noise * std::sin(2 * M_PI * y / period + phase));
            for (int x = 0; x < p.width; ++x) {
                float& px = out.image.at(y, x);
                if (px <= 0.f) continue;
                const double speckle = std::max(0.05, 1.0 + p.noise * noise_rng.normal());
                px = float(std::min(1.0, double(px) * speckle * stripe));
            }
        }
    }
    out.image.validate();

    out.ann.centerline = skeletonize(pixel);
    out.ann.pixel = std::move(pixel);
    return out;
}

DatasetManifest write_synth_dataset(const SynthParams& base, int train_count, int test_count,
                                    const std::string& root) {
    if (train_count < 1 || test_count < 0)
        throw ConfigError("write_synth_dataset: need at least one training image");
    DatasetManifest m;
    m.root = root;
    m.subset = SubsetTag::synthetic;
    m.mode = AnnotationMode::dual;

    const std::pair<std::string, int> splits[2] = {{"train", train_count}, {"test", test_count}};
    int serial = 0;  // stems stay unique across splits
    for (const auto& [split, count] : splits) {
        const fs::path base_dir = fs::path(root) / split;
        fs::create_directories(base_dir / m.dir_img);
        fs::create_directories(base_dir / m.dir_pixel);
        fs::create_directories(base_dir / m.dir_centerline);
        for (int i = 0; i < count; ++i) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "synth_%03d", serial++);
            SynthParams p = base;
            p.seed = splitmix64(base.seed ^ fnv1a64(split + "/" + stem));
            const SynthSample s = synth_generate(p);
            save_image((base_dir / m.dir_img / (std::string(stem) + ".png")).string(), s.image);
            save_mask((base_dir / m.dir_pixel / (std::string(stem) + ".png")).string(),
                      *s.ann.pixel);
            save_mask((base_dir / m.dir_centerline / (std::string(stem) + ".png")).string(),
                      *s.ann.centerline);
        }
    }
    write_text_file((fs::path(root) / "manifest.txt").string(), m.to_text());
    return m;
}

}  // namespace octa
