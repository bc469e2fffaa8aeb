#include "octa/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace octa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as native little-endian floats");

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (poly_power <= 0.0) throw ConfigError("train: poly_power must be positive");
    if (rotation_deg < 0.0) throw ConfigError("train: rotation_deg must be nonnegative");
    if (!(dice_eps > 0.0)) throw ConfigError("train: dice_eps must be positive");
}

double poly_lr(int64_t iter, int64_t max_iter, double lr0, double power) {
    if (max_iter < 1) throw ConfigError("poly_lr: max_iter must be positive");
    if (iter < 0 || iter > max_iter) throw ConfigError("poly_lr: iter out of [0, max_iter]");
    return lr0 * std::pow(1.0 - double(iter) / double(max_iter), power);
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct InverseRotation {
    double c, s, cy, cx;
    InverseRotation(int h, int w, double degrees) {
        const double rad = degrees * kPi / 180.0;
        c = std::cos(rad);
        s = std::sin(rad);
        cy = (h - 1) / 2.0;
        cx = (w - 1) / 2.0;
    }
    // source coordinates that land on output pixel (y, x)
    void source(int y, int x, double& sy, double& sx) const {
        const double dy = y - cy, dx = x - cx;
        sy = cy + c * dy + s * dx;
        sx = cx - s * dy + c * dx;
    }
};

}  // namespace

RasterImage rotate_image(const RasterImage& img, double degrees) {
    RasterImage out;
    out.h = img.h;
    out.w = img.w;
    out.v.assign(img.v.size(), 0.f);
    const InverseRotation rot(img.h, img.w, degrees);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double sy, sx;
            rot.source(y, x, sy, sx);
            const int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            double acc = 0.0;
            for (int t = 0; t < 4; ++t) {
                const int yy = y0 + (t >> 1), xx = x0 + (t & 1);
                if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
                const double wy = (t >> 1) ? fy : 1.0 - fy;
                const double wx = (t & 1) ? fx : 1.0 - fx;
                acc += wy * wx * img.at(yy, xx);
            }
            out.at(y, x) = float(acc);
        }
    return out;
}

BinaryMask rotate_mask(const BinaryMask& m, double degrees) {
    BinaryMask out;
    out.h = m.h;
    out.w = m.w;
    out.v.assign(m.v.size(), 0);
    const InverseRotation rot(m.h, m.w, degrees);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double sy, sx;
            rot.source(y, x, sy, sx);
            const int ny = int(std::lround(sy)), nx = int(std::lround(sx));
            if (ny >= 0 && ny < m.h && nx >= 0 && nx < m.w && m.at(ny, nx)) out.at(y, x) = 1;
        }
    return out;
}

void augment(RasterImage& img, AnnotationSet& ann, Rng& rng, double max_degrees) {
    if (max_degrees <= 0.0) return;
    const double deg = rng.uniform(-max_degrees, max_degrees);
    img = rotate_image(img, deg);
    if (ann.pixel) ann.pixel = rotate_mask(*ann.pixel, deg);
    if (ann.centerline) ann.centerline = rotate_mask(*ann.centerline, deg);
}

// ---- checkpoint container ----

const std::vector<float>* Checkpoint::find_blob(const std::string& name) const {
    for (const auto& [n, v] : blobs)
        if (n == name) return &v;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f << "OCTACKPT " << c.version << '\n';
    f << "stage " << c.stage << '\n';
    f << "epoch " << c.epoch << '\n';
    f << "seed " << c.seed << '\n';
    f << "adam_steps " << c.adam_steps << '\n';
    f << "coarse_source " << (c.coarse_source.empty() ? "-" : c.coarse_source) << '\n';
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  (unsigned long long)fnv1a64(c.config_echo));
    f << "config_hash " << hex << '\n';
    int64_t lines = std::count(c.config_echo.begin(), c.config_echo.end(), '\n');
    f << "config_lines " << lines << '\n';
    f << c.config_echo;
    f << "blobs " << c.blobs.size() << '\n';
    for (const auto& [name, data] : c.blobs) {
        f << name << ' ' << data.size() << '\n';
        f.write(reinterpret_cast<const char*>(data.data()),
                std::streamsize(data.size() * sizeof(float)));
    }
    if (!f) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint: " + path);
    Checkpoint c;
    std::string line, key, magic;
    auto next_kv = [&](const std::string& want) -> std::string {
        if (!std::getline(f, line)) throw DataError("checkpoint truncated: " + path);
        std::istringstream is(line);
        is >> key;
        if (key != want) throw DataError("checkpoint: expected '" + want + "', got '" + key + "'");
        std::string rest;
        std::getline(is, rest);
        if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
        return rest;
    };
    {
        if (!std::getline(f, line)) throw DataError("checkpoint truncated: " + path);
        std::istringstream is(line);
        is >> magic >> c.version;
        if (magic != "OCTACKPT") throw DataError("not a checkpoint file: " + path);
        if (c.version != 1)
            throw DataError("unsupported checkpoint version " + std::to_string(c.version));
    }
    c.stage = next_kv("stage");
    c.epoch = std::stoi(next_kv("epoch"));
    c.seed = std::stoull(next_kv("seed"));
    c.adam_steps = std::stoll(next_kv("adam_steps"));
    c.coarse_source = next_kv("coarse_source");
    if (c.coarse_source == "-") c.coarse_source.clear();
    const std::string want_hash = next_kv("config_hash");
    const int64_t lines = std::stoll(next_kv("config_lines"));
    std::ostringstream echo;
    for (int64_t i = 0; i < lines; ++i) {
        if (!std::getline(f, line)) throw DataError("checkpoint truncated: " + path);
        echo << line << '\n';
    }
    c.config_echo = echo.str();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)fnv1a64(c.config_echo));
    if (want_hash != hex) throw DataError("checkpoint config hash mismatch: " + path);
    const int64_t nblobs = std::stoll(next_kv("blobs"));
    for (int64_t i = 0; i < nblobs; ++i) {
        if (!std::getline(f, line)) throw DataError("checkpoint truncated: " + path);
        std::istringstream is(line);
        std::string name;
        size_t numel = 0;
        is >> name >> numel;
        if (name.empty()) throw DataError("checkpoint: bad blob header");
        std::vector<float> data(numel);
        f.read(reinterpret_cast<char*>(data.data()), std::streamsize(numel * sizeof(float)));
        if (size_t(f.gcount()) != numel * sizeof(float))
            throw DataError("checkpoint truncated in blob " + name);
        for (float x : data)
            if (!std::isfinite(x)) throw NumericError("non-finite values in checkpoint blob " + name);
        c.blobs.emplace_back(std::move(name), std::move(data));
    }
    return c;
}

std::string encode_model_config(const CoarseConfig& c, const SrsConfig* s) {
    std::ostringstream os;
    os << "coarse.base_width = " << c.base_width << '\n';
    os << "coarse.depth = " << c.depth << '\n';
    os << "coarse.dual_branch = " << (c.dual_branch ? 1 : 0) << '\n';
    os << "coarse.shared_stages = " << c.shared_stages << '\n';
    os << "coarse.centerline_blocks = " << c.centerline_blocks << '\n';
    os << "coarse.reduction = " << c.reduction << '\n';
    if (s) {
        os << "srs.m = " << s->m << '\n';
        os << "srs.hidden0 = " << s->hidden_channels[0] << '\n';
        os << "srs.hidden1 = " << s->hidden_channels[1] << '\n';
        os << "srs.refine_centerline = " << (s->refine_centerline_branch ? 1 : 0) << '\n';
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", s->init_sigma);
        os << "srs.init_sigma = " << buf << '\n';
    }
    return os.str();
}

void decode_model_config(const std::string& echo, CoarseConfig& c, std::optional<SrsConfig>& s) {
    std::istringstream is(echo);
    std::string line;
    SrsConfig srs;
    bool saw_srs = false;
    while (std::getline(is, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string v) {
            const size_t a = v.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const size_t b = v.find_last_not_of(" \t\r");
            return v.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "coarse.base_width") c.base_width = std::stoi(val);
        else if (key == "coarse.depth") c.depth = std::stoi(val);
        else if (key == "coarse.dual_branch") c.dual_branch = std::stoi(val) != 0;
        else if (key == "coarse.shared_stages") c.shared_stages = std::stoi(val);
        else if (key == "coarse.centerline_blocks") c.centerline_blocks = std::stoi(val);
        else if (key == "coarse.reduction") c.reduction = std::stoi(val);
        else if (key == "srs.m") { srs.m = std::stoi(val); saw_srs = true; }
        else if (key == "srs.hidden0") { srs.hidden_channels[0] = std::stoi(val); saw_srs = true; }
        else if (key == "srs.hidden1") { srs.hidden_channels[1] = std::stoi(val); saw_srs = true; }
        else if (key == "srs.refine_centerline") {
            srs.refine_centerline_branch = std::stoi(val) != 0;
            saw_srs = true;
        } else if (key == "srs.init_sigma") {
            srs.init_sigma = std::stod(val);
            saw_srs = true;
        }
        // other keys (train.* echo) are informational
    }
    if (saw_srs) {
        srs.hidden_channels[2] = srs.m * srs.m;
        s = srs;
    } else {
        s.reset();
    }
}

void store_to_blobs(const nn::ParamStore<float>& ps, Checkpoint& c) {
    for (const auto& p : ps.params()) {
        std::vector<float> data(size_t(p->value.numel()));
        std::memcpy(data.data(), p->value.data(), data.size() * sizeof(float));
        c.blobs.emplace_back(p->name, std::move(data));
    }
    for (const auto& [name, t] : ps.buffers()) {
        std::vector<float> data(size_t(t->numel()));
        std::memcpy(data.data(), t->data(), data.size() * sizeof(float));
        c.blobs.emplace_back(name, std::move(data));
    }
}

void blobs_to_store(const Checkpoint& c, nn::ParamStore<float>& ps, bool allow_partial) {
    std::set<std::string> filled;
    for (const auto& [name, data] : c.blobs) {
        if (name.rfind("adam.", 0) == 0) continue;  // optimizer slots handled separately
        if (auto p = ps.find(name)) {
            if (int64_t(data.size()) != p->value.numel())
                throw DataError("checkpoint blob size mismatch: " + name);
            std::memcpy(p->value.data(), data.data(), data.size() * sizeof(float));
            filled.insert(name);
            continue;
        }
        if (auto b = ps.find_buffer(name)) {
            if (int64_t(data.size()) != b->numel())
                throw DataError("checkpoint blob size mismatch: " + name);
            std::memcpy(b->data(), data.data(), data.size() * sizeof(float));
            filled.insert(name);
            continue;
        }
        throw DataError("checkpoint blob has no matching parameter: " + name);
    }
    if (allow_partial) return;
    for (const auto& p : ps.params())
        if (!filled.count(p->name)) throw DataError("checkpoint missing parameter: " + p->name);
    for (const auto& [name, t] : ps.buffers()) {
        (void)t;
        if (!filled.count(name)) throw DataError("checkpoint missing buffer: " + name);
    }
}

void adam_to_blobs(Adam<float>& opt, Checkpoint& c) {
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& name = params[i]->name;
        std::vector<float> m(size_t(opt.slot_m(i).numel()));
        std::memcpy(m.data(), opt.slot_m(i).data(), m.size() * sizeof(float));
        c.blobs.emplace_back("adam.m/" + name, std::move(m));
        std::vector<float> v(size_t(opt.slot_v(i).numel()));
        std::memcpy(v.data(), opt.slot_v(i).data(), v.size() * sizeof(float));
        c.blobs.emplace_back("adam.v/" + name, std::move(v));
    }
}

void adam_from_blobs(const Checkpoint& c, Adam<float>& opt) {
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& name = params[i]->name;
        const auto* m = c.find_blob("adam.m/" + name);
        const auto* v = c.find_blob("adam.v/" + name);
        if (!m || !v) throw DataError("checkpoint missing optimizer state for " + name);
        if (int64_t(m->size()) != opt.slot_m(i).numel() ||
            int64_t(v->size()) != opt.slot_v(i).numel())
            throw DataError("checkpoint optimizer state size mismatch for " + name);
        std::memcpy(opt.slot_m(i).data(), m->data(), m->size() * sizeof(float));
        std::memcpy(opt.slot_v(i).data(), v->data(), v->size() * sizeof(float));
    }
    opt.set_steps(c.adam_steps);
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,lr,loss_pixel,loss_centerline,loss_total,seconds\n";
    os.precision(9);
    for (const auto& e : log)
        os << e.epoch << ',' << e.lr << ',' << e.loss_pixel << ',' << e.loss_centerline << ','
           << e.loss_total << ',' << e.seconds << '\n';
    return os.str();
}

std::string encode_train_config(const TrainConfig& tc) {
    std::ostringstream os;
    os << "train.epochs = " << tc.epochs << '\n';
    os << "train.lr0 = " << tc.lr0 << '\n';
    os << "train.weight_decay = " << tc.weight_decay << '\n';
    os << "train.batch_size = " << tc.batch_size << '\n';
    os << "train.poly_power = " << tc.poly_power << '\n';
    os << "train.rotation_deg = " << tc.rotation_deg << '\n';
    os << "train.dice_eps = " << tc.dice_eps << '\n';
    os << "train.joint = " << (tc.joint ? 1 : 0) << '\n';
    os << "train.seed = " << tc.seed << '\n';
    return os.str();
}

// ---- training loops ----

namespace {

struct PreparedItem {
    RasterImage img;
    std::optional<BinaryMask> pixel, centerline;
};

// augment then pad so every spatial dim divides the coarse net's stride
PreparedItem prepare(const DatasetItem& item, Rng* aug_rng, double rot_deg, int mult) {
    PreparedItem out;
    RasterImage img = item.image;
    AnnotationSet ann = item.ann;
    if (aug_rng) augment(img, ann, *aug_rng, rot_deg);
    out.img = reflect_pad_to_multiple(img, mult);
    if (ann.pixel) out.pixel = reflect_pad_to_multiple(*ann.pixel, mult);
    if (ann.centerline) out.centerline = reflect_pad_to_multiple(*ann.centerline, mult);
    return out;
}

Tensor<float> stack_images(const std::vector<const RasterImage*>& imgs) {
    const int B = int(imgs.size()), H = imgs[0]->h, W = imgs[0]->w;
    Tensor<float> t({B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        if (imgs[size_t(b)]->h != H || imgs[size_t(b)]->w != W)
            throw DataError("train: images in one batch must share a shape");
        std::memcpy(t.data() + int64_t(b) * H * W, imgs[size_t(b)]->v.data(),
                    size_t(H) * W * sizeof(float));
    }
    return t;
}

Tensor<float> stack_masks(const std::vector<const BinaryMask*>& masks) {
    const int B = int(masks.size()), H = masks[0]->h, W = masks[0]->w;
    Tensor<float> t({B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        if (masks[size_t(b)]->h != H || masks[size_t(b)]->w != W)
            throw DataError("train: masks in one batch must share a shape");
        float* dst = t.data() + int64_t(b) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) dst[i] = float(masks[size_t(b)]->v[size_t(i)]);
    }
    return t;
}

BinaryMask union_mask(const PreparedItem& it) {
    if (it.pixel && it.centerline) {
        BinaryMask u = *it.pixel;
        for (size_t i = 0; i < u.v.size(); ++i) u.v[i] = u.v[i] | it.centerline->v[i];
        return u;
    }
    return it.pixel ? *it.pixel : *it.centerline;
}

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

TrainResult train_coarse(const TrainConfig& tc, const CoarseConfig& cc,
                         const std::vector<DatasetItem>& items) {
    tc.validate();
    cc.validate();
    if (items.empty()) throw DataError("train-coarse: empty dataset");
    for (const auto& it : items) {
        if (cc.dual_branch && (!it.ann.pixel || !it.ann.centerline))
            throw DataError("train-coarse: dual branch needs pixel and centerline masks (" +
                            it.stem + ")");
        if (!it.ann.pixel && !it.ann.centerline)
            throw DataError("train-coarse: no annotation for " + it.stem);
    }

    nn::ParamStore<float> ps(tc.seed);
    auto net = build_coarse(ps, cc);
    Adam<float> opt(ps.params(), tc.weight_decay);
    const int mult = 1 << (cc.depth - 1);
    const int64_t n = int64_t(items.size());
    const int64_t batches = (n + tc.batch_size - 1) / tc.batch_size;
    const int64_t max_iter = int64_t(tc.epochs) * batches;
    int64_t iter = 0;

    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    TrainResult res;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        const double t0 = now_seconds();
        Rng shuffle_rng = Rng(tc.seed).fork("shuffle/" + std::to_string(epoch));
        shuffle_rng.shuffle(order.begin(), order.end());
        double ep_lp = 0, ep_lc = 0, ep_lt = 0, last_lr = 0;
        for (int64_t b0 = 0; b0 < n; b0 += tc.batch_size) {
            const int64_t b1 = std::min(n, b0 + tc.batch_size);
            std::vector<PreparedItem> prep;
            for (int64_t i = b0; i < b1; ++i) {
                const auto& item = items[size_t(order[size_t(i)])];
                Rng aug = Rng(tc.seed).fork("augment/" + std::to_string(epoch) + "/" + item.stem);
                prep.push_back(prepare(item, &aug, tc.rotation_deg, mult));
            }
            std::vector<const RasterImage*> imgs;
            std::vector<const BinaryMask*> gt_p, gt_c;
            for (const auto& p : prep) {
                imgs.push_back(&p.img);
                if (cc.dual_branch) {
                    gt_p.push_back(&*p.pixel);
                    gt_c.push_back(&*p.centerline);
                } else {
                    gt_p.push_back(p.pixel ? &*p.pixel : &*p.centerline);
                }
            }

            ag::Tape<float> tape;
            auto x = ag::constant(stack_images(imgs));
            auto out = net.forward(&tape, x, true);
            auto lp = ag::mse_loss(&tape, out.pixel, stack_masks(gt_p));
            auto loss = lp;
            ag::VarPtr<float> lc;
            if (cc.dual_branch) {
                lc = ag::mse_loss(&tape, out.centerline, stack_masks(gt_c));
                loss = ag::add(&tape, lp, lc);
            }
            ps.zero_grads();
            tape.backward(loss);
            last_lr = poly_lr(iter, max_iter, tc.lr0, tc.poly_power);
            opt.step(last_lr);
            ++iter;
            ep_lp += lp->value[0];
            if (lc) ep_lc += lc->value[0];
            ep_lt += loss->value[0];
        }
        EpochLog el;
        el.epoch = epoch;
        el.lr = last_lr;
        el.loss_pixel = ep_lp / double(batches);
        el.loss_centerline = ep_lc / double(batches);
        el.loss_total = ep_lt / double(batches);
        el.seconds = now_seconds() - t0;
        res.log.push_back(el);
    }

    res.ckpt.stage = "coarse";
    res.ckpt.epoch = tc.epochs;
    res.ckpt.seed = tc.seed;
    res.ckpt.adam_steps = opt.steps();
    res.ckpt.config_echo = encode_model_config(cc, nullptr) + encode_train_config(tc);
    store_to_blobs(ps, res.ckpt);
    adam_to_blobs(opt, res.ckpt);
    return res;
}

TrainResult train_fine(const TrainConfig& tc, const SrsConfig& sc,
                       const std::vector<DatasetItem>& items, const Checkpoint& coarse_ckpt,
                       const std::string& coarse_path) {
    tc.validate();
    sc.validate();
    if (items.empty()) throw DataError("train-fine: empty dataset");
    if (coarse_ckpt.stage != "coarse")
        throw DataError("train-fine: expected a coarse-stage checkpoint, got stage '" +
                        coarse_ckpt.stage + "'");
    CoarseConfig cc;
    std::optional<SrsConfig> ignored;
    decode_model_config(coarse_ckpt.config_echo, cc, ignored);
    cc.validate();
    if (sc.refine_centerline_branch && !cc.dual_branch)
        throw DataError("train-fine: dual refiner needs a dual-branch coarse checkpoint");

    nn::ParamStore<float> ps(tc.seed);
    auto coarse = build_coarse(ps, cc, "coarse");
    auto srs = build_srs(ps, sc, "srs");
    blobs_to_store(coarse_ckpt, ps, /*allow_partial=*/true);

    std::vector<ag::VarPtr<float>> trainable;
    for (const auto& p : ps.params()) {
        const bool is_coarse = p->name.rfind("coarse.", 0) == 0;
        if (is_coarse && !tc.joint) p->requires_grad = false;
        else trainable.push_back(p);
    }
    Adam<float> opt(trainable, tc.weight_decay);

    const int mult = 1 << (cc.depth - 1);
    const int64_t n = int64_t(items.size());
    const int64_t batches = (n + tc.batch_size - 1) / tc.batch_size;
    const int64_t max_iter = int64_t(tc.epochs) * batches;
    int64_t iter = 0;

    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    TrainResult res;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        const double t0 = now_seconds();
        Rng shuffle_rng = Rng(tc.seed).fork("shuffle/" + std::to_string(epoch));
        shuffle_rng.shuffle(order.begin(), order.end());
        double ep_l = 0, last_lr = 0;
        for (int64_t b0 = 0; b0 < n; b0 += tc.batch_size) {
            const int64_t b1 = std::min(n, b0 + tc.batch_size);
            std::vector<PreparedItem> prep;
            for (int64_t i = b0; i < b1; ++i) {
                const auto& item = items[size_t(order[size_t(i)])];
                Rng aug = Rng(tc.seed).fork("augment/" + std::to_string(epoch) + "/" + item.stem);
                prep.push_back(prepare(item, &aug, tc.rotation_deg, mult));
            }
            std::vector<const RasterImage*> imgs;
            std::vector<const BinaryMask*> gt_u;
            std::vector<BinaryMask> unions;
            unions.reserve(prep.size());
            for (const auto& p : prep) unions.push_back(union_mask(p));
            for (size_t i = 0; i < prep.size(); ++i) {
                imgs.push_back(&prep[i].img);
                gt_u.push_back(&unions[i]);
            }

            ag::Tape<float> tape;
            auto x = ag::constant(stack_images(imgs));
            // frozen mode: run the coarse net off-tape in eval mode so its
            // parameters and running stats are untouched
            CoarseNet<float>::Out cout_maps;
            if (tc.joint) cout_maps = coarse.forward(&tape, x, true);
            else cout_maps = coarse.forward(nullptr, x, false);
            auto sout = srs.forward(&tape, x, cout_maps.pixel,
                                    sc.refine_centerline_branch ? cout_maps.centerline : nullptr,
                                    true);
            auto loss =
                ag::dice_loss(&tape, sout.final_map, stack_masks(gt_u), float(tc.dice_eps));
            ps.zero_grads();
            tape.backward(loss);
            last_lr = poly_lr(iter, max_iter, tc.lr0, tc.poly_power);
            opt.step(last_lr);
            ++iter;
            ep_l += loss->value[0];
        }
        EpochLog el;
        el.epoch = epoch;
        el.lr = last_lr;
        el.loss_pixel = ep_l / double(batches);
        el.loss_total = el.loss_pixel;
        el.seconds = now_seconds() - t0;
        res.log.push_back(el);
    }

    res.ckpt.stage = "fine";
    res.ckpt.epoch = tc.epochs;
    res.ckpt.seed = tc.seed;
    res.ckpt.adam_steps = opt.steps();
    res.ckpt.coarse_source = coarse_path;
    res.ckpt.config_echo = encode_model_config(cc, &sc) + encode_train_config(tc);
    store_to_blobs(ps, res.ckpt);
    adam_to_blobs(opt, res.ckpt);
    return res;
}

}  // namespace octa
