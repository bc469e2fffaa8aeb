#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "octa/common.hpp"
#include "octa/kernels.hpp"
#include "octa/kernels_serial.hpp"

// Times the OpenMP kernels against the serial reference loops and checks the
// outputs stay bitwise identical. Exits nonzero on any mismatch, so the quick
// mode doubles as a smoke test.

using namespace octa;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::vector<float> randu(Rng& rng, size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
    return v;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct Row {
    std::string name;
    double serial_ms, parallel_ms;
    bool match;
};

template <class F>
double time_best(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_ms();
        f();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--quick") quick = true;

    const int reps = quick ? 1 : 5;
    const int N = 1, K = 3, stride = 1, pad = 1;
    const int C = quick ? 8 : 32;
    const int H = quick ? 48 : 128, W = H;
    const int OH = kern::conv_out_extent(H, K, stride, pad), OW = OH;

    Rng rng(7);
    const auto x = randu(rng, size_t(N) * C * H * W);
    const auto w = randu(rng, size_t(C) * C * K * K);
    const auto b = randu(rng, C);
    const auto go = randu(rng, size_t(N) * C * OH * OW);

    std::vector<Row> rows;
    auto bench = [&](const std::string& name, size_t out_elems, auto&& serial, auto&& parallel) {
        std::vector<float> ys(out_elems), yp(out_elems);
        const double ts = time_best(reps, [&] { serial(ys.data()); });
        const double tp = time_best(reps, [&] { parallel(yp.data()); });
        rows.push_back({name, ts, tp, bitwise_equal(ys, yp)});
    };

    bench(
        "conv2d_forward", size_t(N) * C * OH * OW,
        [&](float* out) {
            kern_serial::conv2d_forward(x.data(), N, C, H, W, w.data(), b.data(), C, K, stride,
                                        pad, out, OH, OW);
        },
        [&](float* out) {
            kern::conv2d_forward(x.data(), N, C, H, W, w.data(), b.data(), C, K, stride, pad, out,
                                 OH, OW);
        });
    bench(
        "conv2d_backward_data", size_t(N) * C * H * W,
        [&](float* out) {
            kern_serial::conv2d_backward_data(go.data(), N, C, OH, OW, w.data(), C, K, stride,
                                              pad, out, H, W);
        },
        [&](float* out) {
            kern::conv2d_backward_data(go.data(), N, C, OH, OW, w.data(), C, K, stride, pad, out,
                                       H, W);
        });
    bench(
        "conv2d_backward_weights", size_t(C) * C * K * K,
        [&](float* out) {
            kern_serial::conv2d_backward_weights(go.data(), N, C, OH, OW, x.data(), C, H, W, K,
                                                 stride, pad, out);
        },
        [&](float* out) {
            kern::conv2d_backward_weights(go.data(), N, C, OH, OW, x.data(), C, H, W, K, stride,
                                          pad, out);
        });
    bench(
        "conv2d_backward_bias", size_t(C),
        [&](float* out) { kern_serial::conv2d_backward_bias(go.data(), N, C, OH, OW, out); },
        [&](float* out) { kern::conv2d_backward_bias(go.data(), N, C, OH, OW, out); });
    bench(
        "upsample_bilinear_forward", size_t(N) * C * (2 * H) * (2 * W),
        [&](float* out) {
            kern_serial::upsample_bilinear_forward(x.data(), N, C, H, W, 2, out);
        },
        [&](float* out) { kern::upsample_bilinear_forward(x.data(), N, C, H, W, 2, out); });
    bench(
        "softmax_channels_forward", size_t(N) * C * H * W,
        [&](float* out) { kern_serial::softmax_channels_forward(x.data(), N, C, H, W, out); },
        [&](float* out) { kern::softmax_channels_forward(x.data(), N, C, H, W, out); });
    {
        const int m = 3;
        const auto field = randu(rng, size_t(N) * m * m * H * W);
        const auto src = randu(rng, size_t(N) * H * W);
        bench(
            "propagate_forward", size_t(N) * H * W,
            [&](float* out) {
                kern_serial::propagate_forward(field.data(), src.data(), N, m, H, W, out);
            },
            [&](float* out) {
                kern::propagate_forward(field.data(), src.data(), N, m, H, W, out);
            });
    }

    std::printf("%-26s %12s %12s %9s %8s\n", "kernel", "serial(ms)", "omp(ms)", "speedup",
                "bitwise");
    bool all_match = true;
    for (const auto& r : rows) {
        std::printf("%-26s %12.3f %12.3f %8.2fx %8s\n", r.name.c_str(), r.serial_ms,
                    r.parallel_ms, r.serial_ms / std::max(r.parallel_ms, 1e-9),
                    r.match ? "ok" : "MISMATCH");
        all_match = all_match && r.match;
    }
    if (!all_match) {
        std::fprintf(stderr, "bitwise mismatch between serial and OpenMP kernels\n");
        return 1;
    }
    return 0;
}
