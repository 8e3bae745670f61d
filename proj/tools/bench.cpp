#include <chrono>
#include <cstdio>
#include <vector>

#include "biotk/core.hpp"
#include "biotk/rng.hpp"
#include "biotk/turbsim.hpp"

using namespace biotk;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> random_unit(std::size_t dim, SubstreamRng& rng) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.next_gaussian();
    normalize_vector(v);
    return v;
}

void bench_scores() {
    const std::size_t n_gallery = 200, dim = 512;
    SubstreamRng rng(42);
    std::vector<GalleryEntry> gallery(n_gallery);
    for (std::size_t g = 0; g < n_gallery; ++g) {
        gallery[g].subject_id = "s" + std::to_string(g);
        for (int m = 0; m < kNumModalities; ++m) gallery[g].vectors[m] = random_unit(dim, rng);
    }
    ProbeRecord probe;
    probe.probe_id = "p";
    for (int m = 0; m < kNumModalities; ++m) probe.vectors[m] = random_unit(dim, rng);

    const int reps = 200;
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) build_score_matrix_serial(probe, gallery);
    const double serial = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) build_score_matrix(probe, gallery);
    const double parallel = seconds_since(t0);
    std::printf("score_matrix   %4d reps  serial %8.3f ms/it  parallel %8.3f ms/it  speedup %.2fx\n",
                reps, 1e3 * serial / reps, 1e3 * parallel / reps, serial / parallel);

    const auto a = build_score_matrix_serial(probe, gallery);
    const auto b = build_score_matrix(probe, gallery);
    if (a.scores != b.scores) std::printf("score_matrix   MISMATCH between serial and parallel\n");
}

void bench_turbsim() {
    const std::size_t H = 512, W = 512;
    Image64 img{H, W, std::vector<double>(H * W)};
    SubstreamRng rng(7);
    for (double& v : img.data) v = 128.0 + 40.0 * rng.next_gaussian();

    ZernikeSpec spec;
    spec.grid = 64;
    TurbulenceParams params;
    params.d_over_r0 = 3.0;
    params.noise_sigma = 1.0;
    params.seed = 11;

    auto t0 = std::chrono::steady_clock::now();
    const auto serial_out = degrade_image_serial(img, spec, params);
    const double serial = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const auto parallel_out = degrade_image(img, spec, params);
    const double parallel = seconds_since(t0);
    std::printf("degrade_image  512x512    serial %8.1f ms     parallel %8.1f ms     speedup %.2fx\n",
                1e3 * serial, 1e3 * parallel, serial / parallel);
    if (serial_out.data != parallel_out.data)
        std::printf("degrade_image  MISMATCH between serial and parallel\n");
}

} // namespace

int main() {
    bench_scores();
    bench_turbsim();
    return 0;
}
