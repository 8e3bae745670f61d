#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "biotk/turbsim.hpp"

namespace biotk {

namespace {

std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

// |DFT|^2 of the pupil, fftshifted so the DC term sits at (P/2, P/2).
// The mask edge falls off as a raised cosine over a few pixels inside the
// aperture; a hard edge would ring too slowly for any compact crop.
std::vector<double> pupil_intensity(const std::vector<double>& phase, std::size_t P,
                                    double radius) {
    std::vector<std::complex<double>> in(P * P, 0.0), out(P * P);
    const double c = static_cast<double>(P) / 2.0 - 0.5;
    const double taper = std::min(3.0, radius / 4.0);
    bool any = false;
    for (std::size_t y = 0; y < P; ++y) {
        for (std::size_t x = 0; x < P; ++x) {
            const double dx = static_cast<double>(x) - c;
            const double dy = static_cast<double>(y) - c;
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r >= radius) continue;
            const double t = std::min(1.0, (radius - r) / taper);
            const double w = 0.5 - 0.5 * std::cos(M_PI * t);
            if (w <= 0.0) continue;
            in[y * P + x] = std::polar(w, phase[y * P + x]);
            any = true;
        }
    }
    if (!any) throw ConfigError("all-zero aperture");

    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        plan = fftw_plan_dft_2d(static_cast<int>(P), static_cast<int>(P),
                                reinterpret_cast<fftw_complex*>(in.data()),
                                reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }

    std::vector<double> intensity(P * P);
    const std::size_t h = P / 2;
    for (std::size_t y = 0; y < P; ++y)
        for (std::size_t x = 0; x < P; ++x)
            intensity[((y + h) % P) * P + (x + h) % P] = std::norm(out[y * P + x]);
    return intensity;
}

} // namespace

PSFKernel psf_from_phase(const std::vector<double>& phase, const ZernikeSpec& spec) {
    spec.validate();
    const std::size_t P = spec.grid;
    if (phase.size() != P * P) throw ShapeError("phase grid size mismatch");
    for (double v : phase)
        if (!std::isfinite(v)) throw ConfigError("non-finite phase");

    const auto intensity = pupil_intensity(phase, P, spec.radius());
    double total = 0.0, cy = 0.0, cx = 0.0;
    for (std::size_t y = 0; y < P; ++y)
        for (std::size_t x = 0; x < P; ++x) {
            const double v = intensity[y * P + x];
            total += v;
            cy += v * static_cast<double>(y);
            cx += v * static_cast<double>(x);
        }
    if (total <= 0.0) throw ConfigError("degenerate pupil: zero energy");
    cy /= total;
    cx /= total;

    int k = spec.crop;
    std::vector<double> window;
    double captured = 0.0;
    while (true) {
        const int half = k / 2;
        const auto iy = static_cast<std::int64_t>(std::llround(cy));
        const auto ix = static_cast<std::int64_t>(std::llround(cx));
        const std::int64_t y0 =
            std::clamp<std::int64_t>(iy - half, 0, static_cast<std::int64_t>(P) - k);
        const std::int64_t x0 =
            std::clamp<std::int64_t>(ix - half, 0, static_cast<std::int64_t>(P) - k);
        window.assign(static_cast<std::size_t>(k) * k, 0.0);
        captured = 0.0;
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) {
                const double v = intensity[static_cast<std::size_t>(y0 + y) * P +
                                           static_cast<std::size_t>(x0 + x)];
                window[static_cast<std::size_t>(y) * k + x] = v;
                captured += v;
            }
        if (captured / total >= 0.999) break;
        // largest usable crop is the biggest odd size not exceeding the grid
        const int max_k = static_cast<int>(P) - (P % 2 ? 0 : 1);
        const int grown = std::min(2 * k + 1, max_k);
        if (grown == k) {
            std::fprintf(stderr,
                         "psf_from_phase: crop %d captures only %.4f%% of energy\n", k,
                         100.0 * captured / total);
            break;
        }
        std::fprintf(stderr,
                     "psf_from_phase: crop %d captures %.4f%% of energy, growing to %d\n", k,
                     100.0 * captured / total, grown);
        k = grown;
    }
    for (double& v : window) v /= captured;
    return PSFKernel{static_cast<std::size_t>(k), std::move(window), cy, cx};
}

double blur_metric(const PSFKernel& psf) {
    double cy = 0.0, cx = 0.0;
    for (std::size_t y = 0; y < psf.size; ++y)
        for (std::size_t x = 0; x < psf.size; ++x) {
            cy += psf.at(y, x) * static_cast<double>(y);
            cx += psf.at(y, x) * static_cast<double>(x);
        }
    double m2 = 0.0;
    for (std::size_t y = 0; y < psf.size; ++y)
        for (std::size_t x = 0; x < psf.size; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            m2 += psf.at(y, x) * (dy * dy + dx * dx);
        }
    return std::sqrt(m2);
}

namespace {

struct TileRect {
    std::size_t y0, x0, y1, x1;
};

void degrade_tile(const Image64& clean, Image64& out, const TileRect& t,
                  const ZernikeSpec& spec, const TurbulenceParams& params,
                  std::uint64_t tile_index) {
    const bool blur = params.d_over_r0 > 0.0;
    if (blur) {
        SubstreamRng phase_rng(params.seed, {tile_index, 0});
        const auto phase = sample_phase_screen(spec, params, phase_rng);
        const auto psf = psf_from_phase(phase, spec);
        if (params.tile_size < psf.size)
            throw ConfigError("tile smaller than PSF kernel");
        const auto k = static_cast<std::int64_t>(psf.size);
        const std::int64_t half = k / 2;
        for (std::size_t y = t.y0; y < t.y1; ++y) {
            for (std::size_t x = t.x0; x < t.x1; ++x) {
                double acc = 0.0;
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    // edge replication clamps to the tile, keeping tiles independent
                    const auto yy = static_cast<std::size_t>(std::clamp<std::int64_t>(
                        static_cast<std::int64_t>(y) + ky - half,
                        static_cast<std::int64_t>(t.y0),
                        static_cast<std::int64_t>(t.y1) - 1));
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const auto xx = static_cast<std::size_t>(std::clamp<std::int64_t>(
                            static_cast<std::int64_t>(x) + kx - half,
                            static_cast<std::int64_t>(t.x0),
                            static_cast<std::int64_t>(t.x1) - 1));
                        acc += psf.at(static_cast<std::size_t>(ky),
                                      static_cast<std::size_t>(kx)) *
                               clean.at(yy, xx);
                    }
                }
                out.at(y, x) = acc;
            }
        }
    } else {
        for (std::size_t y = t.y0; y < t.y1; ++y)
            for (std::size_t x = t.x0; x < t.x1; ++x) out.at(y, x) = clean.at(y, x);
    }
    if (params.noise_sigma > 0.0) {
        SubstreamRng noise_rng(params.seed, {tile_index, 1});
        for (std::size_t y = t.y0; y < t.y1; ++y)
            for (std::size_t x = t.x0; x < t.x1; ++x)
                out.at(y, x) += params.noise_sigma * noise_rng.next_gaussian();
    }
}

Image64 degrade_impl(const Image64& clean, const ZernikeSpec& spec,
                     const TurbulenceParams& params, bool parallel) {
    spec.validate();
    params.validate();
    if (clean.height == 0 || clean.width == 0) throw ShapeError("empty image");
    const std::size_t T = params.tile_size;
    const std::size_t ty = (clean.height + T - 1) / T;
    const std::size_t tx = (clean.width + T - 1) / T;
    Image64 out{clean.height, clean.width,
                std::vector<double>(clean.height * clean.width, 0.0)};
    std::vector<TileRect> tiles;
    tiles.reserve(ty * tx);
    for (std::size_t r = 0; r < ty; ++r)
        for (std::size_t c = 0; c < tx; ++c)
            tiles.push_back({r * T, c * T, std::min(clean.height, (r + 1) * T),
                             std::min(clean.width, (c + 1) * T)});

    const auto n = static_cast<std::int64_t>(tiles.size());
    if (parallel) {
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t i = 0; i < n; ++i) {
            try {
                degrade_tile(clean, out, tiles[static_cast<std::size_t>(i)], spec, params,
                             static_cast<std::uint64_t>(i));
            } catch (...) {
#pragma omp critical
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    } else {
        for (std::int64_t i = 0; i < n; ++i)
            degrade_tile(clean, out, tiles[static_cast<std::size_t>(i)], spec, params,
                         static_cast<std::uint64_t>(i));
    }
    return out;
}

} // namespace

Image64 degrade_image(const Image64& clean, const ZernikeSpec& spec,
                      const TurbulenceParams& params) {
    return degrade_impl(clean, spec, params, true);
}

Image64 degrade_image_serial(const Image64& clean, const ZernikeSpec& spec,
                             const TurbulenceParams& params) {
    return degrade_impl(clean, spec, params, false);
}

} // namespace biotk
