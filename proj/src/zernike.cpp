#include <cmath>
#include <vector>

#include "biotk/turbsim.hpp"

namespace biotk {

void ZernikeSpec::validate() const {
    if (max_noll < 1) throw ConfigError("max_noll must be >= 1");
    if (grid < 64 || grid % 2 != 0) throw ConfigError("grid must be even and >= 64");
    if (crop < 1 || crop % 2 == 0) throw ConfigError("crop must be odd and positive");
    if (radius() > static_cast<double>(grid) / 2.0)
        throw ConfigError("aperture radius exceeds grid half-size");
}

void TurbulenceParams::validate() const {
    if (d_over_r0 < 0.0) throw ConfigError("d_over_r0 must be >= 0");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (tile_size < 8) throw ConfigError("tile_size must be >= 8");
}

std::pair<int, int> noll_to_nm(int j) {
    if (j < 1) throw ConfigError("Noll index must be >= 1");
    int n = 0;
    int j1 = j - 1;
    while (j1 > n) {
        ++n;
        j1 -= n;
    }
    const int m = (n % 2) + 2 * ((j1 + ((n + 1) % 2)) / 2);
    return {n, m};
}

namespace {

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

// R_n^m(rho), m >= 0
double radial_poly(int n, int m, double rho) {
    double acc = 0.0;
    for (int k = 0; k <= (n - m) / 2; ++k) {
        const double c = ((k % 2) ? -1.0 : 1.0) * factorial(n - k) /
                         (factorial(k) * factorial((n + m) / 2 - k) *
                          factorial((n - m) / 2 - k));
        acc += c * std::pow(rho, n - 2 * k);
    }
    return acc;
}

} // namespace

std::vector<double> zernike_mode(int j, std::size_t grid, double aperture_radius) {
    const auto [n, m] = noll_to_nm(j);
    const double R = aperture_radius > 0 ? aperture_radius : static_cast<double>(grid) / 2.0;
    const double norm = m == 0 ? std::sqrt(n + 1.0) : std::sqrt(2.0 * (n + 1.0));
    const bool use_cos = (j % 2) == 0;
    const double c = static_cast<double>(grid) / 2.0 - 0.5; // pixel-center origin
    std::vector<double> field(grid * grid, 0.0);
    for (std::size_t y = 0; y < grid; ++y) {
        for (std::size_t x = 0; x < grid; ++x) {
            const double dx = (static_cast<double>(x) - c) / R;
            const double dy = (static_cast<double>(y) - c) / R;
            const double rho = std::sqrt(dx * dx + dy * dy);
            if (rho > 1.0) continue;
            double v = norm * radial_poly(n, m, rho);
            if (m != 0) {
                const double theta = std::atan2(dy, dx);
                v *= use_cos ? std::cos(m * theta) : std::sin(m * theta);
            }
            field[y * grid + x] = v;
        }
    }
    return field;
}

std::vector<double> zernike_coeff_stds(int max_noll, double d_over_r0) {
    if (max_noll < 2) throw ConfigError("phase expansion needs max_noll >= 2");
    std::vector<double> w(static_cast<std::size_t>(max_noll) + 1, 0.0);
    double sum_sq = 0.0;
    for (int j = 2; j <= max_noll; ++j) {
        const auto [n, m] = noll_to_nm(j);
        (void)m;
        w[static_cast<std::size_t>(j)] = std::pow(n + 1.0, -11.0 / 12.0);
        sum_sq += w[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j)];
    }
    const double amp = std::pow(d_over_r0, 5.0 / 6.0) / std::sqrt(sum_sq);
    for (int j = 2; j <= max_noll; ++j) w[static_cast<std::size_t>(j)] *= amp;
    return w;
}

std::vector<double> sample_phase_screen(const ZernikeSpec& spec,
                                        const TurbulenceParams& params,
                                        SubstreamRng rng) {
    spec.validate();
    params.validate();
    const std::size_t P = spec.grid;
    std::vector<double> phase(P * P, 0.0);
    if (params.d_over_r0 <= 0.0) return phase;
    const auto stds = zernike_coeff_stds(spec.max_noll, params.d_over_r0);
    for (int j = 2; j <= spec.max_noll; ++j) {
        const double a =
            stds[static_cast<std::size_t>(j)] *
            rng.substream(static_cast<std::uint64_t>(j)).next_gaussian();
        const auto mode = zernike_mode(j, P, spec.aperture_radius);
        for (std::size_t i = 0; i < phase.size(); ++i) phase[i] += a * mode[i];
    }
    return phase;
}

} // namespace biotk
