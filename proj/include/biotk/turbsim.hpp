#ifndef BIOTK_TURBSIM_HPP
#define BIOTK_TURBSIM_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "biotk/errors.hpp"
#include "biotk/rng.hpp"

namespace biotk {

struct ZernikeSpec {
    int max_noll = 15;             // highest Noll index in the expansion
    std::size_t grid = 64;         // pupil grid P (even, >= 64)
    double aperture_radius = 0.0;  // pixels; 0 means grid/2
    int crop = 33;                 // PSF crop size k (odd)

    double radius() const { return aperture_radius > 0 ? aperture_radius
                                                        : static_cast<double>(grid) / 2.0; }
    void validate() const;
};

struct TurbulenceParams {
    double d_over_r0 = 3.0;   // in [1,10] for the simulated regime; 0 disables blur
    double noise_sigma = 0.0; // additive white noise std, image units
    std::size_t tile_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Normalized non-negative blur kernel. centroid_y/x locate the intensity
/// centroid in full-grid coordinates (before cropping), so linear-phase
/// displacement is observable.
struct PSFKernel {
    std::size_t size = 0;
    std::vector<double> data; // size x size, unit sum
    double centroid_y = 0.0;
    double centroid_x = 0.0;

    double at(std::size_t y, std::size_t x) const { return data[y * size + x]; }
};

struct Image64 {
    std::size_t height = 0, width = 0;
    std::vector<double> data;

    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
};

/// Noll index -> (radial order n, azimuthal frequency m); the sign convention
/// (cosine for even j, sine for odd j) is applied by zernike_mode.
std::pair<int, int> noll_to_nm(int j);

/// Noll-normalized mode sampled on the unit disk, zero outside.
std::vector<double> zernike_mode(int j, std::size_t grid, double aperture_radius = 0.0);

/// Coefficient stds: (D/r0)^(5/6) * w_j with w_j ~ (n_j+1)^(-11/12) and
/// sum of w_j^2 = 1 over j = 2..max_noll (piston excluded).
std::vector<double> zernike_coeff_stds(int max_noll, double d_over_r0);

/// phi = sum a_j Z_j with independent Gaussian a_j; deterministic per substream.
std::vector<double> sample_phase_screen(const ZernikeSpec& spec,
                                        const TurbulenceParams& params,
                                        SubstreamRng rng);

/// |centered DFT of aperture * exp(i phase)|^2, cropped around the centroid
/// and normalized to unit sum. The aperture edge is apodized with a short
/// raised-cosine taper so the diffraction tails decay fast enough for a
/// compact crop. The crop grows (with a warning) until it captures >= 99.9%
/// of the energy or hits the grid.
PSFKernel psf_from_phase(const std::vector<double>& phase, const ZernikeSpec& spec);

/// Second-moment radius about the kernel centroid.
double blur_metric(const PSFKernel& psf);

/// Tile-wise anisoplanatic degradation: an independent phase screen, PSF and
/// convolution per tile (edge replication), then white noise. Deterministic
/// under (seed, params); the parallel version is byte-identical to the serial
/// reference.
Image64 degrade_image(const Image64& clean, const ZernikeSpec& spec,
                      const TurbulenceParams& params);
Image64 degrade_image_serial(const Image64& clean, const ZernikeSpec& spec,
                             const TurbulenceParams& params);

Image64 read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Image64& img);
Image64 read_fsimg(const std::string& path);
void write_fsimg(const std::string& path, const Image64& img);

} // namespace biotk

#endif
