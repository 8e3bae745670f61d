#include "biotk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biotk/rng.hpp"

namespace biotk {

void LossHyperparams::validate() const {
    if (alpha <= 0 || beta <= 0 || gamma <= 0)
        throw ConfigError("sigmoid sharpness must be positive");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (margin <= 0) throw ConfigError("margin must be positive");
    if (mated_fraction <= 0 || mated_fraction >= 1)
        throw ConfigError("mated_fraction must lie in (0,1)");
}

void BatchPartition::validate() const {
    if (scores.size() != n_probes() * n_gallery())
        throw ShapeError("score table shape mismatch");
    std::vector<bool> seen(n_probes(), false);
    for (const auto& [p, g] : mated_probes) {
        if (p >= n_probes() || g >= n_gallery()) throw ShapeError("mated index out of range");
        if (probes[p].subject != gallery[g].subject)
            throw PartitionError("mated probe's mate is a different subject");
        seen[p] = true;
    }
    for (std::size_t p : non_mated_probes) {
        if (p >= n_probes()) throw ShapeError("non-mated index out of range");
        if (seen[p]) throw PartitionError("probe is both mated and non-mated");
        for (const auto& g : gallery)
            if (g.subject == probes[p].subject)
                throw PartitionError("non-mated probe's subject is enrolled");
    }
}

double sharp_sigmoid(double x, double k) {
    const double t = k * x;
    if (t >= 0) {
        const double e = std::exp(-t);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(t);
    return e / (1.0 + e);
}

std::pair<double, double> r_det_tau(double s_ig, double tau, double alpha) {
    const double s = sharp_sigmoid(s_ig - tau, alpha);
    return {s, alpha * s * (1.0 - s)};
}

std::vector<double> detection_thresholds(const BatchPartition& part, std::size_t g) {
    if (part.non_mated_probes.empty())
        throw EmptyThresholdSetError("no non-mated probes in batch");
    std::vector<double> t;
    t.reserve(part.non_mated_probes.size());
    for (std::size_t p : part.non_mated_probes) t.push_back(part.score(p, g));
    std::sort(t.begin(), t.end());
    return t;
}

RdetResult r_det(double s_ig, std::span<const double> thresholds, double alpha) {
    if (thresholds.empty()) throw EmptyThresholdSetError("empty threshold set");
    RdetResult r;
    r.d_tau.resize(thresholds.size());
    const double inv = 1.0 / static_cast<double>(thresholds.size());
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        auto [v, d] = r_det_tau(s_ig, thresholds[i], alpha);
        r.value += inv * v;
        r.d_score += inv * d;
        r.d_tau[i] = -inv * d;
    }
    return r;
}

ScalarWithGrad softrank(std::span<const double> row, std::size_t mate, double gamma,
                        bool exclude_self) {
    ScalarWithGrad out;
    out.grad.assign(row.size(), 0.0);
    const double s_ii = row[mate];
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (exclude_self && j == mate) continue;
        if (j == mate) {
            out.value += 0.5; // sigma(0); constant in s_ii
            continue;
        }
        const double s = sharp_sigmoid(row[j] - s_ii, gamma);
        const double d = gamma * s * (1.0 - s);
        out.value += s;
        out.grad[j] += d;
        out.grad[mate] -= d;
    }
    return out;
}

std::pair<double, double> r_id(double softrank_value, double beta) {
    const double s = sharp_sigmoid(1.0 - softrank_value, beta);
    return {s, -beta * s * (1.0 - s)};
}

ScalarWithGrad l_idl(const BatchPartition& part, const LossHyperparams& hp) {
    if (part.mated_probes.empty()) throw EmptyMatedSetError("no mated probes in batch");
    const std::size_t ng = part.n_gallery();
    ScalarWithGrad out;
    out.grad.assign(part.scores.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(part.mated_probes.size());
    for (const auto& [p, g] : part.mated_probes) {
        const double s_ig = part.score(p, g);
        if (part.non_mated_probes.empty())
            throw EmptyThresholdSetError("no non-mated probes in batch");
        // unsorted threshold set; the mean is order-independent and the raw
        // ordering keeps the tau gradient mapping exact
        std::vector<double> raw;
        raw.reserve(part.non_mated_probes.size());
        for (std::size_t np : part.non_mated_probes) raw.push_back(part.score(np, g));
        RdetResult det = r_det(s_ig, raw, hp.alpha);

        std::span<const double> row(&part.scores[p * ng], ng);
        ScalarWithGrad sr = softrank(row, g, hp.gamma, hp.softrank_exclude_self);
        auto [id_v, id_d] = r_id(sr.value, hp.beta);

        out.value -= inv * det.value * id_v;

        // chain: d(-Rdet*Rid)/ds
        const double c_det = -inv * id_v;  // multiplies dRdet/d*
        const double c_id = -inv * det.value * id_d; // multiplies dsoftrank/d*
        out.grad[p * ng + g] += c_det * det.d_score;
        for (std::size_t j = 0; j < ng; ++j)
            out.grad[p * ng + j] += c_id * sr.grad[j];
        for (std::size_t k = 0; k < raw.size(); ++k)
            out.grad[part.non_mated_probes[k] * ng + g] += c_det * det.d_tau[k];
    }
    return out;
}

ScalarWithGrad l_rtm(std::span<const double> non_mated_scores) {
    if (non_mated_scores.empty()) throw EmptyThresholdSetError("l_rtm: empty score set");
    const double m = *std::max_element(non_mated_scores.begin(), non_mated_scores.end());
    double z = 0.0, acc = 0.0;
    for (double s : non_mated_scores) {
        const double w = std::exp(s - m);
        z += w;
        acc += w * s;
    }
    ScalarWithGrad out;
    out.value = acc / z;
    out.grad.resize(non_mated_scores.size());
    for (std::size_t i = 0; i < non_mated_scores.size(); ++i) {
        const double w = std::exp(non_mated_scores[i] - m) / z;
        out.grad[i] = w * (1.0 + non_mated_scores[i] - out.value);
    }
    return out;
}

ScalarWithGrad l_open(const BatchPartition& part, const LossHyperparams& hp) {
    ScalarWithGrad out = l_idl(part, hp);
    if (hp.lambda == 0.0) return out;
    const std::size_t ng = part.n_gallery();
    std::vector<double> pooled;
    pooled.reserve(part.non_mated_probes.size() * ng);
    for (std::size_t p : part.non_mated_probes)
        for (std::size_t g = 0; g < ng; ++g) pooled.push_back(part.score(p, g));
    ScalarWithGrad rtm = l_rtm(pooled);
    out.value += hp.lambda * rtm.value;
    std::size_t k = 0;
    for (std::size_t p : part.non_mated_probes)
        for (std::size_t g = 0; g < ng; ++g)
            out.grad[p * ng + g] += hp.lambda * rtm.grad[k++];
    return out;
}

BatchPartition partition_batch(const std::vector<std::string>& subject_ids,
                               const std::vector<std::size_t>& exemplar_counts,
                               double mated_fraction, std::uint64_t seed) {
    const std::size_t n = subject_ids.size();
    if (n < 2) throw PartitionError("need at least two subjects");
    if (exemplar_counts.size() != n) throw ShapeError("counts/ids length mismatch");
    if (mated_fraction < 0.0 || mated_fraction > 1.0)
        throw PartitionError("mated fraction out of [0,1]");

    SubstreamRng rng(seed, {0x7061727469ULL}); // "parti"
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.next_below(i + 1)]);

    const auto k = static_cast<std::size_t>(std::llround(mated_fraction * static_cast<double>(n)));
    std::vector<bool> mated(n, false);
    std::size_t chosen = 0;
    // walk the shuffled order, skipping single-exemplar subjects (they cannot
    // contribute to both gallery and probes)
    for (std::size_t idx : order) {
        if (chosen == k) break;
        if (exemplar_counts[idx] >= 2) {
            mated[idx] = true;
            ++chosen;
        }
    }
    if (chosen < k) throw PartitionError("not enough multi-exemplar subjects for mated set");

    BatchPartition part;
    part.subject_ids = subject_ids;
    for (std::size_t s = 0; s < n; ++s) {
        if (mated[s]) {
            const std::size_t ge = rng.substream(s).next_below(exemplar_counts[s]);
            const std::size_t col = part.gallery.size();
            part.gallery.push_back({s, ge});
            for (std::size_t e = 0; e < exemplar_counts[s]; ++e) {
                if (e == ge) continue;
                part.mated_probes.emplace_back(part.probes.size(), col);
                part.probes.push_back({s, e});
            }
        } else {
            for (std::size_t e = 0; e < exemplar_counts[s]; ++e) {
                part.non_mated_probes.push_back(part.probes.size());
                part.probes.push_back({s, e});
            }
        }
    }
    part.scores.assign(part.n_probes() * part.n_gallery(), missing_value());
    return part;
}

void fill_scores_from_embeddings(
    BatchPartition& part, const std::vector<std::vector<std::vector<double>>>& embeddings) {
    const std::size_t ng = part.n_gallery();
    for (std::size_t p = 0; p < part.n_probes(); ++p) {
        const auto& pe = embeddings[part.probes[p].subject][part.probes[p].exemplar];
        std::vector<double> pn = pe;
        double na = std::sqrt(std::inner_product(pn.begin(), pn.end(), pn.begin(), 0.0));
        for (std::size_t g = 0; g < ng; ++g) {
            const auto& ge = embeddings[part.gallery[g].subject][part.gallery[g].exemplar];
            double nb = std::sqrt(std::inner_product(ge.begin(), ge.end(), ge.begin(), 0.0));
            double dot = std::inner_product(pe.begin(), pe.end(), ge.begin(), 0.0);
            part.score(p, g) = dot / (na * nb);
        }
    }
}

void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b,
                            double upstream, std::span<double> grad_a,
                            std::span<double> grad_b) {
    if (a.size() != b.size()) throw DimensionError("cosine grad: length mismatch");
    double na2 = 0.0, nb2 = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na2 += a[i] * a[i];
        nb2 += b[i] * b[i];
        dot += a[i] * b[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double c = dot / (na * nb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        grad_a[i] += upstream * (b[i] / (na * nb) - c * a[i] / na2);
        grad_b[i] += upstream * (a[i] / (na * nb) - c * b[i] / nb2);
    }
}

TripletLossResult range_triplet_loss(const std::vector<EmbeddingTriplet>& triplets,
                                     double margin) {
    if (margin <= 0) throw ConfigError("margin must be positive");
    if (triplets.empty()) throw ConfigError("no triplets");
    for (const auto& t : triplets) {
        if (t.anchor_range != RangeClass::close)
            throw RangeClassViolation("anchor must be close-range");
        if (t.positive_range != RangeClass::long_range ||
            t.negative_range != RangeClass::long_range)
            throw RangeClassViolation("positive/negative must be long-range");
    }
    TripletLossResult out;
    out.grads.resize(triplets.size());
    const double inv = 1.0 / static_cast<double>(triplets.size());
    auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
        double nx = 0, ny = 0, d = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            nx += x[i] * x[i];
            ny += y[i] * y[i];
            d += x[i] * y[i];
        }
        return d / std::sqrt(nx * ny);
    };
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        auto& g = out.grads[i];
        g[0].assign(t.anchor.size(), 0.0);
        g[1].assign(t.positive.size(), 0.0);
        g[2].assign(t.negative.size(), 0.0);
        const double sp = cosine(t.anchor, t.positive);
        const double sn = cosine(t.anchor, t.negative);
        const double h = margin - sp + sn;
        if (h > 0) {
            out.value += inv * h;
            accumulate_cosine_grad(t.anchor, t.positive, -inv, g[0], g[1]);
            accumulate_cosine_grad(t.anchor, t.negative, inv, g[0], g[2]);
        }
    }
    return out;
}

// ---- feature-map losses ------------------------------------------------------

FeatureMap softmax_channels(const FeatureMap& f) {
    FeatureMap out = f;
    for (std::size_t y = 0; y < f.height; ++y) {
        for (std::size_t x = 0; x < f.width; ++x) {
            double m = -1e300;
            for (std::size_t c = 0; c < f.channels; ++c) m = std::max(m, f.at(c, y, x));
            double z = 0.0;
            for (std::size_t c = 0; c < f.channels; ++c) z += std::exp(f.at(c, y, x) - m);
            for (std::size_t c = 0; c < f.channels; ++c)
                out.at(c, y, x) = std::exp(f.at(c, y, x) - m) / z;
        }
    }
    return out;
}

ScalarWithGrad l_rec(const FeatureMap& f, const FeatureMap& f_hat) {
    if (f.channels != f_hat.channels || f.height != f_hat.height || f.width != f_hat.width)
        throw ShapeError("l_rec: shape mismatch");
    double ss = 0.0;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        const double d = f.data[i] - f_hat.data[i];
        ss += d * d;
    }
    ScalarWithGrad out;
    out.value = std::sqrt(ss);
    out.grad.assign(f.data.size(), 0.0);
    if (out.value > 0.0)
        for (std::size_t i = 0; i < f.data.size(); ++i)
            out.grad[i] = (f.data[i] - f_hat.data[i]) / out.value;
    return out;
}

namespace {
constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }
} // namespace

ScalarWithGrad l_smo(const FeatureMap& f) {
    if (f.height < 3 || f.width < 3) throw ShapeError("l_smo: map smaller than 3x3");
    ScalarWithGrad out;
    out.grad.assign(f.data.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(f.size());
    const auto H = static_cast<std::int64_t>(f.height);
    const auto W = static_cast<std::int64_t>(f.width);
    for (std::size_t c = 0; c < f.channels; ++c) {
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                double gx = 0.0, gy = 0.0;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const std::int64_t yi = y + ky - 1, xi = x + kx - 1;
                        if (yi < 0 || yi >= H || xi < 0 || xi >= W) continue; // zero pad
                        const double v = f.at(c, static_cast<std::size_t>(yi),
                                              static_cast<std::size_t>(xi));
                        gx += kSobelX[ky][kx] * v;
                        gy += kSobelY[ky][kx] * v;
                    }
                }
                out.value += inv * (std::abs(gx) + std::abs(gy));
                const double sx = inv * sgn(gx), sy = inv * sgn(gy);
                if (sx != 0.0 || sy != 0.0) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const std::int64_t yi = y + ky - 1, xi = x + kx - 1;
                            if (yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
                            const std::size_t idx =
                                (c * f.height + static_cast<std::size_t>(yi)) * f.width +
                                static_cast<std::size_t>(xi);
                            out.grad[idx] += sx * kSobelX[ky][kx] + sy * kSobelY[ky][kx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

ScalarWithGrad l_div(const FeatureMap& f) {
    const std::size_t C = f.channels;
    std::vector<double> mass(C, 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < f.height; ++y)
            for (std::size_t x = 0; x < f.width; ++x) {
                const double v = f.at(c, y, x);
                if (v < 0) throw DegenerateActivationError("negative activation");
                mass[c] += v;
            }
        total += mass[c];
    }
    if (total <= 0.0) throw DegenerateActivationError("zero total activation");
    double entropy_sum = 0.0; // sum p log p
    for (std::size_t c = 0; c < C; ++c) {
        const double p = mass[c] / total;
        if (p > 0) entropy_sum += p * std::log(p);
    }
    ScalarWithGrad out;
    out.value = std::log(static_cast<double>(C)) + entropy_sum;
    out.grad.assign(f.data.size(), 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const double p = mass[c] / total;
        const double dc = (std::log(std::max(p, 1e-300)) - entropy_sum) / total;
        for (std::size_t y = 0; y < f.height; ++y)
            for (std::size_t x = 0; x < f.width; ++x)
                out.grad[(c * f.height + y) * f.width + x] = dc;
    }
    return out;
}

} // namespace biotk
