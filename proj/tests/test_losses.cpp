#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "biotk/losses.hpp"
#include "biotk/rng.hpp"

using namespace biotk;

namespace {

constexpr double kH = 1e-5;
constexpr double kRelTol = 1e-4;

// Central finite difference with a Richardson consistency guard: coordinates
// where the two step sizes disagree sit next to a kink and are skipped.
void fd_check(std::vector<double>& x, const std::function<double()>& f,
              const std::vector<double>& analytic, std::size_t* checked = nullptr) {
    REQUIRE(analytic.size() == x.size());
    std::size_t n_checked = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        auto central = [&](double h) {
            x[i] = x0 + h;
            const double fp = f();
            x[i] = x0 - h;
            const double fm = f();
            x[i] = x0;
            return (fp - fm) / (2 * h);
        };
        const double fd = central(kH);
        const double fd2 = central(2 * kH);
        const double scale = std::max({1.0, std::abs(fd), std::abs(fd2)});
        if (std::abs(fd - fd2) > 1e-3 * scale) continue; // kink nearby
        ++n_checked;
        CHECK(std::abs(analytic[i] - fd) <= kRelTol * std::max(1.0, std::abs(fd)));
    }
    if (checked) *checked = n_checked;
}

BatchPartition random_partition(std::uint64_t seed, std::size_t n_subjects = 6,
                                std::size_t exemplars = 3) {
    std::vector<std::string> ids;
    std::vector<std::size_t> counts;
    for (std::size_t s = 0; s < n_subjects; ++s) {
        ids.push_back("s" + std::to_string(s));
        counts.push_back(exemplars);
    }
    auto part = partition_batch(ids, counts, 0.5, seed);
    SubstreamRng rng(seed, {77});
    for (double& v : part.scores) v = 2.0 * rng.next_double() - 1.0;
    part.validate();
    return part;
}

FeatureMap random_map(std::uint64_t seed, std::size_t c = 3, std::size_t h = 5,
                      std::size_t w = 4) {
    FeatureMap f;
    f.channels = c;
    f.height = h;
    f.width = w;
    f.data.resize(f.size());
    SubstreamRng rng(seed);
    for (double& v : f.data) v = rng.next_gaussian();
    return f;
}

} // namespace

TEST_CASE("sharp sigmoid matches naive formula and is stable") {
    for (double x : {-40.0, -1.0, 0.0, 0.3, 40.0}) {
        const double ref = 1.0 / (1.0 + std::exp(-16.0 * x));
        CHECK(sharp_sigmoid(x, 16.0) == doctest::Approx(ref));
    }
    CHECK(std::isfinite(sharp_sigmoid(-1e6, 16.0)));
    CHECK(sharp_sigmoid(-1e6, 16.0) == 0.0);
}

TEST_CASE("r_det is the mean sigmoid over the threshold set") {
    const std::vector<double> thresholds{-0.2, 0.1, 0.4};
    const double s = 0.25, alpha = 16.0;
    auto r = r_det(s, thresholds, alpha);
    double ref = 0.0;
    for (double t : thresholds) ref += sharp_sigmoid(s - t, alpha);
    ref /= 3.0;
    CHECK(r.value == doctest::Approx(ref));
    CHECK_THROWS_AS((void)r_det(s, std::vector<double>{}, alpha),
                    EmptyThresholdSetError);
}

TEST_CASE("detection thresholds come from non-mated rows of one column") {
    auto part = random_partition(4);
    for (std::size_t g = 0; g < part.n_gallery(); ++g) {
        auto t = detection_thresholds(part, g);
        REQUIRE(t.size() == part.non_mated_probes.size());
        CHECK(std::is_sorted(t.begin(), t.end()));
        double sum = 0;
        for (double v : t) sum += v;
        double ref = 0;
        for (std::size_t p : part.non_mated_probes) ref += part.score(p, g);
        CHECK(sum == doctest::Approx(ref));
    }
}

TEST_CASE("softrank value matches direct sum; self term is one half") {
    std::vector<double> row{0.9, 0.2, 0.5, 0.7};
    const double gamma = 16.0;
    auto sr = softrank(row, 0, gamma, false);
    double ref = 0.0;
    for (double v : row) ref += sharp_sigmoid(v - row[0], gamma);
    CHECK(sr.value == doctest::Approx(ref));
    auto sr_ex = softrank(row, 0, gamma, true);
    CHECK(sr.value == doctest::Approx(sr_ex.value + 0.5));
    // best match: rank approaches 1 with self, 0.5 without... the self term
    // contributes exactly sigma(0) = 0.5 with zero gradient
    fd_check(row, [&] { return softrank(row, 0, gamma, false).value; }, sr.grad);
}

TEST_CASE("l_rtm equals the softmax-weighted mean and its gradient checks out") {
    SubstreamRng rng(11);
    std::vector<double> s(9);
    for (double& v : s) v = 3.0 * rng.next_gaussian();
    auto r = l_rtm(s);
    double zmax = *std::max_element(s.begin(), s.end());
    double num = 0, den = 0;
    for (double v : s) {
        const double w = std::exp(v - zmax);
        num += w * v;
        den += w;
    }
    CHECK(r.value == doctest::Approx(num / den));
    fd_check(s, [&] { return l_rtm(s).value; }, r.grad);
    CHECK_THROWS_AS((void)l_rtm(std::vector<double>{}), EmptyThresholdSetError);
}

TEST_CASE("l_idl value matches a hand-rolled recomputation") {
    auto part = random_partition(21);
    LossHyperparams hp;
    auto got = l_idl(part, hp);

    double acc = 0.0;
    for (const auto& [p, g] : part.mated_probes) {
        const auto rd = r_det(part.score(p, g), detection_thresholds(part, g), hp.alpha);
        std::vector<double> row(part.n_gallery());
        for (std::size_t j = 0; j < part.n_gallery(); ++j) row[j] = part.score(p, j);
        const auto sr = softrank(row, g, hp.gamma, hp.softrank_exclude_self);
        acc += rd.value * r_id(sr.value, hp.beta).first;
    }
    CHECK(got.value == doctest::Approx(-acc / static_cast<double>(part.mated_probes.size())));
}

TEST_CASE("l_idl and l_open gradients match finite differences") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto part = random_partition(seed);
        LossHyperparams hp;
        SUBCASE("l_idl") {
            auto g = l_idl(part, hp);
            fd_check(part.scores, [&] { return l_idl(part, hp).value; }, g.grad);
        }
        SUBCASE("l_open") {
            auto g = l_open(part, hp);
            fd_check(part.scores, [&] { return l_open(part, hp).value; }, g.grad);
        }
    }
}

TEST_CASE("l_idl requires mated pairs and non-mated thresholds") {
    auto part = random_partition(5);
    LossHyperparams hp;
    auto no_mates = part;
    no_mates.mated_probes.clear();
    CHECK_THROWS_AS((void)l_idl(no_mates, hp), EmptyMatedSetError);
}

TEST_CASE("partition respects the mated fraction and never drops subjects") {
    std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g", "h"};
    std::vector<std::size_t> counts{3, 3, 3, 3, 3, 3, 3, 3};
    auto part = partition_batch(ids, counts, 0.5, 42);
    CHECK(part.gallery.size() == 4);
    // every mated subject keeps its remaining exemplars as probes
    CHECK(part.mated_probes.size() == 4 * 2);
    CHECK(part.non_mated_probes.size() == 4 * 3);
    std::vector<double> dummy(part.n_probes() * part.n_gallery(), 0.0);
    part.scores = dummy;
    part.validate();

    // reproducible
    auto again = partition_batch(ids, counts, 0.5, 42);
    CHECK(again.gallery.size() == part.gallery.size());
    for (std::size_t i = 0; i < part.gallery.size(); ++i) {
        CHECK(again.gallery[i].subject == part.gallery[i].subject);
        CHECK(again.gallery[i].exemplar == part.gallery[i].exemplar);
    }

    // single-exemplar subjects cannot be mated
    std::vector<std::size_t> ones(8, 1);
    CHECK_THROWS_AS((void)partition_batch(ids, ones, 0.5, 0), PartitionError);
    auto all_nonmated = partition_batch(ids, ones, 0.0, 0);
    CHECK(all_nonmated.mated_probes.empty());
}

TEST_CASE("fill_scores_from_embeddings produces pairwise cosines") {
    std::vector<std::string> ids{"a", "b", "c", "d"};
    std::vector<std::size_t> counts{2, 2, 2, 2};
    auto part = partition_batch(ids, counts, 0.5, 9);
    std::vector<std::vector<std::vector<double>>> emb(4);
    SubstreamRng rng(13);
    for (auto& subj : emb) {
        subj.resize(2);
        for (auto& v : subj) {
            v.resize(5);
            for (double& x : v) x = rng.next_gaussian();
        }
    }
    fill_scores_from_embeddings(part, emb);
    for (std::size_t p = 0; p < part.n_probes(); ++p)
        for (std::size_t g = 0; g < part.n_gallery(); ++g) {
            const auto& pv = emb[part.probes[p].subject][part.probes[p].exemplar];
            const auto& gv = emb[part.gallery[g].subject][part.gallery[g].exemplar];
            CHECK(part.score(p, g) == doctest::Approx(cosine_similarity(pv, gv)));
        }
}

TEST_CASE("cosine gradient accumulation matches finite differences") {
    SubstreamRng rng(31);
    std::vector<double> a(6), b(6);
    for (double& x : a) x = rng.next_gaussian();
    for (double& x : b) x = rng.next_gaussian();
    const double upstream = 1.7;
    std::vector<double> ga(6, 0.0), gb(6, 0.0);
    accumulate_cosine_grad(a, b, upstream, ga, gb);
    fd_check(a, [&] { return upstream * cosine_similarity(a, b); }, ga);
    fd_check(b, [&] { return upstream * cosine_similarity(a, b); }, gb);
}

TEST_CASE("range triplet loss: hinge, range checks, gradients") {
    SubstreamRng rng(17);
    auto rand_vec = [&](std::size_t d) {
        std::vector<double> v(d);
        for (double& x : v) x = rng.next_gaussian();
        return v;
    };
    EmbeddingTriplet t;
    t.anchor = rand_vec(5);
    t.positive = rand_vec(5);
    t.negative = rand_vec(5);

    // a large margin keeps the hinge active
    auto res = range_triplet_loss({t}, 1.9);
    const double sap = cosine_similarity(t.anchor, t.positive);
    const double san = cosine_similarity(t.anchor, t.negative);
    CHECK(res.value == doctest::Approx(std::max(0.0, 1.9 - sap + san)));

    auto f = [&] { return range_triplet_loss({t}, 1.9).value; };
    fd_check(t.anchor, f, res.grads[0][0]);
    fd_check(t.positive, f, res.grads[0][1]);
    fd_check(t.negative, f, res.grads[0][2]);

    // inactive hinge: zero loss, zero gradient
    EmbeddingTriplet easy = t;
    easy.positive = easy.anchor;
    easy.negative = easy.anchor;
    for (double& x : easy.negative) x = -x;
    auto res2 = range_triplet_loss({easy}, 0.3);
    CHECK(res2.value == 0.0);
    for (double g : res2.grads[0][2]) CHECK(g == 0.0);

    // anchors must be close range, positives and negatives long range
    EmbeddingTriplet bad = t;
    bad.anchor_range = RangeClass::long_range;
    CHECK_THROWS_AS((void)range_triplet_loss({bad}, 0.3), RangeClassViolation);
    bad = t;
    bad.positive_range = RangeClass::close;
    CHECK_THROWS_AS((void)range_triplet_loss({bad}, 0.3), RangeClassViolation);
}

TEST_CASE("softmax_channels yields a per-pixel distribution") {
    auto f = random_map(23);
    auto p = softmax_channels(f);
    for (std::size_t y = 0; y < f.height; ++y)
        for (std::size_t x = 0; x < f.width; ++x) {
            double s = 0;
            for (std::size_t c = 0; c < f.channels; ++c) {
                CHECK(p.at(c, y, x) > 0.0);
                s += p.at(c, y, x);
            }
            CHECK(s == doctest::Approx(1.0));
        }
}

TEST_CASE("l_rec is the euclidean norm of the difference") {
    auto f = random_map(29);
    auto f_hat = random_map(31);
    auto r = l_rec(f, f_hat);
    double s = 0;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        const double d = f.data[i] - f_hat.data[i];
        s += d * d;
    }
    CHECK(r.value == doctest::Approx(std::sqrt(s)));
    fd_check(f.data, [&] { return l_rec(f, f_hat).value; }, r.grad);

    auto wrong = random_map(29, 2, 5, 4);
    CHECK_THROWS_AS((void)l_rec(f, wrong), ShapeError);
}

TEST_CASE("l_smo matches a naive zero-padded sobel sum") {
    auto f = random_map(37, 2, 6, 7);
    auto r = l_smo(f);

    const int sx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const int sy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    auto sample = [&](std::size_t c, std::int64_t y, std::int64_t x) {
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(f.height) ||
            x >= static_cast<std::int64_t>(f.width))
            return 0.0;
        return f.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    double accx = 0, accy = 0;
    for (std::size_t c = 0; c < f.channels; ++c)
        for (std::int64_t y = 0; y < static_cast<std::int64_t>(f.height); ++y)
            for (std::int64_t x = 0; x < static_cast<std::int64_t>(f.width); ++x) {
                double gx = 0, gy = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        gx += sx[dy + 1][dx + 1] * sample(c, y + dy, x + dx);
                        gy += sy[dy + 1][dx + 1] * sample(c, y + dy, x + dx);
                    }
                accx += std::abs(gx);
                accy += std::abs(gy);
            }
    const double n = static_cast<double>(f.size());
    CHECK(r.value == doctest::Approx(accx / n + accy / n));

    std::size_t checked = 0;
    fd_check(f.data, [&] { return l_smo(f).value; }, r.grad, &checked);
    CHECK(checked > f.data.size() / 2); // the kink guard should fire rarely
}

TEST_CASE("l_div vanishes on uniform channel mass and is maximal when peaked") {
    FeatureMap f;
    f.channels = 4;
    f.height = 2;
    f.width = 2;
    f.data.assign(f.size(), 0.25);
    auto uniform = l_div(f);
    CHECK(uniform.value == doctest::Approx(0.0));

    // all mass on one channel: log C + 1*log 1 = log C
    FeatureMap g = f;
    g.data.assign(g.size(), 0.0);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) g.at(0, y, x) = 1.0;
    CHECK(l_div(g).value == doctest::Approx(std::log(4.0)));

    auto h = softmax_channels(random_map(41));
    auto r = l_div(h);
    CHECK(r.value >= 0.0);
    fd_check(h.data, [&] { return l_div(h).value; }, r.grad);
}

TEST_CASE("hyperparameter validation") {
    LossHyperparams hp;
    CHECK_NOTHROW(hp.validate());
    hp.alpha = 0.0;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
    hp = LossHyperparams{};
    hp.mated_fraction = 1.5;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
    hp = LossHyperparams{};
    hp.lambda = -0.1;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
}
