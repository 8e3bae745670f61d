#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "biotk/fusion.hpp"
#include "biotk/rng.hpp"

using namespace biotk;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Normalizer test_normalizer() {
    std::array<std::vector<double>, 3> cal;
    cal[0] = {0.0, 1.0, 2.0, 3.0};
    cal[1] = {-1.0, 1.0};
    cal[2] = {10.0, 20.0, 30.0};
    return fit_normalizer(cal, NormKind::zscore);
}

ScoreMatrix random_scores(std::uint64_t seed, std::size_t rows,
                          const char* probe_id = "p") {
    ScoreMatrix S;
    S.probe_id = probe_id;
    SubstreamRng rng(seed);
    for (std::size_t g = 0; g < rows; ++g) {
        S.gallery_ids.push_back("g" + std::to_string(g));
        for (int m = 0; m < 3; ++m) S.scores.push_back(rng.next_gaussian());
    }
    return S;
}

} // namespace

TEST_CASE("z-score normalizer uses population statistics") {
    auto n = test_normalizer();
    // face calibration 0,1,2,3: mean 1.5, population std sqrt(1.25)
    CHECK(n.apply(Modality::face, 1.5) == doctest::Approx(0.0));
    CHECK(n.apply(Modality::face, 1.5 + std::sqrt(1.25)) == doctest::Approx(1.0));
    CHECK(n.apply(Modality::gait, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("min-max normalizer maps the calibration range to [0,1]") {
    std::array<std::vector<double>, 3> cal;
    cal[0] = {2.0, 4.0, 6.0};
    cal[1] = {0.0, 1.0};
    cal[2] = {0.0, 1.0};
    auto n = fit_normalizer(cal, NormKind::minmax);
    CHECK(n.apply(Modality::face, 2.0) == doctest::Approx(0.0));
    CHECK(n.apply(Modality::face, 6.0) == doctest::Approx(1.0));
    CHECK(n.apply(Modality::face, 4.0) == doctest::Approx(0.5));
}

TEST_CASE("normalizer rejects degenerate or unfitted modalities") {
    std::array<std::vector<double>, 3> cal;
    cal[0] = {1.0, 1.0, 1.0}; // zero variance
    cal[1] = {0.0, 1.0};
    cal[2] = {0.0, 1.0};
    CHECK_THROWS_AS((void)fit_normalizer(cal, NormKind::zscore), NormalizationError);

    cal[0] = {0.5}; // too few
    CHECK_THROWS_AS((void)fit_normalizer(cal, NormKind::zscore), NormalizationError);

    // missing entries are skipped; an empty modality stays unfitted
    cal[0].clear();
    cal[0].push_back(missing_value());
    auto n = fit_normalizer(cal, NormKind::zscore);
    CHECK_THROWS_AS((void)n.apply(Modality::face, 0.0), NormalizationError);
    CHECK_NOTHROW((void)n.apply(Modality::gait, 0.0));
}

TEST_CASE("gate weights per expert count") {
    auto m1 = make_default_fusion_model(1);
    CHECK(m1.gate_weights({0.3, 0.5, 0.7}) == std::vector<double>{1.0});

    auto m2 = make_default_fusion_model(2);
    auto g2 = m2.gate_weights({0.3, 0.5, 0.7});
    CHECK(g2[0] == doctest::Approx(0.3)); // face quality drives the pair
    CHECK(g2[1] == doctest::Approx(0.7));

    auto m3 = make_default_fusion_model(3);
    m3.gate_b = {0.1, -0.2, 0.3};
    m3.gate_w[0] = {1.0, 0.0, 0.0};
    auto g3 = m3.gate_weights({0.4, 0.5, 0.6});
    double sum = 0;
    for (double v : g3) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    // softmax of logits {0.5, -0.2, 0.3}
    const double z = std::exp(0.5) + std::exp(-0.2) + std::exp(0.3);
    CHECK(g3[0] == doctest::Approx(std::exp(0.5) / z));
}

TEST_CASE("moe_fuse matches a hand computation on full rows") {
    auto model = make_default_fusion_model(2);
    model.norm = test_normalizer();
    model.experts[0].weights = {0.5, 0.3, 0.2};
    model.experts[0].bias = 0.1;
    model.experts[1].weights = {0.2, 0.2, 0.6};
    model.experts[1].bias = -0.1;

    ScoreMatrix S;
    S.probe_id = "p";
    S.gallery_ids = {"g0"};
    S.scores = {1.0, 0.5, 25.0};
    const std::array<double, 3> q{0.8, 0.5, 0.5};
    auto fused = moe_fuse(S, q, model);
    const double nf = model.norm.apply(Modality::face, 1.0);
    const double ng = model.norm.apply(Modality::gait, 0.5);
    const double nb = model.norm.apply(Modality::body, 25.0);
    const double e0 = 0.1 + 0.5 * nf + 0.3 * ng + 0.2 * nb;
    const double e1 = -0.1 + 0.2 * nf + 0.2 * ng + 0.6 * nb;
    CHECK(fused[0] == doctest::Approx(0.8 * e0 + 0.2 * e1));
}

TEST_CASE("missing modalities renormalize the expert weights") {
    auto model = make_default_fusion_model(1);
    model.norm = test_normalizer();
    model.experts[0].weights = {0.5, 0.3, 0.2};
    model.experts[0].bias = 0.0;

    ScoreMatrix S;
    S.probe_id = "p";
    S.gallery_ids = {"g0"};
    S.scores = {1.0, missing_value(), 25.0};
    auto fused = moe_fuse(S, {1, 1, 1}, model);
    const double nf = model.norm.apply(Modality::face, 1.0);
    const double nb = model.norm.apply(Modality::body, 25.0);
    // scale = (0.5+0.3+0.2)/(0.5+0.2)
    CHECK(fused[0] == doctest::Approx((1.0 / 0.7) * (0.5 * nf + 0.2 * nb)));

    // an all-missing row is a protocol violation
    ScoreMatrix bad = S;
    bad.scores = {missing_value(), missing_value(), missing_value()};
    CHECK_THROWS_AS((void)moe_fuse(bad, {1, 1, 1}, model), MissingScoreError);
}

TEST_CASE("baseline fusion is the mean of present normalized scores") {
    auto norm = test_normalizer();
    ScoreMatrix S;
    S.probe_id = "p";
    S.gallery_ids = {"g0", "g1"};
    S.scores = {1.0, 0.5, 25.0, 2.0, missing_value(), 15.0};
    auto fused = baseline_fuse(S, norm);
    CHECK(fused[0] == doctest::Approx((norm.apply(Modality::face, 1.0) +
                                       norm.apply(Modality::gait, 0.5) +
                                       norm.apply(Modality::body, 25.0)) /
                                      3.0));
    CHECK(fused[1] == doctest::Approx((norm.apply(Modality::face, 2.0) +
                                       norm.apply(Modality::body, 15.0)) /
                                      2.0));
}

TEST_CASE("score triplet loss values and finite-difference gradient") {
    std::vector<double> fused{0.4, -0.2, 0.6};
    auto r = score_triplet_loss(fused, 2, 0.8);
    // non-match terms: relu(0.4) and relu(-0.2) over 2; match term relu(0.8-0.6)
    CHECK(r.value == doctest::Approx(0.4 / 2 + (0.8 - 0.6)));
    CHECK(r.grad[0] == doctest::Approx(0.5));
    CHECK(r.grad[1] == doctest::Approx(0.0));
    CHECK(r.grad[2] == doctest::Approx(-1.0));

    // without a mate only the false-alarm term remains
    auto r2 = score_triplet_loss(fused, std::nullopt, 0.8);
    CHECK(r2.value == doctest::Approx((0.4 + 0.6) / 3.0));

    CHECK_THROWS_AS((void)score_triplet_loss(fused, 2, 0.0), ConfigError);
}

TEST_CASE("fusion parameter gradient matches finite differences") {
    for (std::size_t n_experts : {2UL, 3UL}) {
        auto model = make_default_fusion_model(n_experts);
        model.norm = test_normalizer();
        SubstreamRng rng(5);
        for (auto& e : model.experts) {
            for (double& w : e.weights) w = 0.3 + 0.1 * rng.next_gaussian();
            e.bias = 0.05 * rng.next_gaussian();
        }
        for (auto& gw : model.gate_w)
            for (double& w : gw) w = 0.2 * rng.next_gaussian();
        for (double& b : model.gate_b) b = 0.1 * rng.next_gaussian();

        std::vector<FusionTrainingProbe> probes;
        for (int i = 0; i < 4; ++i) {
            FusionTrainingProbe p;
            p.scores = random_scores(100 + i, 5);
            // one modality gap to exercise the rescaling path
            if (i == 1) p.scores.at(2, Modality::gait) = missing_value();
            p.quality = {0.3 + 0.1 * i, 0.5, 0.8 - 0.1 * i};
            if (i % 2 == 0) p.mate_index = static_cast<std::size_t>(i) % 5;
            probes.push_back(std::move(p));
        }

        const double margin = 0.9;
        auto grad = fusion_loss_and_grad(model, probes, margin);
        const double h = 1e-6;
        auto loss_at = [&](FusionModel& m) {
            return fusion_loss_and_grad(m, probes, margin).loss;
        };
        auto fd = [&](double& param) {
            const double p0 = param;
            param = p0 + h;
            const double fp = loss_at(model);
            param = p0 - h;
            const double fm = loss_at(model);
            param = p0;
            return (fp - fm) / (2 * h);
        };
        for (std::size_t z = 0; z < n_experts; ++z) {
            for (int m = 0; m < 3; ++m) {
                const double want = fd(model.experts[z].weights[m]);
                CHECK(std::abs(grad.experts[z].weights[m] - want) <=
                      1e-4 * std::max(1.0, std::abs(want)));
            }
            const double wb = fd(model.experts[z].bias);
            CHECK(std::abs(grad.experts[z].bias - wb) <= 1e-4 * std::max(1.0, std::abs(wb)));
            if (n_experts > 2) {
                for (int m = 0; m < 3; ++m) {
                    const double want = fd(model.gate_w[z][m]);
                    CHECK(std::abs(grad.gate_w[z][m] - want) <=
                          1e-4 * std::max(1.0, std::abs(want)));
                }
                const double want = fd(model.gate_b[z]);
                CHECK(std::abs(grad.gate_b[z] - want) <= 1e-4 * std::max(1.0, std::abs(want)));
            }
        }
    }
}

TEST_CASE("training lowers the triplet loss") {
    auto model = make_default_fusion_model(2);
    model.norm = test_normalizer();
    std::vector<FusionTrainingProbe> probes;
    for (int i = 0; i < 6; ++i) {
        FusionTrainingProbe p;
        p.scores = random_scores(200 + i, 6);
        p.quality = {0.6, 0.4, 0.5};
        p.mate_index = static_cast<std::size_t>(i % 6);
        // give the mate a visibly higher raw face score
        p.scores.at(*p.mate_index, Modality::face) += 2.0;
        probes.push_back(std::move(p));
    }
    auto report = train_fusion(model, probes, 60, 0.05, 0.5);
    REQUIRE(report.epoch_loss.size() == 60);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());

    std::vector<FusionTrainingProbe> unmated;
    unmated.push_back(FusionTrainingProbe{random_scores(1, 3), {1, 1, 1}, std::nullopt});
    auto m2 = make_default_fusion_model(2);
    m2.norm = test_normalizer();
    CHECK_THROWS_AS((void)train_fusion(m2, unmated, 5, 0.1, 0.5), ConfigError);
}

TEST_CASE("quality estimator learns a monotone ranking") {
    std::array<std::vector<QESample>, 3> samples;
    SubstreamRng rng(7);
    for (int m = 0; m < 3; ++m) {
        for (int i = 0; i < 40; ++i) {
            const double t = static_cast<double>(i) / 39.0;
            QESample s;
            s.features = {t, 0.1 * rng.next_gaussian()};
            s.target = t;
            samples[m].push_back(std::move(s));
        }
    }
    auto qe = train_quality_estimator(samples, 300, 0.5, 11);
    const double lo = qe.weight(Modality::face, std::vector<double>{0.05, 0.0});
    const double hi = qe.weight(Modality::face, std::vector<double>{0.95, 0.0});
    CHECK(hi > lo);

    // constant targets cannot be ranked
    for (auto& s : samples[1]) s.target = 0.5;
    CHECK_THROWS_AS((void)train_quality_estimator(samples, 10, 0.5, 11),
                    RankingDegenerateError);
}

TEST_CASE("fusion model json round trip") {
    auto model = make_default_fusion_model(3, NormKind::minmax);
    model.norm = test_normalizer();
    SubstreamRng rng(19);
    for (auto& e : model.experts) {
        for (double& w : e.weights) w = rng.next_gaussian();
        e.bias = rng.next_gaussian();
    }
    for (auto& gw : model.gate_w)
        for (double& w : gw) w = rng.next_gaussian();
    for (double& b : model.gate_b) b = rng.next_gaussian();
    model.qe.weights = {std::vector<double>{0.1, 0.2}, std::vector<double>{0.3},
                        std::vector<double>{}};
    model.qe.bias = {0.5, -0.5, 0.0};

    const auto path = temp_path("biotk_fusion_model.json");
    save_fusion_model(path, model);
    auto back = load_fusion_model(path);
    REQUIRE(back.experts.size() == 3);
    for (std::size_t z = 0; z < 3; ++z) {
        CHECK(back.experts[z].bias == doctest::Approx(model.experts[z].bias));
        for (int m = 0; m < 3; ++m) {
            CHECK(back.experts[z].weights[m] == doctest::Approx(model.experts[z].weights[m]));
            CHECK(back.gate_w[z][m] == doctest::Approx(model.gate_w[z][m]));
        }
        CHECK(back.gate_b[z] == doctest::Approx(model.gate_b[z]));
    }
    CHECK(back.norm.kind == model.norm.kind);
    for (int m = 0; m < 3; ++m) {
        CHECK(back.norm.fitted[m] == model.norm.fitted[m]);
        if (model.norm.fitted[m]) {
            CHECK(back.norm.shift[m] == doctest::Approx(model.norm.shift[m]));
            CHECK(back.norm.scale[m] == doctest::Approx(model.norm.scale[m]));
        }
    }
    CHECK(back.qe.weights[0] == model.qe.weights[0]);
    CHECK(back.qe.bias[1] == doctest::Approx(-0.5));
    std::remove(path.c_str());
}
