#include "biotk/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "biotk/rng.hpp"

namespace biotk {

namespace {
constexpr double kDegenerate = 1e-12;

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
} // namespace

double Normalizer::apply(Modality m, double s) const {
    const int i = static_cast<int>(m);
    if (!fitted[i])
        throw NormalizationError(std::string("normalizer not fitted for ") + to_string(m));
    return (s - shift[i]) / scale[i];
}

Normalizer fit_normalizer(const std::array<std::vector<double>, 3>& calibration,
                          NormKind kind) {
    Normalizer n;
    n.kind = kind;
    for (Modality m : kAllModalities) {
        const int i = static_cast<int>(m);
        std::vector<double> v;
        for (double s : calibration[i])
            if (!is_missing(s)) v.push_back(s);
        if (v.empty()) continue;
        if (v.size() < 2)
            throw NormalizationError(std::string("need >= 2 calibration scores for ") +
                                     to_string(m));
        if (kind == NormKind::zscore) {
            double mean = 0.0;
            for (double s : v) mean += s;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double s : v) var += (s - mean) * (s - mean);
            var /= static_cast<double>(v.size()); // population convention
            const double sd = std::sqrt(var);
            if (sd < kDegenerate)
                throw NormalizationError(std::string("zero variance for ") + to_string(m));
            n.shift[i] = mean;
            n.scale[i] = sd;
        } else {
            const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
            if (*hi - *lo < kDegenerate)
                throw NormalizationError(std::string("zero range for ") + to_string(m));
            n.shift[i] = *lo;
            n.scale[i] = *hi - *lo;
        }
        n.fitted[i] = true;
    }
    return n;
}

double QualityEstimator::weight(Modality m, std::span<const double> features) const {
    const int i = static_cast<int>(m);
    if (weights[i].size() != features.size())
        throw DimensionError("quality feature length mismatch");
    double z = bias[i];
    for (std::size_t k = 0; k < features.size(); ++k) z += weights[i][k] * features[k];
    return sigmoid(z);
}

std::vector<double> FusionModel::gate_weights(const std::array<double, 3>& quality) const {
    const std::size_t Z = experts.size();
    if (Z == 1) return {1.0};
    if (Z == 2) {
        const double w = quality[static_cast<int>(Modality::face)];
        return {w, 1.0 - w};
    }
    std::vector<double> logits(Z);
    for (std::size_t z = 0; z < Z; ++z) {
        double l = gate_b[z];
        for (int m = 0; m < kNumModalities; ++m) l += gate_w[z][m] * quality[m];
        logits[z] = l;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    std::vector<double> g(Z);
    for (std::size_t z = 0; z < Z; ++z) {
        g[z] = std::exp(logits[z] - mx);
        sum += g[z];
    }
    for (double& x : g) x /= sum;
    return g;
}

FusionModel make_default_fusion_model(std::size_t num_experts, NormKind kind) {
    FusionModel m;
    m.norm.kind = kind;
    m.experts.resize(num_experts);
    for (auto& e : m.experts) {
        e.weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        e.bias = 0.0;
    }
    m.gate_w.assign(num_experts, {0.0, 0.0, 0.0});
    m.gate_b.assign(num_experts, 0.0);
    return m;
}

namespace {

struct ExpertEval {
    double out = 0.0;
    double base = 0.0;
    double scale = 1.0;
    double w_present = 0.0;
    double w_total = 0.0;
    bool degenerate = false;
};

ExpertEval eval_expert(const FusionExpert& e, const std::array<double, 3>& norm_row,
                       const std::array<bool, 3>& present) {
    ExpertEval r;
    for (int m = 0; m < kNumModalities; ++m) {
        r.w_total += e.weights[m];
        if (present[m]) {
            r.w_present += e.weights[m];
            r.base += e.weights[m] * norm_row[m];
        }
    }
    bool all = present[0] && present[1] && present[2];
    if (!all) {
        if (std::abs(r.w_present) < kDegenerate) {
            r.degenerate = true; // fall back to the unscaled restricted sum
            r.scale = 1.0;
        } else {
            r.scale = r.w_total / r.w_present;
        }
    }
    r.out = e.bias + r.scale * r.base;
    return r;
}

void normalize_row(const ScoreMatrix& S, std::size_t g, const Normalizer& norm,
                   std::array<double, 3>& row, std::array<bool, 3>& present) {
    present = {false, false, false};
    row = {0.0, 0.0, 0.0};
    for (Modality m : kAllModalities) {
        const double v = S.at(g, m);
        if (is_missing(v)) continue;
        present[static_cast<int>(m)] = true;
        row[static_cast<int>(m)] = norm.apply(m, v);
    }
    if (!present[0] && !present[1] && !present[2])
        throw MissingScoreError("all modalities missing for gallery row " +
                                std::to_string(g) + " of probe " + S.probe_id);
}

} // namespace

std::vector<double> moe_fuse(const ScoreMatrix& S, const std::array<double, 3>& quality,
                             const FusionModel& model) {
    const auto gate = model.gate_weights(quality);
    std::vector<double> fused(S.rows());
    for (std::size_t g = 0; g < S.rows(); ++g) {
        std::array<double, 3> row;
        std::array<bool, 3> present;
        normalize_row(S, g, model.norm, row, present);
        double acc = 0.0;
        for (std::size_t z = 0; z < model.experts.size(); ++z)
            acc += gate[z] * eval_expert(model.experts[z], row, present).out;
        fused[g] = acc;
    }
    return fused;
}

std::vector<double> baseline_fuse(const ScoreMatrix& S, const Normalizer& norm) {
    std::vector<double> fused(S.rows());
    for (std::size_t g = 0; g < S.rows(); ++g) {
        std::array<double, 3> row;
        std::array<bool, 3> present;
        normalize_row(S, g, norm, row, present);
        double acc = 0.0;
        int n = 0;
        for (int m = 0; m < kNumModalities; ++m) {
            if (!present[m]) continue;
            acc += row[m];
            ++n;
        }
        fused[g] = acc / n;
    }
    return fused;
}

ScoreTripletResult score_triplet_loss(std::span<const double> fused,
                                      std::optional<std::size_t> mate_index,
                                      double margin) {
    if (margin <= 0) throw ConfigError("margin must be positive");
    ScoreTripletResult r;
    r.grad.assign(fused.size(), 0.0);
    std::size_t n_nm = fused.size() - (mate_index ? 1 : 0);
    if (n_nm > 0) {
        const double inv = 1.0 / static_cast<double>(n_nm);
        for (std::size_t g = 0; g < fused.size(); ++g) {
            if (mate_index && g == *mate_index) continue;
            if (fused[g] > 0) {
                r.value += inv * fused[g];
                r.grad[g] += inv;
            }
        }
    }
    if (mate_index) {
        const double h = margin - fused[*mate_index];
        if (h > 0) {
            r.value += h;
            r.grad[*mate_index] -= 1.0;
        }
    }
    return r;
}

QualityEstimator train_quality_estimator(
    const std::array<std::vector<QESample>, 3>& samples, int epochs, double lr,
    std::uint64_t seed, double rank_margin) {
    QualityEstimator qe;
    SubstreamRng rng(seed, {0x7165ULL}); // "qe"
    for (Modality m : kAllModalities) {
        const int mi = static_cast<int>(m);
        const auto& data = samples[mi];
        if (data.empty()) continue;
        if (data.size() < 2)
            throw RankingDegenerateError("need >= 2 samples to rank");
        const std::size_t d = data.front().features.size();
        bool distinct = false;
        for (const auto& s : data) {
            if (s.features.size() != d) throw DimensionError("feature length mismatch");
            if (std::abs(s.target - data.front().target) > 1e-12) distinct = true;
        }
        if (!distinct)
            throw RankingDegenerateError(std::string("constant targets for ") + to_string(m));

        auto sub = rng.substream(static_cast<std::uint64_t>(mi));
        std::vector<double> w(d);
        for (double& x : w) x = 0.01 * sub.next_gaussian();
        double b = 0.0;

        std::vector<std::pair<std::size_t, std::size_t>> pairs; // (hi, lo)
        for (std::size_t i = 0; i < data.size(); ++i)
            for (std::size_t j = 0; j < data.size(); ++j)
                if (data[i].target > data[j].target + 1e-12) pairs.emplace_back(i, j);

        std::vector<double> wout(data.size()), pre(data.size());
        for (int ep = 0; ep < epochs; ++ep) {
            for (std::size_t i = 0; i < data.size(); ++i) {
                double z = b;
                for (std::size_t k = 0; k < d; ++k) z += w[k] * data[i].features[k];
                pre[i] = z;
                wout[i] = sigmoid(z);
            }
            std::vector<double> gw(d, 0.0);
            double gb = 0.0;
            const double inv = 1.0 / static_cast<double>(pairs.size());
            for (const auto& [hi, lo] : pairs) {
                if (rank_margin - (wout[hi] - wout[lo]) <= 0) continue;
                const double dhi = wout[hi] * (1.0 - wout[hi]);
                const double dlo = wout[lo] * (1.0 - wout[lo]);
                for (std::size_t k = 0; k < d; ++k)
                    gw[k] += inv * (-dhi * data[hi].features[k] + dlo * data[lo].features[k]);
                gb += inv * (-dhi + dlo);
            }
            for (std::size_t k = 0; k < d; ++k) w[k] -= lr * gw[k];
            b -= lr * gb;
        }
        qe.weights[mi] = std::move(w);
        qe.bias[mi] = b;
    }
    return qe;
}

FusionParamGrad fusion_loss_and_grad(const FusionModel& model,
                                     const std::vector<FusionTrainingProbe>& probes,
                                     double margin) {
    const std::size_t Z = model.experts.size();
    FusionParamGrad g;
    g.experts.assign(Z, FusionExpert{{0, 0, 0}, 0.0});
    g.gate_w.assign(Z, {0.0, 0.0, 0.0});
    g.gate_b.assign(Z, 0.0);
    if (probes.empty()) throw ConfigError("no training probes");
    const double inv_p = 1.0 / static_cast<double>(probes.size());

    for (const auto& probe : probes) {
        const auto gate = model.gate_weights(probe.quality);
        const std::size_t ng = probe.scores.rows();
        std::vector<double> fused(ng);
        std::vector<std::vector<ExpertEval>> evals(ng, std::vector<ExpertEval>(Z));
        std::vector<std::array<double, 3>> rows(ng);
        std::vector<std::array<bool, 3>> present(ng);
        for (std::size_t r = 0; r < ng; ++r) {
            normalize_row(probe.scores, r, model.norm, rows[r], present[r]);
            double acc = 0.0;
            for (std::size_t z = 0; z < Z; ++z) {
                evals[r][z] = eval_expert(model.experts[z], rows[r], present[r]);
                acc += gate[z] * evals[r][z].out;
            }
            fused[r] = acc;
        }
        auto stl = score_triplet_loss(fused, probe.mate_index, margin);
        g.loss += inv_p * stl.value;

        std::vector<double> d_gate(Z, 0.0);
        for (std::size_t r = 0; r < ng; ++r) {
            const double u = inv_p * stl.grad[r];
            if (u == 0.0) continue;
            for (std::size_t z = 0; z < Z; ++z) {
                const auto& ev = evals[r][z];
                const double uz = u * gate[z];
                g.experts[z].bias += uz;
                for (int m = 0; m < kNumModalities; ++m) {
                    if (present[r][m]) {
                        double d = ev.scale * rows[r][m];
                        if (!ev.degenerate && ev.scale != 1.0)
                            d += (ev.w_present - ev.w_total) / (ev.w_present * ev.w_present) *
                                 ev.base;
                        g.experts[z].weights[m] += uz * d;
                    } else if (!ev.degenerate) {
                        g.experts[z].weights[m] += uz * ev.base / ev.w_present;
                    }
                }
                d_gate[z] += u * ev.out;
            }
        }
        if (Z > 2) { // softmax gate is trainable only in the general form
            double dot = 0.0;
            for (std::size_t z = 0; z < Z; ++z) dot += gate[z] * d_gate[z];
            for (std::size_t z = 0; z < Z; ++z) {
                const double dl = gate[z] * (d_gate[z] - dot);
                g.gate_b[z] += dl;
                for (int m = 0; m < kNumModalities; ++m)
                    g.gate_w[z][m] += dl * probe.quality[m];
            }
        }
    }
    return g;
}

FusionTrainReport train_fusion(FusionModel& model,
                               const std::vector<FusionTrainingProbe>& probes,
                               int epochs, double lr, double margin) {
    bool any_mated = false;
    for (const auto& p : probes) any_mated = any_mated || p.mate_index.has_value();
    if (!any_mated) throw ConfigError("need at least one mated training probe");
    FusionTrainReport report;
    const std::size_t Z = model.experts.size();
    for (int ep = 0; ep < epochs; ++ep) {
        auto g = fusion_loss_and_grad(model, probes, margin);
        report.epoch_loss.push_back(g.loss);
        for (std::size_t z = 0; z < Z; ++z) {
            model.experts[z].bias -= lr * g.experts[z].bias;
            for (int m = 0; m < kNumModalities; ++m)
                model.experts[z].weights[m] -= lr * g.experts[z].weights[m];
            if (Z > 2) {
                model.gate_b[z] -= lr * g.gate_b[z];
                for (int m = 0; m < kNumModalities; ++m)
                    model.gate_w[z][m] -= lr * g.gate_w[z][m];
            }
        }
    }
    return report;
}

// ---- persistence -------------------------------------------------------------

void save_fusion_model(const std::string& path, const FusionModel& model) {
    nlohmann::json j;
    j["norm"]["kind"] = model.norm.kind == NormKind::zscore ? "zscore" : "minmax";
    for (Modality m : kAllModalities) {
        const int i = static_cast<int>(m);
        if (!model.norm.fitted[i]) continue;
        j["norm"]["stats"][to_string(m)] = {{"shift", model.norm.shift[i]},
                                            {"scale", model.norm.scale[i]}};
    }
    j["experts"] = nlohmann::json::array();
    for (const auto& e : model.experts)
        j["experts"].push_back({{"weights", e.weights}, {"bias", e.bias}});
    j["gate_w"] = model.gate_w;
    j["gate_b"] = model.gate_b;
    for (Modality m : kAllModalities) {
        const int i = static_cast<int>(m);
        if (model.qe.weights[i].empty()) continue;
        j["qe"][to_string(m)] = {{"weights", model.qe.weights[i]},
                                 {"bias", model.qe.bias[i]}};
    }
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << j.dump(2) << '\n';
}

FusionModel load_fusion_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    nlohmann::json j;
    is >> j;
    FusionModel model;
    model.norm.kind =
        j.at("norm").at("kind").get<std::string>() == "zscore" ? NormKind::zscore
                                                               : NormKind::minmax;
    if (j.at("norm").contains("stats")) {
        for (Modality m : kAllModalities) {
            const int i = static_cast<int>(m);
            const auto& stats = j["norm"]["stats"];
            if (!stats.contains(to_string(m))) continue;
            model.norm.shift[i] = stats[to_string(m)].at("shift").get<double>();
            model.norm.scale[i] = stats[to_string(m)].at("scale").get<double>();
            model.norm.fitted[i] = true;
        }
    }
    for (const auto& e : j.at("experts")) {
        FusionExpert fe;
        auto w = e.at("weights").get<std::vector<double>>();
        if (w.size() != 3) throw FormatError("expert weight vector must have 3 entries");
        std::copy(w.begin(), w.end(), fe.weights.begin());
        fe.bias = e.at("bias").get<double>();
        model.experts.push_back(fe);
    }
    for (const auto& row : j.at("gate_w")) {
        auto v = row.get<std::vector<double>>();
        std::array<double, 3> a{};
        std::copy(v.begin(), v.end(), a.begin());
        model.gate_w.push_back(a);
    }
    model.gate_b = j.at("gate_b").get<std::vector<double>>();
    if (j.contains("qe")) {
        for (Modality m : kAllModalities) {
            const int i = static_cast<int>(m);
            if (!j["qe"].contains(to_string(m))) continue;
            model.qe.weights[i] = j["qe"][to_string(m)].at("weights").get<std::vector<double>>();
            model.qe.bias[i] = j["qe"][to_string(m)].at("bias").get<double>();
        }
    }
    return model;
}

} // namespace biotk
