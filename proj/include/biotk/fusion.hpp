#ifndef BIOTK_FUSION_HPP
#define BIOTK_FUSION_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biotk/core.hpp"

namespace biotk {

enum class NormKind { zscore, minmax };

/// Per-modality affine score normalization fitted on calibration scores.
struct Normalizer {
    NormKind kind = NormKind::zscore;
    std::array<double, 3> shift{};  // mean (z-score) or min (min-max)
    std::array<double, 3> scale{};  // std or range
    std::array<bool, 3> fitted{};

    double apply(Modality m, double s) const;
};

/// MISSING calibration entries are skipped; a modality with no finite scores
/// is simply left unfitted. Degenerate spread raises NormalizationError.
Normalizer fit_normalizer(const std::array<std::vector<double>, 3>& calibration,
                          NormKind kind = NormKind::zscore);

/// W = sigmoid(w . x + b) per modality, over a declared quality-feature vector.
struct QualityEstimator {
    std::array<std::vector<double>, 3> weights;
    std::array<double, 3> bias{};

    double weight(Modality m, std::span<const double> features) const;
};

/// Affine map from the normalized 3-column score row to one fused score.
struct FusionExpert {
    std::array<double, 3> weights{};
    double bias = 0.0;
};

struct FusionModel {
    Normalizer norm;
    std::vector<FusionExpert> experts;
    // gate for Z != 2: softmax(gate_w . quality + gate_b); for Z == 2 the gate
    // is fixed at (W_fa, 1 - W_fa)
    std::vector<std::array<double, 3>> gate_w;
    std::vector<double> gate_b;
    QualityEstimator qe;

    std::size_t num_experts() const { return experts.size(); }
    std::vector<double> gate_weights(const std::array<double, 3>& quality) const;
};

FusionModel make_default_fusion_model(std::size_t num_experts = 2,
                                      NormKind kind = NormKind::zscore);

/// Quality-gated mixture-of-experts fusion of one probe's score matrix.
/// Rows with missing modalities use each expert restricted to the present
/// columns with its weights renormalized; an all-missing row throws.
std::vector<double> moe_fuse(const ScoreMatrix& S, const std::array<double, 3>& quality,
                             const FusionModel& model);

/// Unweighted mean of the normalized present modalities.
std::vector<double> baseline_fuse(const ScoreMatrix& S, const Normalizer& norm);

struct ScoreTripletResult {
    double value = 0.0;
    std::vector<double> grad; // w.r.t. the fused column
};

/// Mean ReLU of non-match fused scores plus, when mated, ReLU(margin - match).
ScoreTripletResult score_triplet_loss(std::span<const double> fused,
                                      std::optional<std::size_t> mate_index,
                                      double margin);

struct QESample {
    std::vector<double> features;
    double target; // genuine-margin quality target
};

/// Pairwise margin ranking loss, full-batch gradient descent, deterministic.
QualityEstimator train_quality_estimator(
    const std::array<std::vector<QESample>, 3>& samples, int epochs, double lr,
    std::uint64_t seed, double rank_margin = 0.1);

struct FusionTrainingProbe {
    ScoreMatrix scores;
    std::array<double, 3> quality{1.0, 1.0, 1.0}; // from the frozen QE
    std::optional<std::size_t> mate_index;
};

struct FusionTrainReport {
    std::vector<double> epoch_loss;
};

/// Trains expert (and, for Z != 2, gate) parameters with the score triplet
/// loss; the quality weights are inputs (QE frozen).
FusionTrainReport train_fusion(FusionModel& model,
                               const std::vector<FusionTrainingProbe>& probes,
                               int epochs, double lr, double margin);

/// Analytic parameter gradient of the mean score-triplet loss; exposed so the
/// trainable path can be checked against finite differences.
struct FusionParamGrad {
    std::vector<FusionExpert> experts;
    std::vector<std::array<double, 3>> gate_w;
    std::vector<double> gate_b;
    double loss = 0.0;
};
FusionParamGrad fusion_loss_and_grad(const FusionModel& model,
                                     const std::vector<FusionTrainingProbe>& probes,
                                     double margin);

void save_fusion_model(const std::string& path, const FusionModel& model);
FusionModel load_fusion_model(const std::string& path);

} // namespace biotk

#endif
