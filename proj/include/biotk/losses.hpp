#ifndef BIOTK_LOSSES_HPP
#define BIOTK_LOSSES_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biotk/core.hpp"
#include "biotk/errors.hpp"

namespace biotk {

struct LossHyperparams {
    double alpha = 16.0;  // detection sigmoid sharpness
    double beta = 16.0;   // identification sigmoid
    double gamma = 16.0;  // softrank sigmoid
    double lambda = 0.5;  // RTM weight
    double margin = 0.3;  // triplet margin
    double mated_fraction = 0.5;
    bool softrank_exclude_self = false;

    void validate() const;
};

struct ExemplarRef {
    std::size_t subject;
    std::size_t exemplar;
};

/// Mated/non-mated split of a training batch into simulated gallery and
/// probe sets, plus the probe x gallery similarity table.
struct BatchPartition {
    std::vector<std::string> subject_ids;
    std::vector<ExemplarRef> gallery; // one entry per gallery column
    std::vector<ExemplarRef> probes;  // one entry per probe row
    std::vector<std::pair<std::size_t, std::size_t>> mated_probes; // (row, col)
    std::vector<std::size_t> non_mated_probes;                     // rows
    std::vector<double> scores; // probes x gallery, row-major

    std::size_t n_probes() const { return probes.size(); }
    std::size_t n_gallery() const { return gallery.size(); }
    double score(std::size_t p, std::size_t g) const { return scores[p * n_gallery() + g]; }
    double& score(std::size_t p, std::size_t g) { return scores[p * n_gallery() + g]; }

    void validate() const;
};

struct ScalarWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

// sigmoid with sharpness k
double sharp_sigmoid(double x, double k);

/// sigma_alpha(s - tau) and its derivative in s.
std::pair<double, double> r_det_tau(double s_ig, double tau, double alpha);

/// Threshold set for the mated pair against gallery column g: the scores of
/// every non-mated probe against that gallery subject, sorted ascending.
std::vector<double> detection_thresholds(const BatchPartition& part, std::size_t g);

struct RdetResult {
    double value = 0.0;
    double d_score = 0.0;        // d/ds_ig
    std::vector<double> d_tau;   // per threshold
};
RdetResult r_det(double s_ig, std::span<const double> thresholds, double alpha);

/// Differentiable rank surrogate over one probe row. grad spans the row.
ScalarWithGrad softrank(std::span<const double> row, std::size_t mate, double gamma,
                        bool exclude_self = false);

/// sigma_beta(1 - softrank); returns value and d/dsoftrank.
std::pair<double, double> r_id(double softrank_value, double beta);

/// Identification-detection loss; grad has the layout of part.scores.
ScalarWithGrad l_idl(const BatchPartition& part, const LossHyperparams& hp);

/// Softmax-weighted mean of scores (stable). grad matches input order.
ScalarWithGrad l_rtm(std::span<const double> non_mated_scores);

/// l_idl + lambda * l_rtm over the pooled non-mated x gallery scores.
ScalarWithGrad l_open(const BatchPartition& part, const LossHyperparams& hp);

/// Deterministic mated/non-mated batch split. Scores are left NaN for the
/// caller to fill (see fill_scores_from_embeddings).
BatchPartition partition_batch(const std::vector<std::string>& subject_ids,
                               const std::vector<std::size_t>& exemplar_counts,
                               double mated_fraction, std::uint64_t seed);

/// embeddings[subject][exemplar] -> raw vector; scores become pairwise cosines.
void fill_scores_from_embeddings(
    BatchPartition& part,
    const std::vector<std::vector<std::vector<double>>>& embeddings);

/// Accumulates dL/da and dL/db given dL/d cos(a, b); a, b need not be unit.
void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b,
                            double upstream, std::span<double> grad_a,
                            std::span<double> grad_b);

struct EmbeddingTriplet {
    std::vector<double> anchor, positive, negative;
    RangeClass anchor_range = RangeClass::close;
    RangeClass positive_range = RangeClass::long_range;
    RangeClass negative_range = RangeClass::long_range;
};

struct TripletLossResult {
    double value = 0.0;
    // grads[i] = {d/danchor, d/dpositive, d/dnegative} for triplet i
    std::vector<std::array<std::vector<double>, 3>> grads;
};

/// Mean over triplets of ReLU(margin - s(a,p) + s(a,n)), cosine similarity.
/// Anchors must be close-range, positives/negatives long-range.
TripletLossResult range_triplet_loss(const std::vector<EmbeddingTriplet>& triplets,
                                     double margin);

// ---- closed-form feature-map losses ----------------------------------------

struct FeatureMap {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<double> data; // C x H x W

    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    std::size_t size() const { return channels * height * width; }
};

/// Softmax across channels at every pixel; produces a valid f_de.
FeatureMap softmax_channels(const FeatureMap& f);

/// Euclidean norm of the elementwise difference. grad is w.r.t. f
/// (the gradient w.r.t. f_hat is its negation).
ScalarWithGrad l_rec(const FeatureMap& f, const FeatureMap& f_hat);

/// Mean absolute Sobel response, x and y directions summed.
ScalarWithGrad l_smo(const FeatureMap& f_de);

/// log C + sum_c p_c log p_c over channel activation proportions.
ScalarWithGrad l_div(const FeatureMap& f_de);

} // namespace biotk

#endif
