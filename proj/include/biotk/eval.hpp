#ifndef BIOTK_EVAL_HPP
#define BIOTK_EVAL_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biotk/core.hpp"
#include "biotk/fusion.hpp"

namespace biotk {

struct ProtocolConfig {
    std::vector<double> far_targets{1e-3, 1e-4};
    double fpir_target = 0.01;
    int rank_k = 20;
    std::array<bool, 3> modalities{true, true, true};
    bool use_fusion = true;
};

struct RateAtThreshold {
    double rate = 0.0;
    double threshold = 0.0;
};

/// Conservative empirical-quantile threshold: the smallest impostor score t
/// with fraction(impostor >= t) <= far; max(impostor) + eps when none
/// qualifies. TAR = fraction(genuine >= t). No interpolation.
RateAtThreshold tar_at_far(const std::vector<double>& genuine,
                           const std::vector<double>& impostor, double far);

/// A mated search within a score list; ties rank the mate pessimistically
/// below equal-scored non-mates.
struct MatedSearch {
    std::vector<double> scores; // one per gallery subject
    std::size_t mate = 0;
};

double rank_k_accuracy(const std::vector<MatedSearch>& searches, int k);

/// Open-set identification. A non-mated search alarms when its top score
/// clears the threshold; a mated search succeeds only when its mate is
/// rank-1 and its score clears the threshold.
RateAtThreshold fnir_at_fpir(const std::vector<MatedSearch>& mated,
                             const std::vector<std::vector<double>>& non_mated,
                             double fpir);

struct MetricRow {
    std::string channel; // "face", "gait", "body" or "fused"
    std::string metric;  // "tar@far", "rank-k", "fnir@fpir"
    double target = 0.0; // the FAR / FPIR target or k
    double value = 0.0;
    double threshold = 0.0;
    std::size_t support = 0; // searches or genuine pairs behind the value
};

struct EvalReport {
    std::vector<MetricRow> rows;
    std::size_t mated_searches = 0;
    std::size_t non_mated_searches = 0;
    std::size_t genuine_pairs = 0;
    std::size_t impostor_pairs = 0;
};

/// Full protocol run over aggregated gallery entries and probe records.
/// Distractor gallery subjects participate in ranking but never as mates;
/// non-mated probes feed only FPIR. The optional fusion model adds a fused
/// channel.
EvalReport run_protocol(const std::vector<GalleryEntry>& gallery,
                        const std::vector<ProbeRecord>& probes,
                        const ProtocolConfig& config,
                        const FusionModel* fusion = nullptr);

struct ProtocolSpec {
    std::vector<std::string> gallery_media;
    std::vector<std::string> probe_media;
    std::vector<std::string> distractors;
    ProtocolConfig config;
};

ProtocolSpec read_protocol_json(const std::string& path);
void write_protocol_json(const std::string& path, const ProtocolSpec& spec);

void write_report_json(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);

} // namespace biotk

#endif
