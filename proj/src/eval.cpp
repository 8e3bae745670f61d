#include "biotk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace biotk {

namespace {

double next_above(double x) {
    return std::nextafter(x, std::numeric_limits<double>::infinity());
}

/// Smallest candidate threshold with fraction(scores >= t) <= target.
double conservative_threshold(std::vector<double> scores, double target) {
    std::sort(scores.begin(), scores.end());
    const auto n = static_cast<double>(scores.size());
    // candidates are the observed scores, ascending; fraction >= scores[i]
    // is (n - first_index_of(scores[i])) / n
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i > 0 && scores[i] == scores[i - 1]) continue;
        const double frac = (n - static_cast<double>(i)) / n;
        if (frac <= target) return scores[i];
    }
    return next_above(scores.back());
}

double fraction_at_least(const std::vector<double>& scores, double t) {
    std::size_t c = 0;
    for (double s : scores)
        if (s >= t) ++c;
    return static_cast<double>(c) / static_cast<double>(scores.size());
}

} // namespace

RateAtThreshold tar_at_far(const std::vector<double>& genuine,
                           const std::vector<double>& impostor, double far) {
    if (genuine.empty() || impostor.empty())
        throw InsufficientDataError("tar_at_far: empty genuine or impostor set");
    if (far <= 0.0 || far >= 1.0) throw ConfigError("far target must lie in (0,1)");
    RateAtThreshold r;
    r.threshold = conservative_threshold(impostor, far);
    r.rate = fraction_at_least(genuine, r.threshold);
    return r;
}

namespace {

// pessimistic: the mate ranks below every equal-scored non-mate
std::size_t mate_rank(const MatedSearch& s) {
    const double ms = s.scores[s.mate];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
        if (j == s.mate) continue;
        const double v = s.scores[j];
        if (!std::isnan(v) && v >= ms) ++rank;
    }
    return rank;
}

} // namespace

double rank_k_accuracy(const std::vector<MatedSearch>& searches, int k) {
    if (searches.empty()) throw InsufficientDataError("rank_k: no mated searches");
    if (k < 1) throw ConfigError("rank_k: k must be >= 1");
    std::size_t hits = 0;
    for (const auto& s : searches) {
        if (s.mate >= s.scores.size() || std::isnan(s.scores[s.mate]))
            throw ProtocolError("mated search without a mate score");
        if (mate_rank(s) <= static_cast<std::size_t>(k)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(searches.size());
}

RateAtThreshold fnir_at_fpir(const std::vector<MatedSearch>& mated,
                             const std::vector<std::vector<double>>& non_mated,
                             double fpir) {
    if (mated.empty() || non_mated.empty())
        throw InsufficientDataError("fnir_at_fpir: empty search set");
    if (fpir <= 0.0 || fpir >= 1.0) throw ConfigError("fpir target must lie in (0,1)");
    std::vector<double> top1;
    top1.reserve(non_mated.size());
    for (const auto& row : non_mated) {
        double best = -std::numeric_limits<double>::infinity();
        for (double v : row)
            if (!std::isnan(v)) best = std::max(best, v);
        if (!std::isfinite(best))
            throw InsufficientDataError("non-mated search with no scores");
        top1.push_back(best);
    }
    RateAtThreshold r;
    r.threshold = conservative_threshold(top1, fpir);
    std::size_t misses = 0;
    for (const auto& s : mated) {
        const bool rank1 = mate_rank(s) == 1;
        const bool detected = s.scores[s.mate] >= r.threshold;
        if (!(rank1 && detected)) ++misses;
    }
    r.rate = static_cast<double>(misses) / static_cast<double>(mated.size());
    return r;
}

EvalReport run_protocol(const std::vector<GalleryEntry>& gallery,
                        const std::vector<ProbeRecord>& probes,
                        const ProtocolConfig& config, const FusionModel* fusion) {
    if (gallery.empty()) throw ProtocolError("empty gallery");
    if (probes.empty()) throw ProtocolError("no probes");

    // mate lookup; distractors never qualify
    std::map<std::string, std::size_t> enrolled;
    for (std::size_t g = 0; g < gallery.size(); ++g)
        if (!gallery[g].is_distractor) enrolled[gallery[g].subject_id] = g;
    for (const auto& p : probes) {
        if (!p.true_subject_id) continue;
        for (const auto& g : gallery)
            if (g.is_distractor && g.subject_id == *p.true_subject_id)
                throw ProtocolError("probe subject " + *p.true_subject_id +
                                    " is enrolled as a distractor");
    }

    const std::size_t np = probes.size();
    std::vector<ScoreMatrix> mats(np);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(np); ++i)
        mats[i] = build_score_matrix_serial(probes[i], gallery);

    struct Channel {
        std::string name;
        std::vector<std::vector<double>> scores; // per probe, per gallery
    };
    std::vector<Channel> channels;
    for (Modality m : kAllModalities) {
        if (!config.modalities[static_cast<int>(m)]) continue;
        Channel ch;
        ch.name = to_string(m);
        bool any = false;
        for (std::size_t i = 0; i < np; ++i) {
            std::vector<double> row(gallery.size());
            for (std::size_t g = 0; g < gallery.size(); ++g) {
                row[g] = mats[i].at(g, m);
                if (!std::isnan(row[g])) any = true;
            }
            ch.scores.push_back(std::move(row));
        }
        if (any) channels.push_back(std::move(ch));
    }
    if (config.use_fusion && fusion) {
        Channel ch;
        ch.name = "fused";
        for (std::size_t i = 0; i < np; ++i)
            ch.scores.push_back(moe_fuse(mats[i], probes[i].quality, *fusion));
        channels.push_back(std::move(ch));
    }

    EvalReport report;
    for (std::size_t i = 0; i < np; ++i) {
        const auto& p = probes[i];
        if (p.true_subject_id && enrolled.count(*p.true_subject_id))
            ++report.mated_searches;
        else
            ++report.non_mated_searches;
    }
    report.genuine_pairs = report.mated_searches;
    report.impostor_pairs = report.mated_searches * (gallery.size() - 1);

    for (const auto& ch : channels) {
        std::vector<double> genuine, impostor;
        std::vector<MatedSearch> mated;
        std::vector<std::vector<double>> non_mated;
        for (std::size_t i = 0; i < np; ++i) {
            const auto& p = probes[i];
            const auto& row = ch.scores[i];
            auto it = p.true_subject_id ? enrolled.find(*p.true_subject_id)
                                        : enrolled.end();
            if (it != enrolled.end()) {
                const std::size_t mate = it->second;
                if (std::isnan(row[mate])) continue; // modality gap, skip search
                genuine.push_back(row[mate]);
                for (std::size_t g = 0; g < gallery.size(); ++g)
                    if (g != mate && !std::isnan(row[g])) impostor.push_back(row[g]);
                mated.push_back(MatedSearch{row, mate});
            } else {
                bool any = false;
                for (double v : row) any = any || !std::isnan(v);
                if (any) non_mated.push_back(row);
            }
        }
        for (double far : config.far_targets) {
            auto r = tar_at_far(genuine, impostor, far);
            report.rows.push_back(
                {ch.name, "tar@far", far, r.rate, r.threshold, genuine.size()});
        }
        report.rows.push_back({ch.name, "rank-k", static_cast<double>(config.rank_k),
                               rank_k_accuracy(mated, config.rank_k), 0.0, mated.size()});
        if (!non_mated.empty()) {
            auto r = fnir_at_fpir(mated, non_mated, config.fpir_target);
            report.rows.push_back(
                {ch.name, "fnir@fpir", config.fpir_target, r.rate, r.threshold, mated.size()});
        }
    }
    return report;
}

// ---- files -------------------------------------------------------------------

ProtocolSpec read_protocol_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    ProtocolSpec spec;
    spec.gallery_media = j.at("gallery_media").get<std::vector<std::string>>();
    spec.probe_media = j.at("probe_media").get<std::vector<std::string>>();
    if (j.contains("distractors"))
        spec.distractors = j["distractors"].get<std::vector<std::string>>();
    if (j.contains("far_targets"))
        spec.config.far_targets = j["far_targets"].get<std::vector<double>>();
    if (j.contains("fpir_target")) spec.config.fpir_target = j["fpir_target"].get<double>();
    if (j.contains("rank_k")) spec.config.rank_k = j["rank_k"].get<int>();
    if (j.contains("use_fusion")) spec.config.use_fusion = j["use_fusion"].get<bool>();
    if (j.contains("modalities")) {
        spec.config.modalities = {false, false, false};
        for (const auto& m : j["modalities"])
            spec.config.modalities[static_cast<int>(
                modality_from_string(m.get<std::string>()))] = true;
    }
    return spec;
}

void write_protocol_json(const std::string& path, const ProtocolSpec& spec) {
    nlohmann::json j;
    j["gallery_media"] = spec.gallery_media;
    j["probe_media"] = spec.probe_media;
    j["distractors"] = spec.distractors;
    j["far_targets"] = spec.config.far_targets;
    j["fpir_target"] = spec.config.fpir_target;
    j["rank_k"] = spec.config.rank_k;
    j["use_fusion"] = spec.config.use_fusion;
    nlohmann::json mods = nlohmann::json::array();
    for (Modality m : kAllModalities)
        if (spec.config.modalities[static_cast<int>(m)]) mods.push_back(to_string(m));
    j["modalities"] = std::move(mods);
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << j.dump(2) << '\n';
}

namespace {
nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["counts"] = {{"mated_searches", report.mated_searches},
                   {"non_mated_searches", report.non_mated_searches},
                   {"genuine_pairs", report.genuine_pairs},
                   {"impostor_pairs", report.impostor_pairs}};
    j["metrics"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        j["metrics"].push_back({{"channel", r.channel},
                                {"metric", r.metric},
                                {"target", r.target},
                                {"value", r.value},
                                {"threshold", r.threshold},
                                {"support", r.support}});
    return j;
}
} // namespace

void write_report_json(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << report_to_json(report).dump(2) << '\n';
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "channel,metric,target,value,threshold,support\n";
    for (const auto& r : report.rows)
        os << r.channel << ',' << r.metric << ',' << format_float(r.target) << ','
           << format_float(r.value) << ',' << format_float(r.threshold) << ','
           << r.support << '\n';
}

} // namespace biotk
