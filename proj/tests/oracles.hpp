#ifndef BIOTK_TEST_ORACLES_HPP
#define BIOTK_TEST_ORACLES_HPP

// Brute-force reference implementations, deliberately written as directly as
// possible and independent of the library's code paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "biotk/core.hpp"
#include "biotk/eval.hpp"
#include "biotk/fusion.hpp"

namespace oracle {

// Smallest observed score t with fraction(scores >= t) <= target, else just
// above the maximum. Candidate thresholds tried in ascending order by scanning
// the unsorted list each time.
inline double threshold(const std::vector<double>& scores, double target) {
    std::vector<double> cand = scores;
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    for (double t : cand) {
        std::size_t c = 0;
        for (double s : scores)
            if (s >= t) ++c;
        if (static_cast<double>(c) / static_cast<double>(scores.size()) <= target) return t;
    }
    return std::nextafter(cand.back(), std::numeric_limits<double>::infinity());
}

inline biotk::RateAtThreshold tar_at_far(const std::vector<double>& genuine,
                                         const std::vector<double>& impostor, double far) {
    biotk::RateAtThreshold r;
    r.threshold = threshold(impostor, far);
    std::size_t c = 0;
    for (double g : genuine)
        if (g >= r.threshold) ++c;
    r.rate = static_cast<double>(c) / static_cast<double>(genuine.size());
    return r;
}

// Pessimistic rank: equal-scored non-mates count as ahead of the mate.
inline std::size_t mate_rank(const std::vector<double>& scores, std::size_t mate) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (j != mate && !std::isnan(scores[j]) && scores[j] >= scores[mate]) ++rank;
    return rank;
}

inline double rank_k_accuracy(const std::vector<biotk::MatedSearch>& searches, int k) {
    std::size_t hits = 0;
    for (const auto& s : searches)
        if (mate_rank(s.scores, s.mate) <= static_cast<std::size_t>(k)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(searches.size());
}

inline biotk::RateAtThreshold fnir_at_fpir(
    const std::vector<biotk::MatedSearch>& mated,
    const std::vector<std::vector<double>>& non_mated, double fpir) {
    std::vector<double> top1;
    for (const auto& row : non_mated) {
        double best = -std::numeric_limits<double>::infinity();
        for (double v : row)
            if (!std::isnan(v)) best = std::max(best, v);
        top1.push_back(best);
    }
    biotk::RateAtThreshold r;
    r.threshold = threshold(top1, fpir);
    std::size_t misses = 0;
    for (const auto& s : mated)
        if (!(mate_rank(s.scores, s.mate) == 1 && s.scores[s.mate] >= r.threshold))
            ++misses;
    r.rate = static_cast<double>(misses) / static_cast<double>(mated.size());
    return r;
}

// Reference protocol run: per-probe scores computed with plain cosine loops,
// metrics via the oracles above. Row order mirrors the library report.
inline biotk::EvalReport run_protocol(const std::vector<biotk::GalleryEntry>& gallery,
                                      const std::vector<biotk::ProbeRecord>& probes,
                                      const biotk::ProtocolConfig& config,
                                      const biotk::FusionModel* fusion = nullptr) {
    using namespace biotk;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    std::vector<ScoreMatrix> mats;
    for (const auto& p : probes) {
        ScoreMatrix sm;
        sm.probe_id = p.probe_id;
        for (const auto& g : gallery) {
            sm.gallery_ids.push_back(g.subject_id);
            for (int m = 0; m < kNumModalities; ++m) {
                const bool have = p.vectors[m].has_value() && g.vectors[m].has_value();
                sm.scores.push_back(have ? cosine(*p.vectors[m], *g.vectors[m]) : nan);
            }
        }
        mats.push_back(std::move(sm));
    }

    std::vector<std::pair<std::string, std::vector<std::vector<double>>>> channels;
    for (Modality m : kAllModalities) {
        if (!config.modalities[static_cast<int>(m)]) continue;
        std::vector<std::vector<double>> rows;
        bool any = false;
        for (const auto& sm : mats) {
            std::vector<double> row;
            for (std::size_t g = 0; g < gallery.size(); ++g) {
                row.push_back(sm.at(g, m));
                any = any || !std::isnan(row.back());
            }
            rows.push_back(std::move(row));
        }
        if (any) channels.emplace_back(to_string(m), std::move(rows));
    }
    if (config.use_fusion && fusion) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < mats.size(); ++i)
            rows.push_back(moe_fuse(mats[i], probes[i].quality, *fusion));
        channels.emplace_back("fused", std::move(rows));
    }

    std::optional<std::size_t> mate_of;
    EvalReport report;
    auto enrolled_index = [&](const ProbeRecord& p) -> std::optional<std::size_t> {
        if (!p.true_subject_id) return std::nullopt;
        for (std::size_t g = 0; g < gallery.size(); ++g)
            if (!gallery[g].is_distractor && gallery[g].subject_id == *p.true_subject_id)
                return g;
        return std::nullopt;
    };
    for (const auto& p : probes) {
        if (enrolled_index(p))
            ++report.mated_searches;
        else
            ++report.non_mated_searches;
    }
    report.genuine_pairs = report.mated_searches;
    report.impostor_pairs = report.mated_searches * (gallery.size() - 1);
    (void)mate_of;

    for (const auto& [name, rows] : channels) {
        std::vector<double> genuine, impostor;
        std::vector<MatedSearch> mated;
        std::vector<std::vector<double>> non_mated;
        for (std::size_t i = 0; i < probes.size(); ++i) {
            const auto mate = enrolled_index(probes[i]);
            const auto& row = rows[i];
            if (mate) {
                if (std::isnan(row[*mate])) continue;
                genuine.push_back(row[*mate]);
                for (std::size_t g = 0; g < row.size(); ++g)
                    if (g != *mate && !std::isnan(row[g])) impostor.push_back(row[g]);
                mated.push_back(MatedSearch{row, *mate});
            } else {
                bool any = false;
                for (double v : row) any = any || !std::isnan(v);
                if (any) non_mated.push_back(row);
            }
        }
        for (double far : config.far_targets) {
            auto r = oracle::tar_at_far(genuine, impostor, far);
            report.rows.push_back({name, "tar@far", far, r.rate, r.threshold, genuine.size()});
        }
        report.rows.push_back({name, "rank-k", static_cast<double>(config.rank_k),
                               oracle::rank_k_accuracy(mated, config.rank_k), 0.0, mated.size()});
        if (!non_mated.empty()) {
            auto r = oracle::fnir_at_fpir(mated, non_mated, config.fpir_target);
            report.rows.push_back(
                {name, "fnir@fpir", config.fpir_target, r.rate, r.threshold, mated.size()});
        }
    }
    return report;
}

// Exhaustive minimum-cost one-to-one assignment; infinite-cost pairs are
// forbidden. Returns (row, col) pairs sorted by row.
inline std::vector<std::pair<std::size_t, std::size_t>> brute_force_assignment(
    const std::vector<std::vector<double>>& cost) {
    const std::size_t R = cost.size();
    const std::size_t C = R ? cost[0].size() : 0;
    const bool transpose = R > C;
    const std::size_t nr = transpose ? C : R;
    const std::size_t nc = transpose ? R : C;
    auto at = [&](std::size_t r, std::size_t c) { return transpose ? cost[c][r] : cost[r][c]; };

    std::vector<std::size_t> cols(nc);
    std::iota(cols.begin(), cols.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_perm;
    std::sort(cols.begin(), cols.end());
    do {
        double total = 0;
        bool ok = true;
        for (std::size_t r = 0; r < nr && ok; ++r) {
            const double v = std::isinf(at(r, cols[r])) ? 1e12 : at(r, cols[r]);
            total += v;
        }
        if (ok && total < best) {
            best = total;
            best_perm.assign(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(nr));
        }
    } while (std::next_permutation(cols.begin(), cols.end()));

    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t r = 0; r < nr; ++r) {
        if (std::isinf(at(r, best_perm[r]))) continue; // forbidden, dropped
        if (transpose)
            out.emplace_back(best_perm[r], r);
        else
            out.emplace_back(r, best_perm[r]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline double assignment_cost(const std::vector<std::vector<double>>& cost,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    double total = 0;
    for (const auto& [r, c] : pairs) total += cost[r][c];
    return total;
}

} // namespace oracle

#endif
