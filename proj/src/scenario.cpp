#include <string>
#include <vector>

#include "biotk/rng.hpp"
#include "biotk/track.hpp"

namespace biotk {

namespace {

std::vector<double> subject_embedding(int subject, std::size_t dim, double noise,
                                      SubstreamRng rng) {
    std::vector<double> e(dim, 0.0);
    e[static_cast<std::size_t>(subject) % dim] = 1.0;
    for (double& x : e) x += noise * rng.next_gaussian();
    return e;
}

void emit_subject(std::vector<Detection>& out, const ScenarioConfig& cfg,
                  std::int64_t frame, int subject, double x) {
    const Box body{x, 100.0, 20.0, 40.0};
    Detection d;
    d.video_id = "scenario";
    d.frame = frame;
    d.kind = DetectionKind::body;
    d.box = body;
    d.confidence = 0.9;
    d.embedding = subject_embedding(subject, cfg.embedding_dim, cfg.noise,
                                    SubstreamRng(cfg.seed, {static_cast<std::uint64_t>(frame),
                                                            static_cast<std::uint64_t>(subject)}));
    d.gt_subject = subject == 0 ? "A" : "B";
    out.push_back(d);
    if (cfg.with_faces) {
        Detection f = d;
        f.kind = DetectionKind::face;
        f.box = Box{x + 6.0, 102.0, 8.0, 8.0};
        f.embedding.reset();
        out.push_back(std::move(f));
    }
    if (cfg.with_verifier) {
        Detection v;
        v.video_id = "scenario";
        v.frame = frame;
        v.kind = DetectionKind::body;
        v.box = body;
        v.confidence = 0.9;
        v.source = DetectorSource::verifier;
        out.push_back(std::move(v));
    }
}

} // namespace

// Two subjects walk toward each other, vanish behind a mutual occlusion for
// ten frames, reverse direction while hidden, and reappear. The constant-
// velocity prediction keeps extrapolating the pre-occlusion motion, so a
// purely spatial association cannot reattach the original identities.
std::vector<Detection> generate_crossing_scenario(const ScenarioConfig& cfg) {
    std::vector<Detection> out;
    const std::int64_t frames = std::max<std::int64_t>(cfg.frames, 40);
    for (std::int64_t t = 0; t < frames; ++t) {
        if (t < 20) {
            emit_subject(out, cfg, t, 0, 10.0 + 3.0 * static_cast<double>(t));
            emit_subject(out, cfg, t, 1, 130.0 - 3.0 * static_cast<double>(t));
        } else if (t < 30) {
            // occluded: no detections at all
        } else {
            const double back = 3.0 * static_cast<double>(t - 29);
            emit_subject(out, cfg, t, 0, 67.0 - back);
            emit_subject(out, cfg, t, 1, 73.0 + back);
        }
    }
    return out;
}

} // namespace biotk
