#include "biotk/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "biotk/core.hpp"

namespace biotk {

double iou(const Box& a, const Box& b) {
    const double x1 = std::max(a.x, b.x);
    const double y1 = std::max(a.y, b.y);
    const double x2 = std::min(a.x + a.w, b.x + b.w);
    const double y2 = std::min(a.y + a.h, b.y + b.h);
    const double iw = x2 - x1, ih = y2 - y1;
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

double inner_iou(const Box& face, const Box& body) {
    const double x1 = std::max(face.x, body.x);
    const double y1 = std::max(face.y, body.y);
    const double x2 = std::min(face.x + face.w, body.x + body.w);
    const double y2 = std::min(face.y + face.h, body.y + body.h);
    const double iw = x2 - x1, ih = y2 - y1;
    if (iw <= 0 || ih <= 0) return 0.0;
    return iw * ih / face.area();
}

std::vector<std::pair<std::size_t, std::optional<std::size_t>>> associate_body_face(
    const std::vector<Detection>& bodies, const std::vector<Detection>& faces,
    double min_inner_iou) {
    std::vector<std::pair<std::size_t, std::optional<std::size_t>>> out;
    out.reserve(bodies.size());
    for (std::size_t b = 0; b < bodies.size(); ++b) out.emplace_back(b, std::nullopt);
    if (faces.empty() || bodies.empty()) return out;

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> cost(bodies.size(), std::vector<double>(faces.size()));
    for (std::size_t b = 0; b < bodies.size(); ++b)
        for (std::size_t f = 0; f < faces.size(); ++f) {
            const double v = inner_iou(faces[f].box, bodies[b].box);
            cost[b][f] = v >= min_inner_iou ? -v : inf;
        }
    for (const auto& [b, f] : linear_assignment(cost)) out[b].second = f;
    return out;
}

std::vector<Detection> cross_verify(const std::vector<Detection>& primary,
                                    const std::vector<Detection>& verifier,
                                    double conf_min, double min_iou) {
    std::vector<Detection> kept;
    for (const auto& p : primary) {
        bool ok = false;
        for (const auto& v : verifier) {
            if (v.kind != DetectionKind::body) continue;
            if (v.confidence >= conf_min && iou(p.box, v.box) >= min_iou) {
                ok = true;
                break;
            }
        }
        if (ok) kept.push_back(p);
    }
    return kept;
}

Box Track::predict(std::int64_t frame) const {
    const double dt = static_cast<double>(frame - last_update_frame);
    return Box{box.x + vx * dt, box.y + vy * dt, box.w + vw * dt, box.h + vh * dt};
}

std::vector<ByteTracker::Assignment> ByteTracker::step(
    std::int64_t frame, const std::vector<Detection>& bodies) {
    if (last_frame_ && frame <= *last_frame_)
        throw StreamOrderError("frame " + std::to_string(frame) +
                               " not after " + std::to_string(*last_frame_));
    last_frame_ = frame;

    std::vector<std::size_t> alive;
    for (std::size_t t = 0; t < tracks_.size(); ++t)
        if (tracks_[t].state != TrackState::removed) alive.push_back(t);

    std::vector<std::size_t> high, low;
    for (std::size_t d = 0; d < bodies.size(); ++d) {
        if (bodies[d].confidence >= cfg_.tau_high) high.push_back(d);
        else if (bodies[d].confidence >= cfg_.tau_low) low.push_back(d);
        // below tau_low: ignored entirely
    }

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<bool> track_matched(alive.size(), false);
    std::vector<ByteTracker::Assignment> result;

    auto associate = [&](const std::vector<std::size_t>& dets) {
        std::vector<std::size_t> free_tracks;
        for (std::size_t t = 0; t < alive.size(); ++t)
            if (!track_matched[t]) free_tracks.push_back(t);
        std::vector<bool> det_matched(dets.size(), false);
        if (!free_tracks.empty() && !dets.empty()) {
            std::vector<std::vector<double>> cost(free_tracks.size(),
                                                  std::vector<double>(dets.size()));
            for (std::size_t r = 0; r < free_tracks.size(); ++r) {
                const Track& tr = tracks_[alive[free_tracks[r]]];
                const Box pred = tr.predict(frame);
                for (std::size_t c = 0; c < dets.size(); ++c) {
                    const double v = iou(pred, bodies[dets[c]].box);
                    cost[r][c] = v >= cfg_.iou_min ? 1.0 - v : inf;
                }
            }
            for (const auto& [r, c] : linear_assignment(cost)) {
                Track& tr = tracks_[alive[free_tracks[r]]];
                const Box& nb = bodies[dets[c]].box;
                const double dt = static_cast<double>(frame - tr.last_update_frame);
                if (dt > 0) {
                    tr.vx = (nb.x - tr.box.x) / dt;
                    tr.vy = (nb.y - tr.box.y) / dt;
                    tr.vw = (nb.w - tr.box.w) / dt;
                    tr.vh = (nb.h - tr.box.h) / dt;
                }
                tr.box = nb;
                tr.state = TrackState::active;
                tr.frames_since_update = 0;
                tr.last_update_frame = frame;
                tr.history.emplace_back(frame, nb);
                track_matched[free_tracks[r]] = true;
                det_matched[c] = true;
                result.push_back({dets[c], tr.track_id});
            }
        }
        return det_matched;
    };

    auto high_matched = associate(high);
    associate(low); // low-confidence dets never spawn tracks

    for (std::size_t c = 0; c < high.size(); ++c) {
        if (high_matched[c]) continue;
        Track tr;
        tr.track_id = allocate_id();
        tr.box = bodies[high[c]].box;
        tr.state = TrackState::active;
        tr.last_update_frame = frame;
        tr.history.emplace_back(frame, tr.box);
        result.push_back({high[c], tr.track_id});
        tracks_.push_back(std::move(tr));
    }

    for (auto& tr : tracks_) {
        if (tr.state == TrackState::removed) continue;
        tr.frames_since_update = static_cast<int>(frame - tr.last_update_frame);
        if (tr.frames_since_update > cfg_.max_age) tr.state = TrackState::removed;
        else if (tr.frames_since_update > cfg_.patience && tr.state == TrackState::active)
            tr.state = TrackState::lost;
    }

    std::sort(result.begin(), result.end(),
              [](const Assignment& a, const Assignment& b) { return a.detection < b.detection; });
    return result;
}

double patch_mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("patch embedding length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

std::vector<PsrAssignment> psr_correct(std::int64_t frame,
                                       const std::vector<ByteTracker::Assignment>& assignments,
                                       const std::vector<Detection>& bodies,
                                       PatchMemory& memory, ByteTracker& id_source) {
    std::vector<PsrAssignment> out;
    std::set<int> used_this_frame;
    for (const auto& a : assignments) {
        const auto& emb = bodies[a.detection].embedding;
        if (!emb) throw ConfigError("psr: detection without embedding");

        int best_id = 0;
        double best_err = std::numeric_limits<double>::infinity();
        for (const auto& [id, patches] : memory.patches) {
            double err;
            if (memory.use_mean) {
                err = 0.0;
                for (const auto& [_, p] : patches) err += patch_mse(*emb, p);
                err /= static_cast<double>(patches.size());
            } else {
                err = std::numeric_limits<double>::infinity();
                for (const auto& [_, p] : patches) err = std::min(err, patch_mse(*emb, p));
            }
            if (err < best_err) {
                best_err = err;
                best_id = id;
            }
        }

        int id;
        if (!memory.patches.empty() && best_err <= memory.mse_threshold) {
            id = best_id;
        } else if (memory.patches.count(a.track_id)) {
            // far from every stored appearance, own id included: new subject
            id = id_source.allocate_id();
        } else {
            id = a.track_id; // genuinely new track keeps its fresh id
        }
        if (used_this_frame.count(id)) {
            // never merge two same-frame detections onto one id
            id = used_this_frame.count(a.track_id) ? id_source.allocate_id() : a.track_id;
            if (used_this_frame.count(id)) id = id_source.allocate_id();
        }
        used_this_frame.insert(id);

        auto& entry = memory.patches[id];
        if (entry.empty())
            entry.emplace_back(frame, *emb);
        else if (memory.refresh_period > 0 && frame % memory.refresh_period == 0)
            entry.emplace_back(frame, *emb);
        out.push_back({a.detection, id});
    }
    return out;
}

std::vector<TrackRow> run_tracker(const std::vector<Detection>& detections,
                                  const TrackerConfig& cfg) {
    std::vector<TrackRow> rows;
    // streams are independent per video
    std::vector<std::string> video_order;
    std::map<std::string, std::vector<Detection>> by_video;
    for (const auto& d : detections) {
        if (!by_video.count(d.video_id)) video_order.push_back(d.video_id);
        by_video[d.video_id].push_back(d);
    }

    for (const auto& vid : video_order) {
        const auto& stream = by_video[vid];
        for (std::size_t i = 1; i < stream.size(); ++i)
            if (stream[i].frame < stream[i - 1].frame)
                throw StreamOrderError("detections not sorted by frame in video " + vid);

        ByteTracker tracker(cfg);
        PatchMemory memory{{}, cfg.memory_refresh, cfg.mse_threshold, cfg.psr_use_mean};

        std::size_t i = 0;
        while (i < stream.size()) {
            const std::int64_t frame = stream[i].frame;
            std::vector<Detection> primary_bodies, faces, verifier;
            while (i < stream.size() && stream[i].frame == frame) {
                const auto& d = stream[i];
                if (d.source == DetectorSource::verifier) verifier.push_back(d);
                else if (d.kind == DetectionKind::face) faces.push_back(d);
                else primary_bodies.push_back(d);
                ++i;
            }
            std::vector<Detection> bodies =
                cfg.use_cross_verification
                    ? cross_verify(primary_bodies, verifier, cfg.verify_conf_min,
                                   cfg.verify_iou_min)
                    : primary_bodies;
            auto pairs = associate_body_face(bodies, faces, cfg.face_inner_iou_min);
            auto assignments = tracker.step(frame, bodies);

            std::vector<PsrAssignment> final_ids;
            bool all_embedded = !assignments.empty();
            for (const auto& a : assignments)
                all_embedded = all_embedded && bodies[a.detection].embedding.has_value();
            if (cfg.psr_enabled && all_embedded) {
                final_ids = psr_correct(frame, assignments, bodies, memory, tracker);
            } else {
                for (const auto& a : assignments) final_ids.push_back({a.detection, a.track_id});
            }

            for (const auto& fa : final_ids) {
                TrackRow row;
                row.video_id = vid;
                row.frame = frame;
                row.track_id = fa.track_id;
                row.box = bodies[fa.detection].box;
                row.gt_subject = bodies[fa.detection].gt_subject;
                if (pairs[fa.detection].second)
                    row.face_box = faces[*pairs[fa.detection].second].box;
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::size_t count_id_switches(const std::vector<TrackRow>& rows) {
    std::map<std::string, int> last_id;
    std::size_t switches = 0;
    for (const auto& r : rows) {
        if (!r.gt_subject) continue;
        auto it = last_id.find(*r.gt_subject);
        if (it != last_id.end() && it->second != r.track_id) ++switches;
        last_id[*r.gt_subject] = r.track_id;
    }
    return switches;
}

// ---- files ---------------------------------------------------------------

std::vector<Detection> read_detections_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    std::vector<Detection> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
        }
        Detection d;
        d.video_id = j.at("video_id").get<std::string>();
        d.frame = j.at("frame").get<std::int64_t>();
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "body") d.kind = DetectionKind::body;
        else if (kind == "face") d.kind = DetectionKind::face;
        else throw FormatError("line " + std::to_string(lineno) + ": bad kind " + kind);
        auto box = j.at("box").get<std::vector<double>>();
        if (box.size() != 4)
            throw FormatError("line " + std::to_string(lineno) + ": box needs 4 numbers");
        d.box = {box[0], box[1], box[2], box[3]};
        if (d.box.w <= 0 || d.box.h <= 0)
            throw FormatError("line " + std::to_string(lineno) + ": non-positive box size");
        d.confidence = j.at("confidence").get<double>();
        if (d.confidence < 0 || d.confidence > 1)
            throw FormatError("line " + std::to_string(lineno) + ": confidence out of [0,1]");
        if (j.contains("embedding"))
            d.embedding = j["embedding"].get<std::vector<double>>();
        if (j.contains("source"))
            d.source = j["source"].get<std::string>() == "verifier" ? DetectorSource::verifier
                                                                    : DetectorSource::primary;
        if (j.contains("gt_subject")) d.gt_subject = j["gt_subject"].get<std::string>();
        out.push_back(std::move(d));
    }
    return out;
}

void write_detections_jsonl(const std::string& path, const std::vector<Detection>& dets) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    for (const auto& d : dets) {
        nlohmann::json j;
        j["video_id"] = d.video_id;
        j["frame"] = d.frame;
        j["kind"] = d.kind == DetectionKind::body ? "body" : "face";
        j["box"] = {d.box.x, d.box.y, d.box.w, d.box.h};
        j["confidence"] = d.confidence;
        if (d.embedding) j["embedding"] = *d.embedding;
        j["source"] = d.source == DetectorSource::verifier ? "verifier" : "primary";
        if (d.gt_subject) j["gt_subject"] = *d.gt_subject;
        os << j.dump() << '\n';
    }
}

void write_tracks_csv(const std::string& path, const std::vector<TrackRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "video_id,frame,track_id,x,y,w,h,face_x,face_y,face_w,face_h\n";
    for (const auto& r : rows) {
        os << r.video_id << ',' << r.frame << ',' << r.track_id << ','
           << format_float(r.box.x) << ',' << format_float(r.box.y) << ','
           << format_float(r.box.w) << ',' << format_float(r.box.h);
        if (r.face_box)
            os << ',' << format_float(r.face_box->x) << ',' << format_float(r.face_box->y)
               << ',' << format_float(r.face_box->w) << ',' << format_float(r.face_box->h);
        else
            os << ",,,,";
        os << '\n';
    }
}

} // namespace biotk
