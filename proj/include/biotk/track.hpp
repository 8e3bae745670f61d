#ifndef BIOTK_TRACK_HPP
#define BIOTK_TRACK_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biotk/errors.hpp"

namespace biotk {

struct Box {
    double x = 0, y = 0, w = 0, h = 0;
    double area() const { return w * h; }
};

double iou(const Box& a, const Box& b);

/// Intersection over the face box area, used for body-face pairing.
double inner_iou(const Box& face, const Box& body);

enum class DetectionKind : std::uint8_t { body, face };
enum class DetectorSource : std::uint8_t { primary, verifier };

struct Detection {
    std::string video_id;
    std::int64_t frame = 0;
    DetectionKind kind = DetectionKind::body;
    Box box;
    double confidence = 1.0;
    std::optional<std::vector<double>> embedding;
    DetectorSource source = DetectorSource::primary;
    std::optional<std::string> gt_subject; // synthetic scenarios only
};

/// Minimum-total-cost one-to-one assignment (shortest augmenting path).
/// Infinity marks forbidden pairs; forced-forbidden matches are dropped.
/// Rectangular matrices allowed. Returns (row, col) pairs sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> linear_assignment(
    const std::vector<std::vector<double>>& cost);

/// One-to-one body/face pairing maximizing total inner IoU; pairs under
/// min_inner_iou are dropped and those bodies keep face = none.
std::vector<std::pair<std::size_t, std::optional<std::size_t>>> associate_body_face(
    const std::vector<Detection>& bodies, const std::vector<Detection>& faces,
    double min_inner_iou);

/// Keep a primary body only when some verifier body with confidence >= conf_min
/// (inclusive) overlaps it by at least min_iou.
std::vector<Detection> cross_verify(const std::vector<Detection>& primary,
                                    const std::vector<Detection>& verifier,
                                    double conf_min = 0.7, double min_iou = 0.3);

enum class TrackState : std::uint8_t { active, lost, removed };

struct Track {
    int track_id = 0;
    Box box;
    double vx = 0, vy = 0, vw = 0, vh = 0; // per-frame deltas
    TrackState state = TrackState::active;
    int frames_since_update = 0;
    std::int64_t last_update_frame = 0;
    std::vector<std::pair<std::int64_t, Box>> history;

    Box predict(std::int64_t frame) const;
};

struct TrackerConfig {
    double tau_high = 0.6;
    double tau_low = 0.1;
    double iou_min = 0.2;
    int patience = 1;  // frames without update before a track goes lost
    int max_age = 30;  // frames without update before removal
    double verify_conf_min = 0.7;
    double verify_iou_min = 0.3;
    double face_inner_iou_min = 0.5;
    bool use_cross_verification = false;
    bool psr_enabled = true;
    int memory_refresh = 30;     // N: append patches every N frames
    double mse_threshold = 0.05; // per-dataset; no universal value
    bool psr_use_mean = false;   // min-MSE per id by default
};

/// Two-stage confidence-bucketed association over a constant-velocity
/// motion model.
class ByteTracker {
public:
    explicit ByteTracker(const TrackerConfig& cfg) : cfg_(cfg) {}

    struct Assignment {
        std::size_t detection;
        int track_id;
    };

    /// Processes one frame of body detections. Frames must be strictly
    /// increasing within a stream.
    std::vector<Assignment> step(std::int64_t frame, const std::vector<Detection>& bodies);

    const std::vector<Track>& tracks() const { return tracks_; }
    int allocate_id() { return next_id_++; }

private:
    TrackerConfig cfg_;
    std::vector<Track> tracks_;
    int next_id_ = 1;
    std::optional<std::int64_t> last_frame_;
};

/// Per-ID appearance memory for track ID correction.
struct PatchMemory {
    std::map<int, std::vector<std::pair<std::int64_t, std::vector<double>>>> patches;
    int refresh_period = 30;
    double mse_threshold = 0.05;
    bool use_mean = false;
};

double patch_mse(const std::vector<double>& a, const std::vector<double>& b);

struct PsrAssignment {
    std::size_t detection;
    int track_id;
};

/// Appearance-based ID correction. Reassigns each detection to the stored id
/// with the lowest MSE when under threshold; otherwise new detections either
/// keep their fresh id or receive a brand-new one. Never merges two
/// detections in one frame onto the same id.
std::vector<PsrAssignment> psr_correct(
    std::int64_t frame, const std::vector<ByteTracker::Assignment>& assignments,
    const std::vector<Detection>& bodies, PatchMemory& memory,
    ByteTracker& id_source);

struct TrackRow {
    std::string video_id;
    std::int64_t frame = 0;
    int track_id = 0;
    Box box;
    std::optional<Box> face_box;
    std::optional<std::string> gt_subject;
};

/// Full per-frame pipeline: cross-verify, body-face pairing, two-stage
/// association, optional appearance correction. Detections must be sorted
/// by frame.
std::vector<TrackRow> run_tracker(const std::vector<Detection>& detections,
                                  const TrackerConfig& cfg);

std::vector<Detection> read_detections_jsonl(const std::string& path);
void write_detections_jsonl(const std::string& path, const std::vector<Detection>& dets);
void write_tracks_csv(const std::string& path, const std::vector<TrackRow>& rows);

/// Ground-truth audit: number of frames where a subject's emitted track id
/// differs from the id it had on its previous appearance.
std::size_t count_id_switches(const std::vector<TrackRow>& rows);

struct ScenarioConfig {
    std::int64_t frames = 60;
    std::uint64_t seed = 1;
    double noise = 0.01;       // embedding jitter
    std::size_t embedding_dim = 8;
    bool with_verifier = true;
    bool with_faces = true;
};

/// Scripted two-subject crossing with a mutual occlusion gap and a direction
/// reversal inside it; constructed so IoU-only association swaps identities.
std::vector<Detection> generate_crossing_scenario(const ScenarioConfig& cfg);

} // namespace biotk

#endif
