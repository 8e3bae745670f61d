#ifndef BIOTK_CORE_HPP
#define BIOTK_CORE_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biotk/errors.hpp"

namespace biotk {

enum class Modality : std::uint8_t { face = 0, gait = 1, body = 2 };
enum class RangeClass : std::uint8_t { close = 0, long_range = 1 };

inline constexpr int kNumModalities = 3;
inline constexpr std::array<Modality, 3> kAllModalities{Modality::face, Modality::gait,
                                                        Modality::body};

const char* to_string(Modality m);
const char* to_string(RangeClass r);
Modality modality_from_string(const std::string& s);
RangeClass range_class_from_string(const std::string& s);

/// Embedding dimension per modality. Paper defaults; overridable for tests.
struct ModalityConfig {
    std::array<std::size_t, 3> dims{512, 8192, 2048};
    std::size_t dim(Modality m) const { return dims[static_cast<int>(m)]; }
};

/// One modality's embedding for one media item.
struct Template {
    std::string subject_id;
    std::string media_id;
    Modality modality = Modality::face;
    std::vector<double> vector;
    double quality = 1.0; // in [0,1]
    RangeClass range_class = RangeClass::close;
};

struct GalleryEntry {
    std::string subject_id;
    bool is_distractor = false;
    std::array<std::optional<std::vector<double>>, 3> vectors; // indexed by Modality
    int media_count = 0;
};

struct ProbeRecord {
    std::string probe_id;
    std::optional<std::string> true_subject_id; // absent => non-mated
    std::array<std::optional<std::vector<double>>, 3> vectors;
    std::array<double, 3> quality{1.0, 1.0, 1.0};
};

/// Per-probe similarity matrix, N_G rows x 3 modality columns in fixed
/// (face, gait, body) order. Absent entries are NaN (the MISSING sentinel).
struct ScoreMatrix {
    std::string probe_id;
    std::vector<std::string> gallery_ids;
    std::vector<double> scores; // row-major N_G x 3
    std::optional<std::vector<double>> fused;

    std::size_t rows() const { return gallery_ids.size(); }
    double at(std::size_t g, Modality m) const {
        return scores[g * kNumModalities + static_cast<int>(m)];
    }
    double& at(std::size_t g, Modality m) {
        return scores[g * kNumModalities + static_cast<int>(m)];
    }
};

bool is_missing(double v);
double missing_value();

/// In-place L2 normalization; throws NormalizationError on (near-)zero norm.
void normalize_vector(std::vector<double>& v);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Quality-weighted mean of same-subject, same-modality templates,
/// renormalized to unit length. Uniform weights when all qualities are zero.
std::vector<double> aggregate_gallery(const std::vector<Template>& templates);

ScoreMatrix build_score_matrix(const ProbeRecord& probe,
                               const std::vector<GalleryEntry>& gallery);
ScoreMatrix build_score_matrix_serial(const ProbeRecord& probe,
                                      const std::vector<GalleryEntry>& gallery);

// ---- bit-exact formats ----------------------------------------------------

/// Packed little-endian float32 payload. Face appends the quality scalar as a
/// 513th float; gait and body store the raw vector only (2052 / 32768 / 8192
/// bytes at default dimensions).
std::vector<std::uint8_t> serialize_template(const Template& t,
                                             const ModalityConfig& cfg = {});
/// Inverse of serialize_template; metadata other than quality must be
/// supplied by the container. Throws FormatError on truncation.
Template deserialize_template(std::span<const std::uint8_t> bytes, Modality m,
                              const ModalityConfig& cfg = {});

std::vector<Template> read_templates_jsonl(const std::string& path,
                                           const ModalityConfig& cfg = {});
void write_templates_jsonl(const std::string& path, const std::vector<Template>& ts);

void write_templates_bin(const std::string& path, const std::vector<Template>& ts,
                         const ModalityConfig& cfg = {});
std::vector<Template> read_templates_bin(const std::string& path,
                                         const ModalityConfig& cfg = {});

void write_scores_csv(const std::string& path, const std::vector<ScoreMatrix>& mats);
std::vector<ScoreMatrix> read_scores_csv(const std::string& path);

/// 9 significant digits, the text-format float convention.
std::string format_float(double v);

/// Group templates by subject and aggregate per modality.
std::vector<GalleryEntry> build_gallery(const std::vector<Template>& templates,
                                        const std::vector<std::string>& distractor_ids);

/// Group templates by media id into probe records (one probe per media).
std::vector<ProbeRecord> build_probes(const std::vector<Template>& templates);

} // namespace biotk

#endif
