#include "biotk/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace biotk {

namespace {
constexpr char kBinMagic[8] = {'F', 'S', 'T', 'P', 'L', 'T', '0', '1'};
constexpr double kNormEps = 1e-12;
} // namespace

const char* to_string(Modality m) {
    switch (m) {
        case Modality::face: return "face";
        case Modality::gait: return "gait";
        case Modality::body: return "body";
    }
    return "?";
}

const char* to_string(RangeClass r) {
    return r == RangeClass::close ? "close" : "long";
}

Modality modality_from_string(const std::string& s) {
    if (s == "face") return Modality::face;
    if (s == "gait") return Modality::gait;
    if (s == "body") return Modality::body;
    throw FormatError("unknown modality: " + s);
}

RangeClass range_class_from_string(const std::string& s) {
    if (s == "close") return RangeClass::close;
    if (s == "long") return RangeClass::long_range;
    throw FormatError("unknown range class: " + s);
}

bool is_missing(double v) { return std::isnan(v); }
double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

void normalize_vector(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    double n = std::sqrt(n2);
    if (n < kNormEps) throw NormalizationError("zero-norm vector");
    for (double& x : v) x /= n;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("cosine: length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    double d = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na < 1e-24 || nb < 1e-24) throw NormalizationError("cosine: zero-norm vector");
    return d / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> aggregate_gallery(const std::vector<Template>& templates) {
    if (templates.empty()) throw EmptyAggregationError("no templates to aggregate");
    const std::size_t d = templates.front().vector.size();
    double total_q = 0.0;
    for (const auto& t : templates) {
        if (t.vector.size() != d) throw DimensionError("aggregate: length mismatch");
        total_q += t.quality;
    }
    std::vector<double> acc(d, 0.0);
    for (const auto& t : templates) {
        const double w = total_q > kNormEps ? t.quality / total_q
                                            : 1.0 / static_cast<double>(templates.size());
        for (std::size_t i = 0; i < d; ++i) acc[i] += w * t.vector[i];
    }
    normalize_vector(acc);
    return acc;
}

ScoreMatrix build_score_matrix_serial(const ProbeRecord& probe,
                                      const std::vector<GalleryEntry>& gallery) {
    ScoreMatrix sm;
    sm.probe_id = probe.probe_id;
    sm.gallery_ids.reserve(gallery.size());
    for (const auto& g : gallery) sm.gallery_ids.push_back(g.subject_id);
    sm.scores.assign(gallery.size() * kNumModalities, missing_value());
    for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
        for (Modality m : kAllModalities) {
            const auto& pv = probe.vectors[static_cast<int>(m)];
            const auto& gv = gallery[gi].vectors[static_cast<int>(m)];
            if (pv && gv) sm.at(gi, m) = cosine_similarity(*pv, *gv);
        }
    }
    return sm;
}

ScoreMatrix build_score_matrix(const ProbeRecord& probe,
                               const std::vector<GalleryEntry>& gallery) {
    ScoreMatrix sm;
    sm.probe_id = probe.probe_id;
    sm.gallery_ids.reserve(gallery.size());
    for (const auto& g : gallery) sm.gallery_ids.push_back(g.subject_id);
    sm.scores.assign(gallery.size() * kNumModalities, missing_value());
    const std::int64_t n = static_cast<std::int64_t>(gallery.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t gi = 0; gi < n; ++gi) {
        for (Modality m : kAllModalities) {
            const auto& pv = probe.vectors[static_cast<int>(m)];
            const auto& gv = gallery[gi].vectors[static_cast<int>(m)];
            if (pv && gv) sm.at(gi, m) = cosine_similarity(*pv, *gv);
        }
    }
    return sm;
}

// ---- binary format ----------------------------------------------------------

namespace {

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(static_cast<std::uint8_t>(u));
    out.push_back(static_cast<std::uint8_t>(u >> 8));
    out.push_back(static_cast<std::uint8_t>(u >> 16));
    out.push_back(static_cast<std::uint8_t>(u >> 24));
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint32_t u = static_cast<std::uint32_t>(b[off]) |
                      (static_cast<std::uint32_t>(b[off + 1]) << 8) |
                      (static_cast<std::uint32_t>(b[off + 2]) << 16) |
                      (static_cast<std::uint32_t>(b[off + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace

std::vector<std::uint8_t> serialize_template(const Template& t, const ModalityConfig& cfg) {
    const std::size_t d = cfg.dim(t.modality);
    if (t.vector.size() != d)
        throw DimensionError("serialize: vector length " + std::to_string(t.vector.size()) +
                             " != " + std::to_string(d));
    std::vector<std::uint8_t> out;
    const bool with_quality = t.modality == Modality::face;
    out.reserve(4 * (d + (with_quality ? 1 : 0)));
    for (double x : t.vector) put_f32(out, static_cast<float>(x));
    if (with_quality) put_f32(out, static_cast<float>(t.quality));
    return out;
}

Template deserialize_template(std::span<const std::uint8_t> bytes, Modality m,
                              const ModalityConfig& cfg) {
    const std::size_t d = cfg.dim(m);
    const bool with_quality = m == Modality::face;
    const std::size_t need = 4 * (d + (with_quality ? 1 : 0));
    if (bytes.size() < need)
        throw FormatError("template payload truncated: " + std::to_string(bytes.size()) +
                          " of " + std::to_string(need) + " bytes");
    Template t;
    t.modality = m;
    t.vector.resize(d);
    for (std::size_t i = 0; i < d; ++i) t.vector[i] = get_f32(bytes, 4 * i);
    if (with_quality) t.quality = get_f32(bytes, 4 * d);
    return t;
}

namespace {

void put_str(std::ostream& os, const std::string& s) {
    auto n = static_cast<std::uint16_t>(s.size());
    char b[2] = {static_cast<char>(n & 0xff), static_cast<char>(n >> 8)};
    os.write(b, 2);
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw FormatError("truncated record");
    std::size_t n = b[0] | (static_cast<std::size_t>(b[1]) << 8);
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n)))
        throw FormatError("truncated record");
    return s;
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                 static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated record");
    return b[0] | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_templates_bin(const std::string& path, const std::vector<Template>& ts,
                         const ModalityConfig& cfg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os.write(kBinMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
        put_str(os, t.subject_id);
        put_str(os, t.media_id);
        char meta[2] = {static_cast<char>(t.modality), static_cast<char>(t.range_class)};
        os.write(meta, 2);
        // quality lives inside the payload for face, alongside it otherwise
        float q = static_cast<float>(t.quality);
        std::uint32_t qu;
        std::memcpy(&qu, &q, 4);
        put_u32(os, qu);
        auto payload = serialize_template(t, cfg);
        put_u32(os, static_cast<std::uint32_t>(payload.size()));
        os.write(reinterpret_cast<const char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size()));
    }
}

std::vector<Template> read_templates_bin(const std::string& path,
                                         const ModalityConfig& cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kBinMagic, 8) != 0)
        throw FormatError("bad magic in " + path);
    std::uint32_t n = get_u32(is);
    std::vector<Template> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string subject = get_str(is);
        std::string media = get_str(is);
        char meta[2];
        if (!is.read(meta, 2)) throw FormatError("truncated record");
        auto modality = static_cast<Modality>(meta[0]);
        auto range = static_cast<RangeClass>(meta[1]);
        std::uint32_t qu = get_u32(is);
        float q;
        std::memcpy(&q, &qu, 4);
        std::uint32_t len = get_u32(is);
        std::vector<std::uint8_t> payload(len);
        if (!is.read(reinterpret_cast<char*>(payload.data()), len))
            throw FormatError("truncated payload");
        Template t = deserialize_template(payload, modality, cfg);
        t.subject_id = std::move(subject);
        t.media_id = std::move(media);
        t.range_class = range;
        t.quality = q;
        out.push_back(std::move(t));
    }
    return out;
}

// ---- text formats -----------------------------------------------------------

std::string format_float(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::vector<Template> read_templates_jsonl(const std::string& path,
                                           const ModalityConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    std::vector<Template> out;
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
        Template t;
        try {
            t.subject_id = j.at("subject_id").get<std::string>();
            t.media_id = j.at("media_id").get<std::string>();
            t.modality = modality_from_string(j.at("modality").get<std::string>());
            t.vector = j.at("vector").get<std::vector<double>>();
            t.quality = j.at("quality").get<double>();
            t.range_class = range_class_from_string(j.at("range_class").get<std::string>());
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception& e) {
            throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (t.vector.size() != cfg.dim(t.modality))
            throw FormatError("line " + std::to_string(lineno) + ": vector length " +
                              std::to_string(t.vector.size()) + " != " +
                              std::to_string(cfg.dim(t.modality)) + " for " +
                              to_string(t.modality));
        if (t.quality < 0.0 || t.quality > 1.0)
            throw FormatError("line " + std::to_string(lineno) + ": quality out of [0,1]");
        out.push_back(std::move(t));
    }
    return out;
}

void write_templates_jsonl(const std::string& path, const std::vector<Template>& ts) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    for (const auto& t : ts) {
        nlohmann::json j;
        j["subject_id"] = t.subject_id;
        j["media_id"] = t.media_id;
        j["modality"] = to_string(t.modality);
        nlohmann::json vec = nlohmann::json::array();
        for (double x : t.vector) vec.push_back(x);
        j["vector"] = std::move(vec);
        j["quality"] = t.quality;
        j["range_class"] = to_string(t.range_class);
        os << j.dump() << '\n';
    }
}

void write_scores_csv(const std::string& path, const std::vector<ScoreMatrix>& mats) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "probe_id,gallery_id,face,gait,body,fused\n";
    for (const auto& sm : mats) {
        for (std::size_t g = 0; g < sm.rows(); ++g) {
            os << sm.probe_id << ',' << sm.gallery_ids[g];
            for (Modality m : kAllModalities) {
                double v = sm.at(g, m);
                os << ',' << (is_missing(v) ? "" : format_float(v));
            }
            os << ',';
            if (sm.fused && !is_missing((*sm.fused)[g])) os << format_float((*sm.fused)[g]);
            os << '\n';
        }
    }
}

std::vector<ScoreMatrix> read_scores_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty scores file: " + path);
    std::vector<ScoreMatrix> out;
    std::map<std::string, std::size_t> index;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        while (f.size() < 6) f.emplace_back();
        if (f.size() != 6)
            throw FormatError("line " + std::to_string(lineno) + ": expected 6 columns");
        auto it = index.find(f[0]);
        if (it == index.end()) {
            it = index.emplace(f[0], out.size()).first;
            out.push_back(ScoreMatrix{f[0], {}, {}, std::nullopt});
        }
        ScoreMatrix& sm = out[it->second];
        sm.gallery_ids.push_back(f[1]);
        for (Modality m : kAllModalities) {
            const std::string& c = f[2 + static_cast<int>(m)];
            sm.scores.push_back(c.empty() ? missing_value() : std::stod(c));
        }
        if (!f[5].empty()) {
            if (!sm.fused) sm.fused = std::vector<double>(sm.rows() - 1, missing_value());
            sm.fused->push_back(std::stod(f[5]));
        } else if (sm.fused) {
            sm.fused->push_back(missing_value());
        }
    }
    return out;
}

std::vector<GalleryEntry> build_gallery(const std::vector<Template>& templates,
                                        const std::vector<std::string>& distractor_ids) {
    std::map<std::string, std::array<std::vector<Template>, 3>> by_subject;
    for (const auto& t : templates) {
        Template n = t;
        normalize_vector(n.vector);
        by_subject[t.subject_id][static_cast<int>(t.modality)].push_back(std::move(n));
    }
    std::vector<GalleryEntry> out;
    out.reserve(by_subject.size());
    for (auto& [subject, groups] : by_subject) {
        GalleryEntry e;
        e.subject_id = subject;
        e.is_distractor = std::find(distractor_ids.begin(), distractor_ids.end(), subject) !=
                          distractor_ids.end();
        for (Modality m : kAllModalities) {
            auto& g = groups[static_cast<int>(m)];
            if (g.empty()) continue;
            e.vectors[static_cast<int>(m)] = aggregate_gallery(g);
            e.media_count += static_cast<int>(g.size());
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ProbeRecord> build_probes(const std::vector<Template>& templates) {
    std::map<std::string, ProbeRecord> by_media;
    for (const auto& t : templates) {
        auto& p = by_media[t.media_id];
        p.probe_id = t.media_id;
        if (!p.true_subject_id) p.true_subject_id = t.subject_id;
        else if (*p.true_subject_id != t.subject_id)
            throw FormatError("probe media " + t.media_id + " mixes subjects");
        std::vector<double> v = t.vector;
        normalize_vector(v);
        p.vectors[static_cast<int>(t.modality)] = std::move(v);
        p.quality[static_cast<int>(t.modality)] = t.quality;
    }
    std::vector<ProbeRecord> out;
    out.reserve(by_media.size());
    for (auto& [_, p] : by_media) out.push_back(std::move(p));
    return out;
}

} // namespace biotk
