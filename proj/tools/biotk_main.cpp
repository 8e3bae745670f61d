#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "biotk/core.hpp"
#include "biotk/eval.hpp"
#include "biotk/fusion.hpp"
#include "biotk/losses.hpp"
#include "biotk/track.hpp"
#include "biotk/turbsim.hpp"

namespace {

using namespace biotk;

// Applies key=value pairs from a config file to a parsed subcommand. Options
// already given on the command line keep their values; unknown keys are
// rejected.
void apply_config_file(CLI::App* sub, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    auto trim = [](const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') ||
                                (val.front() == '\'' && val.back() == '\'')))
            val = val.substr(1, val.size() - 2);
        auto* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
        if (!opt)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" +
                              key + "'");
        if (opt->count() > 0) continue; // command-line arguments win
        opt->add_result(val);
        opt->run_callback();
    }
}

void echo_config(const CLI::App* sub) {
    std::cerr << "[config] subcommand=" << sub->get_name() << "\n";
    for (const auto& line : CLI::detail::split(sub->config_to_str(true, false), '\n'))
        if (!line.empty()) std::cerr << "[config] " << line << "\n";
}

std::vector<Template> read_store(const std::string& path) {
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl")
        return read_templates_jsonl(path);
    return read_templates_bin(path);
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
    std::string input, output, export_jsonl;
};

int cmd_ingest(const IngestArgs& a) {
    auto templates = read_templates_jsonl(a.input);
    write_templates_bin(a.output, templates);
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (const auto& t : templates) ++counts[static_cast<int>(t.modality)];
    std::cout << "templates=" << templates.size() << " face=" << counts[0]
              << " gait=" << counts[1] << " body=" << counts[2] << "\n";
    if (!a.export_jsonl.empty()) write_templates_jsonl(a.export_jsonl, templates);
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string protocol, templates, report_json, report_csv, fusion_model;
    std::string qualities;
    std::uint64_t seed = 0;
};

std::map<std::string, std::array<double, 3>> read_quality_map(const std::string& path) {
    std::map<std::string, std::array<double, 3>> out;
    if (path.empty()) return out;
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    nlohmann::json j;
    is >> j;
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto v = it.value().get<std::vector<double>>();
        if (v.size() != 3) throw FormatError("quality entry needs 3 values: " + it.key());
        out[it.key()] = {v[0], v[1], v[2]};
    }
    return out;
}

int cmd_eval(const EvalArgs& a) {
    const ProtocolSpec spec = read_protocol_json(a.protocol);
    const auto templates = read_store(a.templates);

    std::map<std::string, std::vector<Template>> by_media;
    for (const auto& t : templates) by_media[t.media_id].push_back(t);

    std::vector<Template> gallery_templates, probe_templates;
    for (const auto& m : spec.gallery_media) {
        auto it = by_media.find(m);
        if (it == by_media.end()) throw ProtocolError("unknown gallery media: " + m);
        gallery_templates.insert(gallery_templates.end(), it->second.begin(),
                                 it->second.end());
    }
    for (const auto& m : spec.probe_media) {
        auto it = by_media.find(m);
        if (it == by_media.end()) throw ProtocolError("unknown probe media: " + m);
        probe_templates.insert(probe_templates.end(), it->second.begin(),
                               it->second.end());
    }

    const auto gallery = build_gallery(gallery_templates, spec.distractors);
    auto probes = build_probes(probe_templates);
    const auto qmap = read_quality_map(a.qualities);
    for (auto& p : probes) {
        auto it = qmap.find(p.probe_id);
        if (it != qmap.end()) p.quality = it->second;
    }

    std::optional<FusionModel> fusion;
    if (!a.fusion_model.empty()) fusion = load_fusion_model(a.fusion_model);

    const EvalReport report =
        run_protocol(gallery, probes, spec.config, fusion ? &*fusion : nullptr);
    if (!a.report_json.empty()) write_report_json(a.report_json, report);
    if (!a.report_csv.empty()) write_report_csv(a.report_csv, report);
    std::cout << "mated=" << report.mated_searches
              << " non_mated=" << report.non_mated_searches << " rows=" << report.rows.size()
              << "\n";
    return 0;
}

// ---- fusion -----------------------------------------------------------------

struct FuseTrainArgs {
    std::string scores, labels, output, qualities;
    std::string norm = "zscore";
    std::size_t experts = 2;
    int epochs = 200;
    double lr = 0.05;
    double margin = 0.3;
    std::uint64_t seed = 0;
};

NormKind parse_norm(const std::string& s) {
    if (s == "zscore") return NormKind::zscore;
    if (s == "minmax") return NormKind::minmax;
    throw ConfigError("norm must be zscore or minmax");
}

int cmd_fuse_train(const FuseTrainArgs& a) {
    const auto mats = read_scores_csv(a.scores);
    if (mats.empty()) throw InsufficientDataError("no score matrices in " + a.scores);

    std::map<std::string, std::string> labels;
    {
        std::ifstream is(a.labels);
        if (!is) throw FormatError("cannot open: " + a.labels);
        nlohmann::json j;
        is >> j;
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!it.value().is_null()) labels[it.key()] = it.value().get<std::string>();
    }
    const auto qmap = read_quality_map(a.qualities);

    std::array<std::vector<double>, 3> calibration;
    for (const auto& m : mats)
        for (std::size_t g = 0; g < m.rows(); ++g)
            for (Modality mod : kAllModalities) {
                const double v = m.at(g, mod);
                if (!is_missing(v)) calibration[static_cast<int>(mod)].push_back(v);
            }

    FusionModel model = make_default_fusion_model(a.experts, parse_norm(a.norm));
    model.norm = fit_normalizer(calibration, parse_norm(a.norm));

    std::vector<FusionTrainingProbe> probes;
    for (const auto& m : mats) {
        FusionTrainingProbe p;
        p.scores = m;
        auto qit = qmap.find(m.probe_id);
        if (qit != qmap.end()) p.quality = qit->second;
        auto lit = labels.find(m.probe_id);
        if (lit != labels.end()) {
            for (std::size_t g = 0; g < m.rows(); ++g)
                if (m.gallery_ids[g] == lit->second) p.mate_index = g;
            if (!p.mate_index)
                throw ProtocolError("label subject not in gallery for probe " + m.probe_id);
        }
        probes.push_back(std::move(p));
    }

    const auto report = train_fusion(model, probes, a.epochs, a.lr, a.margin);
    save_fusion_model(a.output, model);
    std::cout << "epochs=" << report.epoch_loss.size()
              << " final_loss=" << format_float(report.epoch_loss.back()) << "\n";
    return 0;
}

struct FuseApplyArgs {
    std::string scores, model, output, qualities;
    bool baseline = false;
    std::uint64_t seed = 0;
};

int cmd_fuse_apply(const FuseApplyArgs& a) {
    auto mats = read_scores_csv(a.scores);
    const FusionModel model = load_fusion_model(a.model);
    const auto qmap = read_quality_map(a.qualities);
    for (auto& m : mats) {
        std::array<double, 3> q{1.0, 1.0, 1.0};
        auto it = qmap.find(m.probe_id);
        if (it != qmap.end()) q = it->second;
        m.fused = a.baseline ? baseline_fuse(m, model.norm) : moe_fuse(m, q, model);
    }
    write_scores_csv(a.output, mats);
    std::cout << "fused=" << mats.size() << "\n";
    return 0;
}

// ---- loss-demo ---------------------------------------------------------------

struct LossDemoArgs {
    std::string batch;
    double alpha = 16.0, beta = 16.0, gamma = 16.0, lambda = 0.5;
    bool exclude_self = false;
    std::uint64_t seed = 0;
};

BatchPartition read_batch_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);

    struct Row {
        std::string subject;
        bool gallery = false;
        std::optional<std::vector<double>> vec;
        std::optional<std::vector<double>> score_row;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        Row r;
        r.subject = j.at("subject_id").get<std::string>();
        const auto split = j.at("split").get<std::string>();
        if (split != "gallery" && split != "probe")
            throw FormatError(path + ":" + std::to_string(lineno) +
                              ": split must be gallery or probe");
        r.gallery = split == "gallery";
        if (j.contains("vector")) r.vec = j["vector"].get<std::vector<double>>();
        if (j.contains("score_row"))
            r.score_row = j["score_row"].get<std::vector<double>>();
        if (!r.vec && !(r.gallery || r.score_row))
            throw FormatError(path + ":" + std::to_string(lineno) +
                              ": probe needs a vector or score_row");
        rows.push_back(std::move(r));
    }

    BatchPartition part;
    std::map<std::string, std::size_t> subject_index;
    std::map<std::string, std::size_t> exemplar_count;
    auto subject_of = [&](const std::string& s) {
        auto it = subject_index.find(s);
        if (it != subject_index.end()) return it->second;
        const std::size_t idx = part.subject_ids.size();
        subject_index[s] = idx;
        part.subject_ids.push_back(s);
        return idx;
    };

    std::vector<std::size_t> gallery_rows, probe_rows;
    std::map<std::string, std::size_t> gallery_col; // subject -> first column
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t s = subject_of(rows[i].subject);
        const std::size_t e = exemplar_count[rows[i].subject]++;
        if (rows[i].gallery) {
            if (!gallery_col.count(rows[i].subject))
                gallery_col[rows[i].subject] = part.gallery.size();
            part.gallery.push_back({s, e});
            gallery_rows.push_back(i);
        } else {
            part.probes.push_back({s, e});
            probe_rows.push_back(i);
        }
    }
    if (part.gallery.empty() || part.probes.empty())
        throw PartitionError("batch needs at least one gallery and one probe exemplar");

    for (std::size_t p = 0; p < probe_rows.size(); ++p) {
        auto it = gallery_col.find(rows[probe_rows[p]].subject);
        if (it != gallery_col.end())
            part.mated_probes.emplace_back(p, it->second);
        else
            part.non_mated_probes.push_back(p);
    }

    part.scores.assign(part.n_probes() * part.n_gallery(), 0.0);
    for (std::size_t p = 0; p < probe_rows.size(); ++p) {
        const Row& pr = rows[probe_rows[p]];
        if (pr.score_row) {
            if (pr.score_row->size() != part.n_gallery())
                throw ShapeError("score_row length != gallery size");
            for (std::size_t g = 0; g < part.n_gallery(); ++g)
                part.score(p, g) = (*pr.score_row)[g];
        } else {
            for (std::size_t g = 0; g < part.n_gallery(); ++g) {
                const Row& gr = rows[gallery_rows[g]];
                if (!gr.vec)
                    throw FormatError("gallery exemplar without a vector but probe " +
                                      std::to_string(p) + " has no score_row");
                part.score(p, g) = cosine_similarity(*pr.vec, *gr.vec);
            }
        }
    }
    part.validate();
    return part;
}

int cmd_loss_demo(const LossDemoArgs& a) {
    const BatchPartition part = read_batch_jsonl(a.batch);
    LossHyperparams hp;
    hp.alpha = a.alpha;
    hp.beta = a.beta;
    hp.gamma = a.gamma;
    hp.lambda = a.lambda;
    hp.softrank_exclude_self = a.exclude_self;
    hp.validate();

    const auto idl = l_idl(part, hp);
    std::vector<double> pooled;
    for (std::size_t p : part.non_mated_probes)
        for (std::size_t g = 0; g < part.n_gallery(); ++g)
            pooled.push_back(part.score(p, g));
    const auto rtm = l_rtm(pooled);
    const auto open = l_open(part, hp);
    double gn = 0.0;
    for (double g : open.grad) gn += g * g;

    nlohmann::json out{{"l_idl", idl.value},
                       {"l_rtm", rtm.value},
                       {"l_open", open.value},
                       {"grad_norm", std::sqrt(gn)},
                       {"probes", part.n_probes()},
                       {"gallery", part.n_gallery()}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---- track --------------------------------------------------------------------

struct TrackArgs {
    std::string detections, output;
    TrackerConfig cfg;
    std::uint64_t seed = 0;
};

int cmd_track(const TrackArgs& a) {
    const auto dets = read_detections_jsonl(a.detections);
    const auto rows = run_tracker(dets, a.cfg);
    write_tracks_csv(a.output, rows);
    bool has_gt = false;
    for (const auto& r : rows) has_gt = has_gt || r.gt_subject.has_value();
    std::cout << "rows=" << rows.size();
    if (has_gt) std::cout << " id_switches=" << count_id_switches(rows);
    std::cout << "\n";
    return 0;
}

// ---- scenario-gen ---------------------------------------------------------------

struct ScenarioArgs {
    std::string output;
    ScenarioConfig cfg;
};

int cmd_scenario_gen(const ScenarioArgs& a) {
    const auto dets = generate_crossing_scenario(a.cfg);
    write_detections_jsonl(a.output, dets);
    std::cout << "detections=" << dets.size() << "\n";
    return 0;
}

// ---- turbsim --------------------------------------------------------------------

struct TurbsimArgs {
    std::string input, output;
    TurbulenceParams params;
    ZernikeSpec spec;
    bool serial = false;
};

bool has_ext(const std::string& path, const std::string& ext) {
    return path.size() >= ext.size() &&
           path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
}

Image64 read_image(const std::string& path) {
    if (has_ext(path, ".pgm")) return read_pgm(path);
    if (has_ext(path, ".fsimg")) return read_fsimg(path);
    throw ConfigError("unknown image extension (want .pgm or .fsimg): " + path);
}

void write_image(const std::string& path, const Image64& img) {
    if (has_ext(path, ".pgm")) {
        write_pgm(path, img);
        return;
    }
    if (has_ext(path, ".fsimg")) {
        write_fsimg(path, img);
        return;
    }
    throw ConfigError("unknown image extension (want .pgm or .fsimg): " + path);
}

int cmd_turbsim(const TurbsimArgs& a) {
    const Image64 clean = read_image(a.input);
    const Image64 out = a.serial ? degrade_image_serial(clean, a.spec, a.params)
                                 : degrade_image(clean, a.spec, a.params);
    write_image(a.output, out);
    std::cout << "height=" << out.height << " width=" << out.width << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"biotk: open-set biometric evaluation, fusion, tracking and "
                 "turbulence simulation toolkit"};
    app.require_subcommand(1);
    std::string config_path;

    IngestArgs ingest;
    auto* s_ingest = app.add_subcommand("ingest", "Validate JSONL templates into a binary store");
    s_ingest->add_option("input", ingest.input, "templates.jsonl input")->required();
    s_ingest->add_option("--out", ingest.output, "binary store output path")->required();
    s_ingest->add_option("--export", ingest.export_jsonl,
                         "also re-export the validated templates as JSONL");
    s_ingest->add_option("--config", config_path, "key=value config file");

    EvalArgs eval;
    auto* s_eval = app.add_subcommand("eval", "Run an identification protocol and write reports");
    s_eval->add_option("--protocol", eval.protocol, "protocol.json")->required();
    s_eval->add_option("--templates", eval.templates, "template store (.bin or .jsonl)")
        ->required();
    s_eval->add_option("--report-json", eval.report_json, "report JSON output");
    s_eval->add_option("--report-csv", eval.report_csv, "report CSV output");
    s_eval->add_option("--fusion-model", eval.fusion_model, "fusion model JSON (adds fused channel)");
    s_eval->add_option("--qualities", eval.qualities,
                       "JSON map probe_id -> [face,gait,body] quality");
    s_eval->add_option("--seed", eval.seed, "random seed")->default_val(0);
    s_eval->add_option("--config", config_path, "key=value config file");

    FuseTrainArgs ft;
    auto* s_ft = app.add_subcommand("fuse-train", "Train the score fusion model");
    s_ft->add_option("--scores", ft.scores, "calibration scores.csv")->required();
    s_ft->add_option("--labels", ft.labels, "JSON map probe_id -> mated gallery subject")
        ->required();
    s_ft->add_option("--out", ft.output, "fusion model JSON output")->required();
    s_ft->add_option("--qualities", ft.qualities,
                     "JSON map probe_id -> [face,gait,body] quality");
    s_ft->add_option("--norm", ft.norm, "score normalization: zscore or minmax")
        ->default_val("zscore");
    s_ft->add_option("--experts", ft.experts, "number of fusion experts")->default_val(2);
    s_ft->add_option("--epochs", ft.epochs, "training epochs")->default_val(200);
    s_ft->add_option("--lr", ft.lr, "learning rate")->default_val(0.05);
    s_ft->add_option("--margin", ft.margin, "triplet margin")->default_val(0.3);
    s_ft->add_option("--seed", ft.seed, "random seed")->default_val(0);
    s_ft->add_option("--config", config_path, "key=value config file");

    FuseApplyArgs fa;
    auto* s_fa = app.add_subcommand("fuse-apply", "Add a fused column to a scores.csv");
    s_fa->add_option("--scores", fa.scores, "input scores.csv")->required();
    s_fa->add_option("--model", fa.model, "fusion model JSON")->required();
    s_fa->add_option("--out", fa.output, "output scores.csv with fused column")->required();
    s_fa->add_option("--qualities", fa.qualities,
                     "JSON map probe_id -> [face,gait,body] quality");
    s_fa->add_flag("--baseline", fa.baseline, "mean fusion instead of the gated experts");
    s_fa->add_option("--seed", fa.seed, "random seed")->default_val(0);
    s_fa->add_option("--config", config_path, "key=value config file");

    LossDemoArgs ld;
    auto* s_ld = app.add_subcommand("loss-demo", "Evaluate the open-set losses on a batch");
    s_ld->add_option("--batch", ld.batch, "batch.jsonl input")->required();
    s_ld->add_option("--alpha", ld.alpha, "detection sigmoid sharpness")->default_val(16.0);
    s_ld->add_option("--beta", ld.beta, "identification sigmoid sharpness")->default_val(16.0);
    s_ld->add_option("--gamma", ld.gamma, "softrank sigmoid sharpness")->default_val(16.0);
    s_ld->add_option("--lambda", ld.lambda, "relative threshold minimization weight")
        ->default_val(0.5);
    s_ld->add_flag("--exclude-self", ld.exclude_self, "drop the self term from softrank");
    s_ld->add_option("--seed", ld.seed, "random seed")->default_val(0);
    s_ld->add_option("--config", config_path, "key=value config file");

    TrackArgs tr;
    auto* s_tr = app.add_subcommand("track", "Run the tracking pipeline over detections");
    s_tr->add_option("--detections", tr.detections, "detections.jsonl input")->required();
    s_tr->add_option("--out", tr.output, "tracks.csv output")->required();
    s_tr->add_option("--tau-high", tr.cfg.tau_high, "high-confidence threshold")
        ->default_val(0.6);
    s_tr->add_option("--tau-low", tr.cfg.tau_low, "low-confidence threshold")->default_val(0.1);
    s_tr->add_option("--iou-min", tr.cfg.iou_min, "association IoU floor")->default_val(0.2);
    s_tr->add_option("--patience", tr.cfg.patience, "frames before a track goes lost")
        ->default_val(1);
    s_tr->add_option("--max-age", tr.cfg.max_age, "frames before a lost track is removed")
        ->default_val(30);
    s_tr->add_flag("--cross-verify", tr.cfg.use_cross_verification,
                   "require verifier confirmation of primary bodies");
    s_tr->add_option("--verify-conf-min", tr.cfg.verify_conf_min,
                     "verifier confidence floor")
        ->default_val(0.7);
    s_tr->add_option("--verify-iou-min", tr.cfg.verify_iou_min, "verifier IoU floor")
        ->default_val(0.3);
    s_tr->add_option("--face-iou-min", tr.cfg.face_inner_iou_min,
                     "body-face inner IoU floor")
        ->default_val(0.5);
    auto* psr_flag = s_tr->add_flag("--psr,!--no-psr", tr.cfg.psr_enabled,
                                    "appearance-based ID correction");
    psr_flag->default_val(true);
    s_tr->add_option("--memory-refresh", tr.cfg.memory_refresh,
                     "patch memory refresh period (frames)")
        ->default_val(30);
    s_tr->add_option("--mse-threshold", tr.cfg.mse_threshold,
                     "patch reassignment MSE threshold")
        ->default_val(0.05);
    s_tr->add_flag("--psr-mean", tr.cfg.psr_use_mean, "mean MSE per id instead of min");
    s_tr->add_option("--seed", tr.seed, "random seed")->default_val(0);
    s_tr->add_option("--config", config_path, "key=value config file");

    ScenarioArgs sc;
    auto* s_sc = app.add_subcommand("scenario-gen",
                                    "Generate the synthetic two-subject crossing scenario");
    s_sc->add_option("--out", sc.output, "detections.jsonl output")->required();
    s_sc->add_option("--frames", sc.cfg.frames, "number of frames")->default_val(60);
    s_sc->add_option("--noise", sc.cfg.noise, "embedding jitter std")->default_val(0.01);
    s_sc->add_option("--dim", sc.cfg.embedding_dim, "embedding dimension")->default_val(8);
    auto* ver_flag = s_sc->add_flag("--verifier,!--no-verifier", sc.cfg.with_verifier,
                                    "emit verifier body detections");
    ver_flag->default_val(true);
    auto* face_flag =
        s_sc->add_flag("--faces,!--no-faces", sc.cfg.with_faces, "emit face detections");
    face_flag->default_val(true);
    s_sc->add_option("--seed", sc.cfg.seed, "random seed")->default_val(1);
    s_sc->add_option("--config", config_path, "key=value config file");

    TurbsimArgs tb;
    auto* s_tb = app.add_subcommand("turbsim", "Tile-wise atmospheric degradation of an image");
    s_tb->add_option("input", tb.input, "input image (.pgm or .fsimg)")->required();
    s_tb->add_option("output", tb.output, "output image (.pgm or .fsimg)")->required();
    s_tb->add_option("--dr0", tb.params.d_over_r0, "turbulence strength D/r0 (0 disables blur)")
        ->default_val(3.0);
    s_tb->add_option("--noise", tb.params.noise_sigma, "additive noise std, image units")
        ->default_val(0.0);
    s_tb->add_option("--tile", tb.params.tile_size, "tile size in pixels")->default_val(64);
    s_tb->add_option("--max-noll", tb.spec.max_noll, "highest Noll mode")->default_val(15);
    s_tb->add_option("--grid", tb.spec.grid, "pupil grid size")->default_val(64);
    s_tb->add_option("--crop", tb.spec.crop, "PSF crop size (odd)")->default_val(33);
    s_tb->add_flag("--serial", tb.serial, "use the serial reference implementation");
    s_tb->add_option("--seed", tb.params.seed, "random seed")->default_val(0);
    s_tb->add_option("--config", config_path, "key=value config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) {
        try {
            apply_config_file(sub, config_path);
        } catch (const ConfigError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    }
    echo_config(sub);
    try {
        if (sub == s_ingest) return cmd_ingest(ingest);
        if (sub == s_eval) return cmd_eval(eval);
        if (sub == s_ft) return cmd_fuse_train(ft);
        if (sub == s_fa) return cmd_fuse_apply(fa);
        if (sub == s_ld) return cmd_loss_demo(ld);
        if (sub == s_tr) return cmd_track(tr);
        if (sub == s_sc) return cmd_scenario_gen(sc);
        if (sub == s_tb) return cmd_turbsim(tb);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ProtocolError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const PartitionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
