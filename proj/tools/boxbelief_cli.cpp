// boxbelief: batch front end for corner transforms, corner losses,
// uncertainty diagnostics, parameter-uncertainty recovery and synthetic scenes.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "boxbelief.hpp"

namespace fs = std::filesystem;
using namespace boxbelief;

namespace {

/// Where records go and how record-level failures are counted.
class RecordSink {
public:
    explicit RecordSink(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.emplace(path, std::ios::binary | std::ios::trunc);
            if (!*file_) {
                throw FormatError("cannot write " + path);
            }
        }
    }

    void emit(const Json& j) { out() << j.dump() << '\n'; }

    void error(Json j, const std::string& message) {
        j["error"] = message;
        emit(j);
        ++errors_;
    }

    [[nodiscard]] std::size_t errors() const { return errors_; }

private:
    std::ostream& out() { return file_ ? static_cast<std::ostream&>(*file_) : std::cout; }

    std::optional<std::ofstream> file_;
    std::size_t errors_ = 0;
};

int finish(const RecordSink& sink, std::size_t records, bool keep_going) {
    if (sink.errors() > 0) {
        std::cerr << "boxbelief: " << sink.errors() << " of " << records << " records failed\n";
        return keep_going ? 0 : 1;
    }
    return 0;
}

struct LabeledBox {
    std::size_t index;
    BoxParams box;
};

struct LabelFrame {
    std::vector<LabeledBox> boxes;
    std::optional<std::string> error;
};

LabelFrame load_label_frame(const fs::path& file, Convention convention) {
    LabelFrame frame;
    try {
        const auto labels = parse_labels(read_text_file(file));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!labels[i].dont_care()) {
                frame.boxes.push_back({i, label_to_box(labels[i], convention)});
            }
        }
    } catch (const Error& e) {
        frame.error = file.string() + ": " + e.what();
    }
    return frame;
}

/// Label files keyed by frame id (file stem). `path` is a file or a directory of *.txt.
std::map<std::string, fs::path> label_files(const fs::path& path) {
    std::map<std::string, fs::path> out;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".txt") {
                out[entry.path().stem().string()] = entry.path();
            }
        }
    } else if (fs::is_regular_file(path)) {
        out[path.stem().string()] = path;
    } else {
        throw FormatError("no such label file or directory: " + path.string());
    }
    return out;
}

/// Detection lines with their parse outcome, in input order.
struct DetectionLine {
    std::size_t line = 0;
    std::optional<DetectionRecord> record;
    std::string error;
};

std::vector<DetectionLine> load_detections(const fs::path& path) {
    std::vector<DetectionLine> out;
    const std::string text = read_text_file(path);
    for (const auto& [number, line] : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            continue;
        }
        DetectionLine d;
        d.line = number;
        try {
            d.record = parse_detection_line(line);
        } catch (const Error& e) {
            d.error = e.what();
        }
        out.push_back(std::move(d));
    }
    return out;
}

/// Highest-IoU label box, if any overlaps.
std::optional<std::pair<const LabeledBox*, double>> best_match(const BoxParams& box, const LabelFrame& frame) {
    std::optional<std::pair<const LabeledBox*, double>> best;
    for (const auto& lb : frame.boxes) {
        const double iou = iou3d(box, lb.box);
        if (iou > 0.0 && (!best || iou > best->second)) {
            best = std::make_pair(&lb, iou);
        }
    }
    return best;
}

Json record_head(std::string_view schema, const std::string& frame, std::size_t index) {
    return Json{{"schema", schema}, {"frame", frame}, {"index", index}};
}

// Subcommands.

struct TransformArgs {
    std::string labels;
    std::string detections;
    std::string convention = "kitti_ry";
    std::string out;
    bool keep_going = false;
};

int run_transform(const TransformArgs& a) {
    RecordSink sink(a.out);
    std::size_t records = 0;
    if (!a.labels.empty()) {
        const Convention conv = parse_convention(a.convention);
        for (const auto& [frame_id, file] : label_files(a.labels)) {
            try {
                const auto labels = parse_labels(read_text_file(file));
                for (std::size_t i = 0; i < labels.size(); ++i) {
                    if (labels[i].dont_care()) {
                        continue;
                    }
                    ++records;
                    Json j = record_head(kCornersSchema, frame_id, i);
                    j["source"] = "label";
                    j["convention"] = to_string(conv);
                    try {
                        j["corners"] = to_json(corners_from_box(label_to_box(labels[i], conv)));
                        sink.emit(j);
                    } catch (const Error& e) {
                        sink.error(j, e.what());
                    }
                }
            } catch (const Error& e) {
                ++records;
                sink.error(record_head(kCornersSchema, frame_id, 0), e.what());
            }
        }
    } else {
        const auto lines = load_detections(a.detections);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            ++records;
            const auto& d = lines[i];
            if (!d.record) {
                sink.error(Json{{"schema", kCornersSchema}, {"line", d.line}}, d.error);
                continue;
            }
            Json j = record_head(kCornersSchema, d.record->frame_id, i);
            j["source"] = "detection";
            j["convention"] = to_string(d.record->convention);
            j["corners"] = to_json(corners_from_box(d.record->box));
            sink.emit(j);
        }
    }
    return finish(sink, records, a.keep_going);
}

struct LossArgs {
    std::string labels;
    std::string detections;
    std::string convention = "kitti_ry";
    std::string out;
    bool keep_going = false;
};

int run_loss(const LossArgs& a) {
    const Convention conv = parse_convention(a.convention);
    std::map<std::string, LabelFrame> frames;
    for (const auto& [frame_id, file] : label_files(a.labels)) {
        frames.emplace(frame_id, load_label_frame(file, conv));
    }
    RecordSink sink(a.out);
    const auto lines = load_detections(a.detections);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& d = lines[i];
        if (!d.record) {
            sink.error(Json{{"schema", kLossSchema}, {"line", d.line}}, d.error);
            continue;
        }
        Json j = record_head(kLossSchema, d.record->frame_id, i);
        const auto it = frames.find(d.record->frame_id);
        if (it == frames.end()) {
            sink.error(j, "join error: no labels for frame '" + d.record->frame_id + "'");
            continue;
        }
        if (it->second.error) {
            sink.error(j, *it->second.error);
            continue;
        }
        const auto match = best_match(d.record->box, it->second);
        if (!match) {
            sink.error(j, "join error: no label overlaps the detection");
            continue;
        }
        j["label_index"] = match->first->index;
        j["iou"] = match->second;
        const LossValue loss = ensemble_loss(corners_from_box(match->first->box), d.record->belief());
        j["total"] = loss.total;
        j["per_component"] = grid_json(loss.per_component);
        sink.emit(j);
    }
    return finish(sink, lines.size(), a.keep_going);
}

struct DiagnoseArgs {
    std::string detections;
    std::string data_root;
    std::string labels_subdir = "label_2";
    std::string convention = "kitti_ry";
    double margin = 0.0;
    bool variance_scale = false;
    double bin_width = 5.0;
    double kld_threshold = kDefaultKldFlagThreshold;
    std::string out;
    std::string bins;
    std::string summary;
    bool keep_going = false;
};

struct CloudFrame {
    std::optional<PointCloud> cloud;
    std::string error;
    LabelFrame labels;
};

CloudFrame load_cloud_frame(const DiagnoseArgs& a, const std::string& frame_id, Convention conv) {
    CloudFrame f;
    const fs::path root(a.data_root);
    const fs::path velo = root / "velodyne" / (frame_id + ".bin");
    const fs::path calib = root / "calib" / (frame_id + ".txt");
    try {
        if (!fs::is_regular_file(velo)) {
            throw FormatError("missing point cloud " + velo.string());
        }
        if (!fs::is_regular_file(calib)) {
            throw FormatError("missing calibration " + calib.string());
        }
        f.cloud = velo_to_rect_cam(read_velodyne(read_binary_file(velo)), parse_calib(read_text_file(calib)));
    } catch (const Error& e) {
        f.error = e.what();
    }
    const fs::path label = root / a.labels_subdir / (frame_id + ".txt");
    if (fs::is_regular_file(label)) {
        f.labels = load_label_frame(label, conv);
    }
    return f;
}

int run_diagnose(const DiagnoseArgs& a) {
    if (!(a.bin_width > 0.0) || !(a.kld_threshold > 0.0) || a.margin < 0.0) {
        throw InvalidInput("bin width and KLD threshold must be positive, margin non-negative");
    }
    const Convention conv = parse_convention(a.convention);
    const DiagnoseOptions opts{a.margin, a.variance_scale ? UncertaintyScale::variance : UncertaintyScale::std_dev};
    RecordSink sink(a.out);
    std::map<std::string, CloudFrame> frames;
    std::vector<BoxDiagnostics> reports;
    double rho_sum = 0.0;
    std::size_t rho_count = 0;
    std::size_t flagged = 0;

    const auto lines = load_detections(a.detections);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& d = lines[i];
        if (!d.record) {
            sink.error(Json{{"schema", kDiagnosticsSchema}, {"line", d.line}}, d.error);
            continue;
        }
        const DetectionRecord& rec = *d.record;
        Json j = record_head(kDiagnosticsSchema, rec.frame_id, i);
        auto it = frames.find(rec.frame_id);
        if (it == frames.end()) {
            it = frames.emplace(rec.frame_id, load_cloud_frame(a, rec.frame_id, conv)).first;
        }
        const CloudFrame& frame = it->second;
        if (!frame.cloud) {
            sink.error(j, frame.error);
            continue;
        }
        std::optional<BoxParams> truth;
        if (const auto match = best_match(rec.box, frame.labels)) {
            truth = match->first->box;
        }
        try {
            const BoxDiagnostics diag = diagnose_box(rec.box, rec.belief(), *frame.cloud, truth, opts);
            j.update(to_json(diag, a.kld_threshold));
            j["scale"] = a.variance_scale ? "variance" : "std_dev";
            const RankCorrelation rc = spearman(diag.d, diag.sigma_ens);
            j["rank_correlation"] = rc.degenerate ? Json(nullptr) : Json(rc.rho);
            if (!rc.degenerate) {
                rho_sum += rc.rho;
                ++rho_count;
            }
            flagged += diag.kld_ud > a.kld_threshold ? 1 : 0;
            reports.push_back(diag);
            sink.emit(j);
        } catch (const Error& e) {
            sink.error(j, e.what());
        }
    }

    const auto bins = distance_binned_stats(reports, a.bin_width);
    if (!a.bins.empty()) {
        write_file(a.bins, format_bins_csv(bins));
    }
    const Json summary{{"records", lines.size()},
                       {"diagnosed", reports.size()},
                       {"errors", sink.errors()},
                       {"kld_flagged", flagged},
                       {"kld_threshold", a.kld_threshold},
                       {"bin_width", a.bin_width},
                       {"convention", to_string(conv)},
                       {"mean_rank_correlation", rho_count ? Json(rho_sum / static_cast<double>(rho_count)) : Json(nullptr)}};
    if (!a.summary.empty()) {
        write_file(a.summary, summary.dump() + "\n");
    }
    return finish(sink, lines.size(), a.keep_going);
}

struct RecoverArgs {
    std::string detections;
    std::string mode = "verbatim";
    std::size_t oracle = 0;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool keep_going = false;
};

int run_recover(const RecoverArgs& a) {
    LocationMode mode = LocationMode::verbatim;
    if (a.mode == "strict") {
        mode = LocationMode::strict;
    } else if (a.mode != "verbatim") {
        throw InvalidInput("unknown recovery mode: " + a.mode);
    }
    if (a.oracle > 0 && !a.seed) {
        throw InvalidInput("--oracle requires --seed");
    }
    RecordSink sink(a.out);
    const auto lines = load_detections(a.detections);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& d = lines[i];
        if (!d.record) {
            sink.error(Json{{"schema", kRecoveredSchema}, {"line", d.line}}, d.error);
            continue;
        }
        Json j = record_head(kRecoveredSchema, d.record->frame_id, i);
        j["convention"] = to_string(d.record->convention);
        try {
            const CornerBelief belief = d.record->belief();
            j.update(to_json(recover_box(belief, mode)));
            if (a.oracle > 0) {
                j["oracle_samples"] = a.oracle;
                j["oracle_seed"] = *a.seed + i;
                j["oracle_variance"] = variances_json(mc_variance_oracle(d.record->box, belief, a.oracle, *a.seed + i));
            }
            sink.emit(j);
        } catch (const Error& e) {
            sink.error(j, e.what());
        }
    }
    return finish(sink, lines.size(), a.keep_going);
}

struct SynthArgs {
    std::string out;
    SceneSpec spec;
    std::optional<std::uint64_t> seed;
};

std::string frame_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return buf;
}

int run_synth(SynthArgs a) {
    if (!a.seed) {
        throw InvalidInput("synth requires --seed");
    }
    a.spec.seed = *a.seed;
    const auto samples = sample_scene(a.spec);
    const fs::path root(a.out);
    for (const char* sub : {"label_2", "velodyne", "calib"}) {
        fs::create_directories(root / sub);
    }
    std::vector<DetectionRecord> detections;
    const std::string calib = format_calib(CalibMatrices::identity());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string name = frame_name(i);
        KittiLabel base;
        base.type = "Car";
        base.bbox2d = {0.0, 0.0, 0.0, 0.0};
        write_file(root / "label_2" / (name + ".txt"), format_label(box_to_label(s.gt_box, Convention::kitti_ry, base)) + "\n");
        write_file(root / "velodyne" / (name + ".bin"), write_velodyne(s.cloud));
        write_file(root / "calib" / (name + ".txt"), calib);
        detections.push_back({name, s.gt_box, s.true_belief.diversities(), 1.0, Convention::kitti_ry});
    }
    write_file(root / "detections.jsonl", write_detections(detections));
    const SceneSpec& sp = a.spec;
    const Json meta{{"schema", "boxbelief.scene.v1"},
                    {"seed", sp.seed},
                    {"n_boxes", sp.n_boxes},
                    {"range", {sp.range_min, sp.range_max}},
                    {"half_fov", sp.half_fov},
                    {"center_y", sp.center_y},
                    {"points_per_m2_at_10m", sp.points_per_m2_at_10m},
                    {"point_noise", sp.point_noise},
                    {"noise_b_near", sp.noise_b_near},
                    {"noise_b_far", sp.noise_b_far},
                    {"convention", "kitti_ry"}};
    write_file(root / "scene.json", meta.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Corner-based probabilistic 3D bounding box toolkit"};
    app.require_subcommand(1);

    TransformArgs ta;
    auto* transform = app.add_subcommand("transform", "Box parameters to 8 corners (JSON lines)");
    auto* t_labels = transform->add_option("--labels", ta.labels, "KITTI label file or directory");
    auto* t_dets = transform->add_option("--detections", ta.detections, "boxbelief.v1 detections (JSON lines)")->check(CLI::ExistingFile);
    t_labels->excludes(t_dets);
    transform->add_option("--convention", ta.convention, "Label yaw convention")->check(CLI::IsMember({"verbatim", "kitti_ry"}));
    transform->add_option("-o,--out", ta.out, "Output file (default stdout)");
    transform->add_flag("--keep-going", ta.keep_going, "Exit 0 even if some records fail");

    LossArgs la;
    auto* loss = app.add_subcommand("loss", "Corner Laplace loss of detections against labels");
    loss->add_option("--labels", la.labels, "KITTI label file or directory")->required();
    loss->add_option("--detections", la.detections, "boxbelief.v1 detections")->required()->check(CLI::ExistingFile);
    loss->add_option("--convention", la.convention, "Label yaw convention")->check(CLI::IsMember({"verbatim", "kitti_ry"}));
    loss->add_option("-o,--out", la.out, "Output file (default stdout)");
    loss->add_flag("--keep-going", la.keep_going, "Exit 0 even if some records fail");

    DiagnoseArgs da;
    auto* diagnose = app.add_subcommand("diagnose", "Uncertainty diagnostics against point clouds");
    diagnose->add_option("--detections", da.detections, "boxbelief.v1 detections")->required()->check(CLI::ExistingFile);
    diagnose->add_option("--data-root", da.data_root, "Directory with velodyne/, calib/ and label_2/")->required()->check(CLI::ExistingDirectory);
    diagnose->add_option("--labels-subdir", da.labels_subdir, "Label directory under the data root");
    diagnose->add_option("--convention", da.convention, "Label yaw convention")->check(CLI::IsMember({"verbatim", "kitti_ry"}));
    diagnose->add_option("--margin", da.margin, "Box membership margin in meters");
    diagnose->add_flag("--variance-scale", da.variance_scale, "Normalize ensemble variances instead of standard deviations");
    diagnose->add_option("--bin-width", da.bin_width, "Distance bin width in meters");
    diagnose->add_option("--kld-threshold", da.kld_threshold, "KLD-UD flag threshold");
    diagnose->add_option("-o,--out", da.out, "Per-box records (default stdout)");
    diagnose->add_option("--bins", da.bins, "Distance-binned CSV output");
    diagnose->add_option("--summary", da.summary, "Summary JSON output");
    diagnose->add_flag("--keep-going", da.keep_going, "Exit 0 even if some records fail");

    RecoverArgs ra;
    auto* recover = app.add_subcommand("recover", "Recover box parameter variances from corner beliefs");
    recover->add_option("--detections", ra.detections, "boxbelief.v1 detections")->required()->check(CLI::ExistingFile);
    recover->add_option("--mode", ra.mode, "Location variance rule")->check(CLI::IsMember({"verbatim", "strict"}));
    recover->add_option("--oracle", ra.oracle, "Append Monte Carlo variances from this many draws");
    recover->add_option("--seed", ra.seed, "Seed for the Monte Carlo oracle");
    recover->add_option("-o,--out", ra.out, "Output file (default stdout)");
    recover->add_flag("--keep-going", ra.keep_going, "Exit 0 even if some records fail");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Write a synthetic scene in KITTI layout");
    synth->add_option("-o,--out", sa.out, "Output directory")->required();
    synth->add_option("--seed", sa.seed, "Random seed")->required();
    synth->add_option("--n-boxes", sa.spec.n_boxes, "Number of boxes (one frame each)");
    synth->add_option("--range-min", sa.spec.range_min, "Minimum range in meters");
    synth->add_option("--range-max", sa.spec.range_max, "Maximum range in meters");
    synth->add_option("--density", sa.spec.points_per_m2_at_10m, "Points per square meter at 10 m");
    synth->add_option("--point-noise", sa.spec.point_noise, "Point displacement along face normals in meters");
    synth->add_option("--noise-near", sa.spec.noise_b_near, "Laplace diversity of the four near corners");
    synth->add_option("--noise-far", sa.spec.noise_b_far, "Laplace diversity of the four far corners");
    synth->add_option("--observations", sa.spec.n_observations, "Corner observations per box");

    CLI11_PARSE(app, argc, argv);

    try {
        if (transform->parsed()) {
            if (ta.labels.empty() == ta.detections.empty()) {
                throw InvalidInput("transform needs exactly one of --labels or --detections");
            }
            return run_transform(ta);
        }
        if (loss->parsed()) {
            return run_loss(la);
        }
        if (diagnose->parsed()) {
            return run_diagnose(da);
        }
        if (recover->parsed()) {
            return run_recover(ra);
        }
        if (synth->parsed()) {
            return run_synth(sa);
        }
    } catch (const std::exception& e) {
        std::cerr << "boxbelief: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
