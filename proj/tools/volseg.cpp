// volseg: train, apply and evaluate the airway segmentation network.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure, 1 anything else.

#include <cstdio>
#include <array>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "volseg/augment.hpp"
#include "volseg/config.hpp"
#include "volseg/eval.hpp"
#include "volseg/log.hpp"
#include "volseg/phantom.hpp"
#include "volseg/report.hpp"
#include "volseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace volseg;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    int threads = 2;
    bool overwrite = false;
    std::vector<std::string> argv;
};

void refuse_existing(const fs::path& p, bool overwrite)
{
    if (!overwrite && fs::exists(p))
        throw IoError(p.string() + " exists (pass --overwrite to replace it)");
}

std::vector<Scan> load_scans(const std::vector<fs::path>& dirs)
{
    std::vector<Scan> scans;
    for (const fs::path& d : dirs)
        scans.push_back(load_scan(d));
    return scans;
}

RunConfig load_run_config(const fs::path& path, const Globals& g)
{
    RunConfig cfg = parse_config(path);
    if (g.seed)
        cfg.train.seed = *g.seed;
    cfg.train.queue_depth = g.threads > 1 ? std::max(cfg.train.queue_depth, 1) : 0;
    return cfg;
}

RunManifest start_manifest(const std::string& command, const Globals& g, const RunConfig& cfg,
                           const std::vector<fs::path>& inputs)
{
    RunManifest m;
    m.command = command;
    m.argv = g.argv;
    m.config = format_config(cfg);
    m.seed = cfg.train.seed;
    m.code_version = code_version();
    m.inputs = digest_inputs(inputs);
    m.started = utc_timestamp();
    return m;
}

std::vector<fs::path> all_scan_dirs(const RunConfig& cfg, bool with_test)
{
    std::vector<fs::path> dirs = cfg.train_scans;
    dirs.insert(dirs.end(), cfg.val_scans.begin(), cfg.val_scans.end());
    if (with_test)
        dirs.insert(dirs.end(), cfg.test_scans.begin(), cfg.test_scans.end());
    return dirs;
}

// ---------------------------------------------------------------------------

int cmd_train(const fs::path& config, const fs::path& out, const Globals& g)
{
    const RunConfig cfg = load_run_config(config, g);
    if (cfg.train_scans.empty() || cfg.val_scans.empty())
        throw ConfigError("data.train and data.val must each list at least one scan directory");
    for (const char* name : {"checkpoint.ckpt", "run_record.csv", "train.log", "manifest.json"})
        refuse_existing(out / name, g.overwrite);
    fs::create_directories(out);

    std::vector<fs::path> inputs{config};
    const auto dirs = all_scan_dirs(cfg, false);
    inputs.insert(inputs.end(), dirs.begin(), dirs.end());
    RunManifest manifest = start_manifest("train", g, cfg, inputs);
    write_manifest(manifest, out / "manifest.json");

    EventLog log(out / "train.log", true);
    const TrainResult result =
        train(load_scans(cfg.train_scans), load_scans(cfg.val_scans), cfg.train, &log);
    nn::write_checkpoint(result.checkpoint, out / "checkpoint.ckpt");
    write_text_file(out / "run_record.csv", run_record_csv(result.record), true);
    log.flush();

    manifest.finished = utc_timestamp();
    write_manifest(manifest, out / "manifest.json");
    std::cout << "best_epoch=" << result.record.best_epoch
              << " best_validation_loss=" << format_number(result.record.best_validation_loss)
              << " stopping_reason=" << result.record.stopping_reason << "\n";
    return 0;
}

struct PredictOverrides {
    std::optional<double> overlap;
    std::optional<std::array<int, 3>> taper_shrink;
};

int cmd_predict(const fs::path& ckpt_path, const fs::path& in, const fs::path& lung_path,
                double threshold, const fs::path& out_prob, const fs::path& out_seg,
                const PredictOverrides& over, const Globals& g)
{
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("--threshold must be in [0, 1]");
    refuse_existing(out_prob, g.overwrite);
    if (!out_seg.empty())
        refuse_existing(out_seg, g.overwrite);
    const nn::Checkpoint ckpt = nn::read_checkpoint(ckpt_path);
    const Unet model = load_model(ckpt);
    TrainConfig cfg = ckpt.metadata.contains("train") ? train_config_from_json(ckpt.metadata.at("train"))
                                                      : TrainConfig{};
    if (over.overlap)
        cfg.overlap = *over.overlap;
    if (over.taper_shrink)
        cfg.taper_shrink = *over.taper_shrink;
    validate(cfg);
    const Prediction pred = predict(read_volume(in), read_mask(lung_path), model, cfg, threshold);
    write_volume(pred.prob, out_prob);
    if (!out_seg.empty())
        write_mask(pred.seg, out_seg);
    std::cout << "segmented_voxels=" << count_foreground(pred.seg) << "\n";
    return 0;
}

int cmd_evaluate(const fs::path& seg_path, const fs::path& truth_path, const fs::path& exclude_path)
{
    const Mask seg = read_mask(seg_path);
    const Mask truth = read_mask(truth_path);
    require_same_dims(seg, truth, "evaluate");
    double dice;
    if (exclude_path.empty()) {
        dice = dice_coefficient(seg, truth);
    } else {
        const Mask exclude = read_mask(exclude_path);
        require_same_dims(seg, exclude, "evaluate");
        dice = dice_coefficient(seg, truth, exclude);
    }
    std::cout << "dice=" << format_number(dice) << "\n";
    return 0;
}

int cmd_froc(const fs::path& prob_path, const fs::path& truth_path, const fs::path& lung_path,
             const fs::path& exclude_path, const fs::path& csv, const fs::path& svg, const Globals& g)
{
    Scan scan;
    scan.id = prob_path.stem().string();
    const Volume prob = read_volume(prob_path);
    scan.truth = read_mask(truth_path);
    scan.lung = read_mask(lung_path);
    require_same_dims(prob, scan.truth, "froc");
    require_same_dims(prob, scan.lung, "froc");
    if (!exclude_path.empty()) {
        scan.exclude = read_mask(exclude_path);
        require_same_dims(prob, *scan.exclude, "froc");
    }
    const FrocCurve curve = froc(prob, scan.truth, scan.lung, default_thresholds());
    if (!csv.empty()) {
        std::string text = froc_csv_header() + "\n";
        for (const std::string& row : froc_csv_rows(scan.id, curve, prob, scan))
            text += row + "\n";
        write_text_file(csv, text, g.overwrite);
    }
    if (!svg.empty())
        emit_froc_svg(curve, svg, g.overwrite, "FROC " + scan.id);
    const FrocPoint& best = optimal_point(curve);
    std::cout << "optimal_threshold=" << format_number(best.threshold) << " tp=" << best.tp
              << " fp=" << best.fp << " sensitivity=" << format_number(best.sensitivity) << "\n";
    return 0;
}

int cmd_phantom(const fs::path& out, const std::array<int, 3>& dims, TreeSpec spec, const Globals& g)
{
    if (g.seed)
        spec.seed = *g.seed;
    Phantom ph = generate_phantom(spec, {dims[0], dims[1], dims[2]});
    Scan scan{out.filename().string(), std::move(ph.image), std::move(ph.lung), std::move(ph.truth),
              std::move(ph.exclude)};
    refuse_existing(out / "phantom.json", g.overwrite);
    save_scan(scan, out, g.overwrite);
    nlohmann::ordered_json meta{{"dims", dims}, {"tree", to_json(spec)}};
    write_text_file(out / "phantom.json", meta.dump(2) + "\n", true);
    std::cout << "truth_voxels=" << count_foreground(scan.truth)
              << " lung_voxels=" << count_foreground(scan.lung) << "\n";
    return 0;
}

int cmd_augment_preview(const fs::path& scan_dir, const std::string& kind_text, const fs::path& out,
                        double max_angle, double sigma, const Globals& g)
{
    const AugmentKind kind = parse_augment(kind_text);
    const Scan scan = load_scan(scan_dir);
    Rng rng(g.seed.value_or(0));
    std::vector<Mask> labels{scan.lung, scan.truth};
    Volume image = augment(scan.image, labels, kind, rng, max_angle, sigma);
    Scan result{scan.id, std::move(image), std::move(labels[0]), std::move(labels[1]), std::nullopt};
    save_scan(result, out, g.overwrite);
    return 0;
}

int cmd_replicate(const fs::path& config, const fs::path& out, const Globals& g)
{
    RunConfig cfg = load_run_config(config, g);
    if (cfg.train_scans.empty() || cfg.val_scans.empty() || cfg.test_scans.empty())
        throw ConfigError("data.train, data.val and data.test must each list at least one scan directory");
    for (const char* name : {"table1.csv", "froc.csv", "replicate.log", "manifest.json"})
        refuse_existing(out / name, g.overwrite);
    fs::create_directories(out);

    std::vector<fs::path> inputs{config};
    const auto dirs = all_scan_dirs(cfg, true);
    inputs.insert(inputs.end(), dirs.begin(), dirs.end());
    RunManifest manifest = start_manifest("replicate", g, cfg, inputs);
    write_manifest(manifest, out / "manifest.json");

    EventLog log(out / "replicate.log", true);
    const auto test = load_scans(cfg.test_scans);
    const Table1Report report = replicate_table1(load_scans(cfg.train_scans), load_scans(cfg.val_scans),
                                                 test, cfg.train, cfg.seeds, &log);

    std::string table = "setup,mean_dice";
    for (std::uint64_t s : cfg.seeds)
        table += ",dice_seed" + std::to_string(s) + ",threshold_seed" + std::to_string(s);
    table += "\n";
    std::string froc_text = "setup," + froc_csv_header() + "\n";
    for (const SetupResult& row : report.rows) {
        table += row.name + "," + format_number(row.mean_dice);
        for (std::size_t i = 0; i < row.seed_dice.size(); ++i)
            table += "," + format_number(row.seed_dice[i]) + "," + format_number(row.seed_threshold[i]);
        table += "\n";
        for (const std::string& r : row.froc_rows)
            froc_text += row.name + "," + r + "\n";
    }
    write_text_file(out / "table1.csv", table, true);
    write_text_file(out / "froc.csv", froc_text, true);
    std::cout << table;

    manifest.finished = utc_timestamp();
    write_manifest(manifest, out / "manifest.json");
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    Globals g;
    g.argv.assign(argv, argv + argc);

    CLI::App app{"Airway segmentation with a 3D U-Net: training, inference and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config file)");
    app.add_option("--threads", g.threads, "1 prepares patches inline; 2 or more adds a producer thread")
        ->check(CLI::PositiveNumber);
    app.add_flag("--overwrite", g.overwrite, "Replace existing output files");

    fs::path config, out;
    auto* train_cmd = app.add_subcommand("train", "Train a network from a config file");
    train_cmd->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out, "Output directory")->required();

    auto* rep_cmd = app.add_subcommand("replicate", "Train and evaluate the five loss/augmentation set-ups");
    rep_cmd->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
    rep_cmd->add_option("--out", out, "Output directory")->required();

    fs::path ckpt, in, lung, out_prob, out_seg;
    double threshold = 0.5;
    auto* pred_cmd = app.add_subcommand("predict", "Probability map and segmentation for one CT");
    pred_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--in", in, "CT volume")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--lung", lung, "Lung mask")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--threshold", threshold, "Segmentation threshold")->capture_default_str();
    pred_cmd->add_option("--out-prob", out_prob, "Probability volume to write")->required();
    pred_cmd->add_option("--out-seg", out_seg, "Segmentation mask to write");
    PredictOverrides over;
    pred_cmd->add_option("--overlap", over.overlap, "Window overlap fraction (default: from the checkpoint)");
    pred_cmd->add_option("--taper-shrink", over.taper_shrink,
                         "Taper shrinkage z,y,x in voxels; -1 uses the valid-convolution shrinkage")
        ->delimiter(',');

    fs::path seg, truth, exclude;
    auto* eval_cmd = app.add_subcommand("evaluate", "Dice of a segmentation against ground truth");
    eval_cmd->add_option("--seg", seg, "Segmentation mask")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--truth", truth, "Ground truth mask")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--exclude", exclude, "Voxels left out of the Dice")->check(CLI::ExistingFile);

    fs::path prob, csv, svg;
    auto* froc_cmd = app.add_subcommand("froc", "FROC curve of a probability map");
    froc_cmd->add_option("--prob", prob, "Probability volume")->required()->check(CLI::ExistingFile);
    froc_cmd->add_option("--truth", truth, "Ground truth mask")->required()->check(CLI::ExistingFile);
    froc_cmd->add_option("--lung", lung, "Lung mask")->required()->check(CLI::ExistingFile);
    froc_cmd->add_option("--exclude", exclude, "Voxels left out of the Dice column")
        ->check(CLI::ExistingFile);
    froc_cmd->add_option("--csv", csv, "CSV output");
    froc_cmd->add_option("--svg", svg, "SVG plot output");

    std::array<int, 3> dims{40, 32, 32};
    TreeSpec tree;
    auto* ph_cmd = app.add_subcommand("phantom", "Synthetic airway-tree scan");
    ph_cmd->add_option("--out", out, "Scan directory")->required();
    ph_cmd->add_option("--dims", dims, "depth height width")->delimiter(',')->capture_default_str();
    ph_cmd->add_option("--tree-depth", tree.depth, "Generations, root included")->capture_default_str();
    ph_cmd->add_option("--root-radius", tree.root_radius)->capture_default_str();
    ph_cmd->add_option("--root-length", tree.root_length)->capture_default_str();
    ph_cmd->add_option("--branch-angle", tree.branch_angle)->capture_default_str();
    ph_cmd->add_option("--contrast", tree.contrast)->capture_default_str();
    ph_cmd->add_option("--noise", tree.noise_sd, "Gaussian noise sd")->capture_default_str();

    std::string kind = "elastic";
    double max_angle = 10.0, sigma = 25.0;
    fs::path scan_dir;
    auto* aug_cmd = app.add_subcommand("augment-preview", "Write one augmented copy of a scan");
    aug_cmd->add_option("--scan", scan_dir, "Scan directory")->required()->check(CLI::ExistingDirectory);
    aug_cmd->add_option("--kind", kind, "none, rigid or elastic")->capture_default_str();
    aug_cmd->add_option("--out", out, "Output scan directory")->required();
    aug_cmd->add_option("--max-angle", max_angle, "Rigid rotation bound, degrees")->capture_default_str();
    aug_cmd->add_option("--sigma", sigma, "Elastic displacement sd, voxels")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (seed_opt->count())
        g.seed = seed;

    try {
        if (*train_cmd)
            return cmd_train(config, out, g);
        if (*rep_cmd)
            return cmd_replicate(config, out, g);
        if (*pred_cmd)
            return cmd_predict(ckpt, in, lung, threshold, out_prob, out_seg, over, g);
        if (*eval_cmd)
            return cmd_evaluate(seg, truth, exclude);
        if (*froc_cmd)
            return cmd_froc(prob, truth, lung, exclude, csv, svg, g);
        if (*ph_cmd)
            return cmd_phantom(out, dims, tree, g);
        if (*aug_cmd)
            return cmd_augment_preview(scan_dir, kind, out, max_angle, sigma, g);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
