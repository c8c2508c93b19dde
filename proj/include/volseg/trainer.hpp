#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volseg/augment.hpp"
#include "volseg/eval.hpp"
#include "volseg/log.hpp"
#include "volseg/losses.hpp"
#include "volseg/nn/adam.hpp"
#include "volseg/nn/checkpoint.hpp"
#include "volseg/patching.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class StoppingRule {
    no_improvement,   // stop after `patience` epochs without a new best
    increase_streak,  // stop after `patience` consecutive epoch-on-epoch increases
};

struct TrainConfig {
    LossKind loss = LossKind::dice;
    AugmentKind augmentation = AugmentKind::elastic;
    double lr = 1e-5;
    int max_epochs = 300;
    int patience = 15;
    StoppingRule stopping = StoppingRule::no_improvement;
    std::uint64_t seed = 0;
    bool paper_mode = true;  // (loss, augmentation) must be one of table1_setups()

    UnetConfig net;
    double overlap = 0.75;
    int crop_margin = 30;
    std::array<int, 3> taper_shrink{-1, -1, -1};  // −1: valid-convolution shrinkage
    double max_angle = 10.0;
    double elastic_sigma = 25.0;
    double epsilon = 1e-7;
    int queue_depth = 2;      // 0 = prepare patches inline
    float input_fill = 0.0f;  // image value outside the lung ROI
};

/// Throws ConfigError on the first violated rule.
void validate(const TrainConfig& cfg);

[[nodiscard]] nlohmann::ordered_json to_json(const TrainConfig& cfg);
/// Inverse of to_json; missing keys keep their defaults. Throws ConfigError.
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
[[nodiscard]] std::string_view to_string(AugmentKind kind);
[[nodiscard]] std::string setup_name(LossKind loss, AugmentKind aug);  // "dice-Elastic"

/// The five (loss, augmentation) set-ups, in table order.
struct Setup {
    LossKind loss;
    AugmentKind augmentation;
};
[[nodiscard]] const std::vector<Setup>& table1_setups();

struct Scan {
    std::string id;
    Volume image;
    Mask lung;
    Mask truth;
    std::optional<Mask> exclude;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_validation_loss = 0.0;
    std::string stopping_reason;  // "patience" | "max_epochs"
};

/// Fixed column order: epoch,train_loss,val_loss.
[[nodiscard]] std::string run_record_csv(const RunRecord& r);

class EarlyStopping {
public:
    EarlyStopping(int patience, StoppingRule rule);

    /// Records an epoch's validation loss; returns true if it is a new best.
    bool update(double val_loss);
    [[nodiscard]] bool should_stop() const { return counter_ >= patience_; }
    [[nodiscard]] int best_epoch() const { return best_epoch_; }
    [[nodiscard]] double best() const { return best_; }

private:
    int patience_;
    StoppingRule rule_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double best_ = 0.0;
    double last_ = 0.0;
    int counter_ = 0;
};

/// One image/ROI/truth patch, ready for the network.
struct PatchSample {
    Volume image;
    Mask lung;
    Mask truth;
};

/// Crops a scan per lung component, plans axial windows and serves
/// (optionally augmented) patches.
class PatchSource {
public:
    PatchSource(const std::vector<Scan>& scans, const TrainConfig& cfg);

    [[nodiscard]] std::size_t size() const { return refs_.size(); }
    [[nodiscard]] PatchSample sample(std::size_t index, AugmentKind kind, Rng& rng) const;

private:
    struct Unit {
        Volume image;
        Mask lung;
        Mask truth;
        WindowPlan plan;
    };
    struct Ref {
        std::size_t unit;
        std::size_t window;
    };
    float fill_;
    double max_angle_;
    double elastic_sigma_;
    std::vector<Unit> units_;
    std::vector<Ref> refs_;
};

struct TrainResult {
    nn::Checkpoint checkpoint;  // best-validation epoch
    RunRecord record;
};

/// Batch size 1, one Adam step per patch, fresh shuffle every epoch,
/// early stopping with keep-best.
[[nodiscard]] TrainResult train(const std::vector<Scan>& train_scans,
                                const std::vector<Scan>& val_scans, const TrainConfig& cfg,
                                EventLog* log = nullptr);

/// Rebuilds the network stored in a checkpoint (config + weights).
[[nodiscard]] Unet load_model(const nn::Checkpoint& ckpt);

struct Prediction {
    Volume prob;
    Mask seg;
};

/// crop per lung → windows → forward → tapered overlap average → zero
/// outside the lung → re-embed → seg = lung ∧ prob ≥ threshold.
[[nodiscard]] Prediction predict(const Volume& ct, const Mask& lung, const Unet& model,
                                 const TrainConfig& cfg, double threshold);

struct SetupResult {
    std::string name;
    LossKind loss;
    AugmentKind augmentation;
    std::vector<double> seed_dice;       // mean test Dice per seed
    std::vector<double> seed_threshold;  // optimal threshold per seed
    double mean_dice = 0.0;
    std::vector<std::string> froc_rows;  // CSV rows, see froc_csv_header()
};

struct Table1Report {
    std::vector<SetupResult> rows;
};

[[nodiscard]] std::string froc_csv_header();

/// FROC + Dice rows for one scan: scan_id,threshold,tp,fp,fn,sensitivity,dice.
[[nodiscard]] std::vector<std::string> froc_csv_rows(const std::string& scan_id,
                                                     const FrocCurve& curve, const Volume& prob,
                                                     const Scan& scan);

/// Pools several scans' curves (sums counts per threshold).
[[nodiscard]] FrocCurve pool_curves(const std::vector<FrocCurve>& curves);

/// Trains and evaluates every set-up in table1_setups() for each seed. Dice is taken at
/// the set-up's optimal threshold on the pooled test FROC, excluding each
/// scan's exclusion mask.
[[nodiscard]] Table1Report replicate_table1(const std::vector<Scan>& train_scans,
                                            const std::vector<Scan>& val_scans,
                                            const std::vector<Scan>& test_scans,
                                            const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                            EventLog* log = nullptr);

}  // namespace volseg
