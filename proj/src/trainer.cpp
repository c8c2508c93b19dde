#include "volseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <variant>

namespace volseg {

namespace {

// Stream tags keep shuffling, training and validation draws independent.
constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::uint64_t kTrainTag = 0x545241494eULL;
constexpr std::uint64_t kValTag = 0x56414cULL;

nn::Tensor to_tensor(const Volume& v)
{
    const Dims& d = v.dims();
    return nn::Tensor({1, 1, d.depth, d.height, d.width}, v.data());
}

nn::Tensor to_tensor(const Mask& m)
{
    const Dims& d = m.dims();
    return nn::Tensor({1, 1, d.depth, d.height, d.width},
                      std::vector<float>(m.data().begin(), m.data().end()));
}

void mask_image(Volume& img, const Mask& lung, float fill)
{
    for (std::size_t i = 0; i < img.size(); ++i)
        if (!lung[i])
            img[i] = fill;
}

std::string format_loss(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Single-producer / single-consumer queue with a fixed capacity.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(T item)
    {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_)
            return;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
    }

    T pop()
    {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty(); });
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close()
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<T> items_;
    bool closed_ = false;
    std::mutex mutex_;
    std::condition_variable not_full_, not_empty_;
};

// Runs `make(k)` for k in [0, n) on a producer thread and hands the results
// to `consume(k, item)` in order. depth 0 runs everything inline.
template <typename Make, typename Consume>
void pipeline(std::size_t n, std::size_t depth, Make make, Consume consume)
{
    using Item = decltype(make(std::size_t{0}));
    if (depth == 0) {
        for (std::size_t k = 0; k < n; ++k)
            consume(k, make(k));
        return;
    }
    using Slot = std::variant<Item, std::exception_ptr>;
    BoundedQueue<Slot> queue(depth);
    std::jthread producer([&] {
        for (std::size_t k = 0; k < n; ++k) {
            try {
                queue.push(Slot(make(k)));
            } catch (...) {
                queue.push(Slot(std::current_exception()));
                return;
            }
        }
    });
    try {
        for (std::size_t k = 0; k < n; ++k) {
            Slot slot = queue.pop();
            if (auto* err = std::get_if<std::exception_ptr>(&slot))
                std::rethrow_exception(*err);
            consume(k, std::move(std::get<Item>(slot)));
        }
    } catch (...) {
        queue.close();
        throw;
    }
}

nn::Checkpoint make_checkpoint(const Unet& model, const nn::AdamState& state, const TrainConfig& cfg,
                               int epoch, double val_loss)
{
    nn::Checkpoint ckpt;
    ckpt.metadata["kind"] = "volseg-unet";
    ckpt.metadata["net"] = to_json(model.config());
    ckpt.metadata["train"] = to_json(cfg);
    ckpt.metadata["epoch"] = epoch;
    ckpt.metadata["validation_loss"] = val_loss;
    ckpt.metadata["adam"] = {{"step", state.step},
                             {"lr", state.lr},
                             {"beta1", state.beta1},
                             {"beta2", state.beta2},
                             {"eps", state.eps}};
    model.store(ckpt);
    const auto names = model.parameter_names();
    const auto params = model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const nn::Shape& s = params[i].shape();
        const std::vector<int> shape{s.n, s.c, s.d, s.h, s.w};
        ckpt.arrays.push_back({"adam.m/" + names[i], shape, state.m[i]});
        ckpt.arrays.push_back({"adam.v/" + names[i], shape, state.v[i]});
    }
    return ckpt;
}

Mask empty_like(const Mask& m) { return Mask(m.dims(), m.spacing()); }

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(AugmentKind kind)
{
    switch (kind) {
    case AugmentKind::none:
        return "none";
    case AugmentKind::rigid:
        return "rigid";
    case AugmentKind::elastic:
        return "elastic";
    }
    return "none";
}

std::string setup_name(LossKind loss, AugmentKind aug)
{
    std::string a(to_string(aug));
    a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
    return std::string(loss == LossKind::dice ? "dice" : "wBCE") + "-" + a;
}

const std::vector<Setup>& table1_setups()
{
    static const std::vector<Setup> setups{{LossKind::wbce, AugmentKind::none},
                                           {LossKind::wbce, AugmentKind::rigid},
                                           {LossKind::dice, AugmentKind::none},
                                           {LossKind::dice, AugmentKind::rigid},
                                           {LossKind::dice, AugmentKind::elastic}};
    return setups;
}

void validate(const TrainConfig& cfg)
{
    validate(cfg.net);
    if (cfg.patience < 1)
        throw ConfigError("patience must be >= 1");
    if (cfg.max_epochs < 1)
        throw ConfigError("max_epochs must be >= 1");
    if (!(cfg.lr > 0.0))
        throw ConfigError("lr must be > 0");
    if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0))
        throw ConfigError("overlap must be in [0, 1)");
    if (cfg.crop_margin < 0)
        throw ConfigError("crop_margin must be >= 0");
    for (int v : cfg.taper_shrink)
        if (v < -1)
            throw ConfigError("taper_shrink entries must be >= -1 (-1 = valid-convolution shrinkage)");
    if (cfg.max_angle < 0.0)
        throw ConfigError("max_angle must be >= 0");
    if (cfg.elastic_sigma < 0.0)
        throw ConfigError("elastic_sigma must be >= 0");
    if (!(cfg.epsilon > 0.0))
        throw ConfigError("epsilon must be > 0");
    if (cfg.queue_depth < 0)
        throw ConfigError("queue_depth must be >= 0");
    if (cfg.paper_mode) {
        const auto& s = table1_setups();
        const bool known = std::any_of(s.begin(), s.end(), [&](const Setup& x) {
            return x.loss == cfg.loss && x.augmentation == cfg.augmentation;
        });
        if (!known)
            throw ConfigError("loss/augmentation pair " + setup_name(cfg.loss, cfg.augmentation) +
                              " is not one of the five table set-ups (set paper_mode = false to allow it)");
    }
}

nlohmann::ordered_json to_json(const TrainConfig& cfg)
{
    return {{"loss", to_string(cfg.loss)},
            {"augmentation", to_string(cfg.augmentation)},
            {"lr", cfg.lr},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"stopping", cfg.stopping == StoppingRule::no_improvement ? "no_improvement"
                                                                      : "increase_streak"},
            {"seed", cfg.seed},
            {"paper_mode", cfg.paper_mode},
            {"net", to_json(cfg.net)},
            {"overlap", cfg.overlap},
            {"crop_margin", cfg.crop_margin},
            {"taper_shrink", cfg.taper_shrink},
            {"max_angle", cfg.max_angle},
            {"elastic_sigma", cfg.elastic_sigma},
            {"epsilon", cfg.epsilon},
            {"input_fill", cfg.input_fill}};
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j)
{
    TrainConfig c;
    try {
        if (j.contains("loss"))
            c.loss = j.at("loss").get<std::string>() == "wbce" ? LossKind::wbce : LossKind::dice;
        if (j.contains("augmentation")) {
            const auto a = j.at("augmentation").get<std::string>();
            c.augmentation = a == "none"    ? AugmentKind::none
                             : a == "rigid" ? AugmentKind::rigid
                                            : AugmentKind::elastic;
        }
        c.lr = j.value("lr", c.lr);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        if (j.contains("stopping"))
            c.stopping = j.at("stopping").get<std::string>() == "increase_streak"
                             ? StoppingRule::increase_streak
                             : StoppingRule::no_improvement;
        c.seed = j.value("seed", c.seed);
        c.paper_mode = j.value("paper_mode", c.paper_mode);
        if (j.contains("net"))
            c.net = unet_config_from_json(j.at("net"));
        c.overlap = j.value("overlap", c.overlap);
        c.crop_margin = j.value("crop_margin", c.crop_margin);
        c.taper_shrink = j.value("taper_shrink", c.taper_shrink);
        c.max_angle = j.value("max_angle", c.max_angle);
        c.elastic_sigma = j.value("elastic_sigma", c.elastic_sigma);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.input_fill = j.value("input_fill", c.input_fill);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
    }
    return c;
}

std::string run_record_csv(const RunRecord& r)
{
    std::string out = "epoch,train_loss,val_loss\n";
    for (const auto& e : r.epochs)
        out += std::to_string(e.epoch) + "," + format_loss(e.train_loss) + "," +
               format_loss(e.val_loss) + "\n";
    return out;
}

EarlyStopping::EarlyStopping(int patience, StoppingRule rule) : patience_(patience), rule_(rule)
{
    if (patience < 1)
        throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double val_loss)
{
    ++epoch_;
    const bool first = epoch_ == 1;
    const bool improved = first || val_loss < best_;
    if (improved) {
        best_ = val_loss;
        best_epoch_ = epoch_;
    }
    if (rule_ == StoppingRule::no_improvement)
        counter_ = improved ? 0 : counter_ + 1;
    else
        counter_ = !first && val_loss > last_ ? counter_ + 1 : 0;
    last_ = val_loss;
    return improved;
}

// ---------------------------------------------------------------------------

PatchSource::PatchSource(const std::vector<Scan>& scans, const TrainConfig& cfg)
    : fill_(cfg.input_fill), max_angle_(cfg.max_angle), elastic_sigma_(cfg.elastic_sigma)
{
    const auto& shape = cfg.net.input_shape;
    CropSpec spec;
    spec.in_plane = {shape[1], shape[2]};
    spec.margin = cfg.crop_margin;
    spec.min_depth = shape[0];
    for (const Scan& scan : scans) {
        require_same_dims(scan.image, scan.lung, scan.id.c_str());
        require_same_dims(scan.image, scan.truth, scan.id.c_str());
        for (Crop& crop : crop_per_lung(scan.image, scan.lung, spec)) {
            Unit unit{std::move(crop.image), std::move(crop.lung),
                      extract_box(scan.truth, crop.spec.offset, crop.spec.extent), {}};
            unit.plan = plan_windows(unit.image.dims(), shape[0], cfg.overlap);
            for (std::size_t w = 0; w < unit.plan.size(); ++w)
                refs_.push_back({units_.size(), w});
            units_.push_back(std::move(unit));
        }
    }
}

PatchSample PatchSource::sample(std::size_t index, AugmentKind kind, Rng& rng) const
{
    const Ref& ref = refs_.at(index);
    const Unit& unit = units_[ref.unit];
    Volume image = extract_patch(unit.image, unit.plan, ref.window);
    std::vector<Mask> labels{extract_patch(unit.lung, unit.plan, ref.window),
                             extract_patch(unit.truth, unit.plan, ref.window)};
    // Outside the ROI the network only ever sees the fill value.
    mask_image(image, labels[0], fill_);
    if (kind != AugmentKind::none) {
        image = augment(image, labels, kind, rng, max_angle_, elastic_sigma_);
        mask_image(image, labels[0], fill_);
    }
    return {std::move(image), std::move(labels[0]), std::move(labels[1])};
}

// ---------------------------------------------------------------------------

TrainResult train(const std::vector<Scan>& train_scans, const std::vector<Scan>& val_scans,
                  const TrainConfig& cfg, EventLog* log)
{
    validate(cfg);
    if (train_scans.empty() || val_scans.empty())
        throw ConfigError("training needs at least one training and one validation scan");

    EventLog discard;
    EventLog& events = log ? *log : discard;

    Unet model(cfg.net, mix64(cfg.seed));
    std::vector<nn::Tensor> params = model.parameters();
    nn::AdamState adam;
    adam.lr = cfg.lr;
    adam.init(params);

    const PatchSource train_source(train_scans, cfg);
    const PatchSource val_source(val_scans, cfg);
    events.log_event(LogLevel::info, "train_start",
                     {{"setup", setup_name(cfg.loss, cfg.augmentation)},
                      {"seed", std::to_string(cfg.seed)},
                      {"train_patches", std::to_string(train_source.size())},
                      {"val_patches", std::to_string(val_source.size())},
                      {"parameters", std::to_string(model.count_parameters())}});

    auto check_finite = [&](double loss, int epoch, const char* phase) {
        if (!std::isfinite(loss)) {
            events.log_event(LogLevel::error, "non_finite_loss",
                             {{"epoch", std::to_string(epoch)}, {"phase", phase}});
            events.flush();
            throw NumericError(std::string("non-finite ") + phase + " loss at epoch " +
                               std::to_string(epoch));
        }
    };

    TrainResult result;
    EarlyStopping stopper(cfg.patience, cfg.stopping);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order(train_source.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = Rng::stream(cfg.seed ^ kShuffleTag, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.below(i)]);

        double train_sum = 0.0;
        pipeline(
            order.size(), static_cast<std::size_t>(cfg.queue_depth),
            [&](std::size_t k) {
                Rng rng = Rng::stream(cfg.seed ^ kTrainTag, static_cast<std::uint64_t>(epoch), order[k]);
                return train_source.sample(order[k], cfg.augmentation, rng);
            },
            [&](std::size_t, PatchSample s) {
                const nn::Tensor prob = model.forward(to_tensor(s.image));
                nn::Tensor loss =
                    compute_loss(cfg.loss, {prob, to_tensor(s.truth), to_tensor(s.lung), cfg.epsilon});
                check_finite(loss.item(), epoch, "train");
                train_sum += loss.item();
                loss.backward();
                nn::adam_step(params, adam);
                for (auto& p : params)
                    p.zero_grad();
            });

        double val_sum = 0.0;
        {
            nn::NoGradGuard no_grad;
            for (std::size_t i = 0; i < val_source.size(); ++i) {
                Rng rng = Rng::stream(cfg.seed ^ kValTag, static_cast<std::uint64_t>(epoch), i);
                const PatchSample s = val_source.sample(i, cfg.augmentation, rng);
                const nn::Tensor prob = model.forward(to_tensor(s.image));
                const double loss =
                    compute_loss(cfg.loss, {prob, to_tensor(s.truth), to_tensor(s.lung), cfg.epsilon})
                        .item();
                check_finite(loss, epoch, "validation");
                val_sum += loss;
            }
        }

        const EpochRecord rec{epoch, train_sum / static_cast<double>(train_source.size()),
                              val_sum / static_cast<double>(val_source.size())};
        result.record.epochs.push_back(rec);
        if (stopper.update(rec.val_loss))
            result.checkpoint = make_checkpoint(model, adam, cfg, epoch, rec.val_loss);
        events.log_event(LogLevel::info, "epoch_end",
                         {{"epoch", std::to_string(epoch)},
                          {"train_loss", format_loss(rec.train_loss)},
                          {"val_loss", format_loss(rec.val_loss)},
                          {"best_epoch", std::to_string(stopper.best_epoch())}});
        if (stopper.should_stop()) {
            result.record.stopping_reason = "patience";
            break;
        }
        if (epoch == cfg.max_epochs)
            result.record.stopping_reason = "max_epochs";
    }
    result.record.best_epoch = stopper.best_epoch();
    result.record.best_validation_loss = stopper.best();
    events.log_event(LogLevel::info, "train_end",
                     {{"epochs", std::to_string(result.record.epochs.size())},
                      {"best_epoch", std::to_string(result.record.best_epoch)},
                      {"best_val_loss", format_loss(result.record.best_validation_loss)},
                      {"stopping_reason", result.record.stopping_reason}});
    return result;
}

Unet load_model(const nn::Checkpoint& ckpt)
{
    if (!ckpt.metadata.contains("net"))
        throw ConfigError("checkpoint has no network config");
    Unet model(unet_config_from_json(ckpt.metadata.at("net")), 0);
    model.load(ckpt);
    return model;
}

Prediction predict(const Volume& ct, const Mask& lung, const Unet& model, const TrainConfig& cfg,
                   double threshold)
{
    require_same_dims(ct, lung, "predict");
    if (!(model.config() == cfg.net))
        throw ConfigError("predict: model network config differs from the training config");
    const auto& shape = model.config().input_shape;
    CropSpec spec;
    spec.in_plane = {shape[1], shape[2]};
    spec.margin = cfg.crop_margin;
    spec.min_depth = shape[0];

    std::array<int, 3> shrink = valid_shrinkage(model.config());
    for (std::size_t a = 0; a < 3; ++a)
        if (cfg.taper_shrink[a] >= 0)
            shrink[a] = cfg.taper_shrink[a];

    std::vector<double> num(ct.size(), 0.0);
    std::vector<int> count(ct.size(), 0);
    nn::NoGradGuard no_grad;
    for (const Crop& crop : crop_per_lung(ct, lung, spec)) {
        const WindowPlan plan = plan_windows(crop.image.dims(), shape[0], cfg.overlap);
        const TaperProfile taper = symmetric_taper(plan.patch_shape, shrink);
        std::vector<Volume> outputs;
        for (std::size_t w = 0; w < plan.size(); ++w) {
            Volume patch = extract_patch(crop.image, plan, w);
            mask_image(patch, extract_patch(crop.lung, plan, w), cfg.input_fill);
            const nn::Tensor out = model.forward(to_tensor(patch));
            outputs.emplace_back(plan.patch_shape, patch.spacing(),
                                 std::vector<float>(out.values().begin(), out.values().end()));
        }
        Volume prob = reconstruct(outputs, plan, taper, crop.image.dims());
        mask_image(prob, crop.lung, 0.0f);
        const auto& off = crop.spec.offset;
        const Dims& e = crop.spec.extent;
        for (int z = 0; z < e.depth; ++z)
            for (int y = 0; y < e.height; ++y)
                for (int x = 0; x < e.width; ++x) {
                    const std::size_t i = ct.index(z + off[0], y + off[1], x + off[2]);
                    num[i] += prob(z, y, x);
                    ++count[i];
                }
    }

    Prediction pred{Volume(ct.dims(), ct.spacing()), {}};
    for (std::size_t i = 0; i < ct.size(); ++i)
        pred.prob[i] = count[i] > 0 && lung[i] ? static_cast<float>(num[i] / count[i]) : 0.0f;
    pred.seg = threshold_mask(pred.prob, lung, threshold);
    return pred;
}

// ---------------------------------------------------------------------------

std::string froc_csv_header() { return "scan_id,threshold,tp,fp,fn,sensitivity,dice"; }

std::vector<std::string> froc_csv_rows(const std::string& scan_id, const FrocCurve& curve,
                                       const Volume& prob, const Scan& scan)
{
    const Mask exclude = scan.exclude ? *scan.exclude : empty_like(scan.truth);
    std::vector<std::string> rows;
    for (const FrocPoint& p : curve.points) {
        const double dice =
            dice_coefficient(threshold_mask(prob, scan.lung, p.threshold), scan.truth, exclude);
        std::ostringstream row;
        row << scan_id << ',' << format_number(p.threshold) << ',' << p.tp << ',' << p.fp << ','
            << p.fn << ',' << format_number(p.sensitivity) << ',' << format_number(dice);
        rows.push_back(row.str());
    }
    return rows;
}

FrocCurve pool_curves(const std::vector<FrocCurve>& curves)
{
    if (curves.empty())
        throw DomainError("pool_curves: no curves");
    FrocCurve pooled = curves.front();
    for (std::size_t c = 1; c < curves.size(); ++c) {
        if (curves[c].points.size() != pooled.points.size())
            throw DomainError("pool_curves: curves use different thresholds");
        for (std::size_t i = 0; i < pooled.points.size(); ++i) {
            FrocPoint& p = pooled.points[i];
            const FrocPoint& q = curves[c].points[i];
            if (p.threshold != q.threshold)
                throw DomainError("pool_curves: curves use different thresholds");
            p.tp += q.tp;
            p.fp += q.fp;
            p.fn += q.fn;
        }
    }
    pooled.fp_max = 0.0;
    for (FrocPoint& p : pooled.points) {
        p.sensitivity = static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fn);
        pooled.fp_max = std::max(pooled.fp_max, static_cast<double>(p.fp));
    }
    return pooled;
}

Table1Report replicate_table1(const std::vector<Scan>& train_scans, const std::vector<Scan>& val_scans,
                              const std::vector<Scan>& test_scans, const TrainConfig& base,
                              const std::vector<std::uint64_t>& seeds, EventLog* log)
{
    if (test_scans.empty() || seeds.empty())
        throw ConfigError("replication needs test scans and at least one seed");
    EventLog discard;
    EventLog& events = log ? *log : discard;
    const std::vector<double> thresholds = default_thresholds();

    Table1Report report;
    for (const Setup& setup : table1_setups()) {
        SetupResult row;
        row.name = setup_name(setup.loss, setup.augmentation);
        row.loss = setup.loss;
        row.augmentation = setup.augmentation;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.loss = setup.loss;
            cfg.augmentation = setup.augmentation;
            cfg.seed = seed;
            const TrainResult trained = train(train_scans, val_scans, cfg, log);
            const Unet model = load_model(trained.checkpoint);

            std::vector<Prediction> preds;
            std::vector<FrocCurve> curves;
            for (const Scan& scan : test_scans) {
                preds.push_back(predict(scan.image, scan.lung, model, cfg, 0.5));
                curves.push_back(froc(preds.back().prob, scan.truth, scan.lung, thresholds));
            }
            const double t = optimal_threshold(pool_curves(curves));
            double dice_sum = 0.0;
            for (std::size_t i = 0; i < test_scans.size(); ++i) {
                const Scan& scan = test_scans[i];
                const Mask exclude = scan.exclude ? *scan.exclude : empty_like(scan.truth);
                dice_sum += dice_coefficient(threshold_mask(preds[i].prob, scan.lung, t), scan.truth,
                                             exclude);
                for (auto& r : froc_csv_rows("seed" + std::to_string(seed) + "/" + scan.id, curves[i],
                                             preds[i].prob, scan))
                    row.froc_rows.push_back(std::move(r));
            }
            const double dice = dice_sum / static_cast<double>(test_scans.size());
            row.seed_dice.push_back(dice);
            row.seed_threshold.push_back(t);
            events.log_event(LogLevel::info, "setup_seed_done",
                             {{"setup", row.name},
                              {"seed", std::to_string(seed)},
                              {"best_epoch", std::to_string(trained.record.best_epoch)},
                              {"threshold", format_number(t)},
                              {"dice", format_number(dice)}});
        }
        row.mean_dice = std::accumulate(row.seed_dice.begin(), row.seed_dice.end(), 0.0) /
                        static_cast<double>(row.seed_dice.size());
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace volseg
