#include <doctest.h>

#include <cstring>
#include <fstream>
#include <regex>

#include "fixtures.hpp"
#include "harness.hpp"
#include "volseg/trainer.hpp"

using namespace volseg;

namespace {

bool same_bits(const nn::Checkpoint& a, const nn::Checkpoint& b)
{
    if (a.metadata != b.metadata || a.arrays.size() != b.arrays.size())
        return false;
    for (std::size_t i = 0; i < a.arrays.size(); ++i) {
        const auto& x = a.arrays[i];
        const auto& y = b.arrays[i];
        if (x.name != y.name || x.shape != y.shape || x.data.size() != y.data.size() ||
            std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

std::vector<std::string> read_lines(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("early stopping: strictly increasing validation loss with patience 1")
{
    for (StoppingRule rule : {StoppingRule::no_improvement, StoppingRule::increase_streak}) {
        EarlyStopping s(1, rule);
        CHECK(s.update(1.0));
        CHECK_FALSE(s.should_stop());
        CHECK_FALSE(s.update(2.0));
        CHECK(s.should_stop());
        CHECK(s.best_epoch() == 1);
        CHECK(s.best() == 1.0);
    }
}

TEST_CASE("early stopping rules differ on a noisy plateau")
{
    // 1.0, then 0.9 best, then alternate up/down without beating 0.9.
    const std::vector<double> trace{1.0, 0.9, 0.95, 0.92, 0.97, 0.93, 0.98};
    EarlyStopping patience(3, StoppingRule::no_improvement), streak(3, StoppingRule::increase_streak);
    int stop_a = 0, stop_b = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        patience.update(trace[i]);
        streak.update(trace[i]);
        if (!stop_a && patience.should_stop())
            stop_a = static_cast<int>(i) + 1;
        if (!stop_b && streak.should_stop())
            stop_b = static_cast<int>(i) + 1;
    }
    CHECK(stop_a == 5);
    CHECK(stop_b == 0);  // never three increases in a row
    CHECK(patience.best_epoch() == 2);

    EarlyStopping up(3, StoppingRule::increase_streak);
    for (double v : {0.5, 0.6, 0.7, 0.8})
        up.update(v);
    CHECK(up.should_stop());
    CHECK_THROWS_AS(EarlyStopping(0, StoppingRule::no_improvement), ConfigError);
}

TEST_CASE("train config validation")
{
    TrainConfig c = fixtures::tiny_config();
    CHECK_NOTHROW(validate(c));
    c.loss = LossKind::wbce;
    c.augmentation = AugmentKind::elastic;
    CHECK_THROWS_AS(validate(c), ConfigError);  // not one of the five set-ups
    c.paper_mode = false;
    CHECK_NOTHROW(validate(c));

    auto bad = [](auto mutate) {
        TrainConfig t = fixtures::tiny_config();
        mutate(t);
        return t;
    };
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.patience = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.max_epochs = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.lr = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.overlap = 1.0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.crop_margin = -1; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.taper_shrink = {2, -2, 0}; })), ConfigError);
    CHECK_NOTHROW(validate(bad([](TrainConfig& t) { t.taper_shrink = {-1, 0, 3}; })));
    CHECK_THROWS_AS(validate(bad([](TrainConfig& t) { t.net.input_shape = {8, 15, 16}; })), ConfigError);
}

TEST_CASE("train config json round-trip and setup names")
{
    TrainConfig c = fixtures::tiny_config();
    c.seed = 99;
    c.stopping = StoppingRule::increase_streak;
    c.taper_shrink = {1, 2, 3};
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(setup_name(LossKind::dice, AugmentKind::elastic) == "dice-Elastic");
    CHECK(setup_name(LossKind::wbce, AugmentKind::none) == "wBCE-None");
    const auto& s = table1_setups();
    REQUIRE(s.size() == 5);
    std::vector<std::string> names;
    for (const Setup& e : s)
        names.push_back(setup_name(e.loss, e.augmentation));
    CHECK(names == std::vector<std::string>{"wBCE-None", "wBCE-Rigid", "dice-None", "dice-Rigid", "dice-Elastic"});
}

TEST_CASE("run record csv")
{
    RunRecord r;
    r.epochs = {{1, 0.5, 0.25}, {2, 0.125, 1.0 / 3.0}};
    CHECK(run_record_csv(r) == "epoch,train_loss,val_loss\n1,0.5,0.25\n2,0.125,0.333333333\n");
}

TEST_CASE("patch source masks the image outside the lung")
{
    const Scan s = fixtures::phantom_scan(1);
    TrainConfig c = fixtures::tiny_config();
    c.input_fill = -3.0f;
    const PatchSource src({s}, c);
    REQUIRE(src.size() > 0);
    Rng rng(1);
    for (AugmentKind k : {AugmentKind::none, AugmentKind::rigid, AugmentKind::elastic})
        for (std::size_t i = 0; i < src.size(); ++i) {
            const PatchSample p = src.sample(i, k, rng);
            CHECK(p.image.dims() == Dims{8, 32, 32});
            for (std::size_t v = 0; v < p.image.size(); ++v)
                if (!p.lung[v])
                    REQUIRE(p.image[v] == -3.0f);
        }
}

TEST_CASE("train: one epoch, determinism, queue independence, ROI isolation")
{
    const std::vector<Scan> tr{fixtures::phantom_scan(1)}, va{fixtures::phantom_scan(2)};
    TrainConfig c = fixtures::tiny_config();

    c.max_epochs = 1;
    const TrainResult one = train(tr, va, c);
    CHECK(one.record.epochs.size() == 1);
    CHECK(one.record.stopping_reason == "max_epochs");
    CHECK(one.record.best_epoch == 1);
    CHECK(one.checkpoint.metadata["epoch"] == 1);

    c.max_epochs = 2;
    c.queue_depth = 0;
    const TrainResult a = train(tr, va, c);
    c.queue_depth = 3;
    const TrainResult b = train(tr, va, c);
    CHECK(same_bits(a.checkpoint, b.checkpoint));
    CHECK(run_record_csv(a.record) == run_record_csv(b.record));

    // Different image values outside the lung must not change anything.
    std::vector<Scan> tr2 = tr, va2 = va;
    Rng rng(5);
    for (auto* set : {&tr2, &va2})
        for (Scan& s : *set)
            for (std::size_t i = 0; i < s.image.size(); ++i)
                if (!s.lung[i])
                    s.image[i] = static_cast<float>(rng.uniform(-50.0, 50.0));
    const TrainResult d = train(tr2, va2, c);
    CHECK(same_bits(b.checkpoint, d.checkpoint));

    c.seed = 1;
    const TrainResult e = train(tr, va, c);
    CHECK_FALSE(same_bits(a.checkpoint, e.checkpoint));

    CHECK_THROWS_AS((void)train({}, va, c), ConfigError);
    CHECK_THROWS_AS((void)train(tr, {}, c), ConfigError);
}

TEST_CASE("train aborts on a non-finite loss and logs it at error level")
{
    const auto dir = harness::scratch_dir("nonfinite");
    std::vector<Scan> tr{fixtures::phantom_scan(1)};
    const std::vector<Scan> va{fixtures::phantom_scan(2)};
    for (std::size_t i = 0; i < tr[0].image.size(); ++i)
        if (tr[0].lung[i])
            tr[0].image[i] = NAN;
    TrainConfig c = fixtures::tiny_config();
    c.augmentation = AugmentKind::none;
    {
        EventLog log(dir / "train.log", false);
        CHECK_THROWS_AS((void)train(tr, va, c, &log), NumericError);
    }
    const auto lines = read_lines(dir / "train.log");
    REQUIRE(!lines.empty());
    const std::regex pat(R"(^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3} \[error\] non_finite_loss epoch=1 phase=train$)");
    CHECK(std::regex_match(lines.back(), pat));
    CHECK(std::regex_match(lines.front(), std::regex(R"(^\S+ \[info\] train_start setup=dice-None .*)")));
}

TEST_CASE("predict contracts")
{
    const std::vector<Scan> tr{fixtures::phantom_scan(1)}, va{fixtures::phantom_scan(2)};
    TrainConfig c = fixtures::tiny_config();
    c.max_epochs = 1;
    const TrainResult r = train(tr, va, c);
    const Unet model = load_model(r.checkpoint);
    const Scan test = fixtures::phantom_scan(3);

    const Prediction p = predict(test.image, test.lung, model, c, 0.5);
    CHECK(p.prob.dims() == test.image.dims());
    for (std::size_t i = 0; i < p.prob.size(); ++i) {
        REQUIRE(p.prob[i] >= 0.0f);
        REQUIRE(p.prob[i] <= 1.0f);
        if (!test.lung[i]) {
            REQUIRE(p.prob[i] == 0.0f);
            REQUIRE(p.seg[i] == 0);
        }
        REQUIRE(p.seg[i] == (test.lung[i] && p.prob[i] >= 0.5f ? 1 : 0));
    }

    const Prediction zero = predict(test.image, test.lung, model, c, 0.0);
    for (std::size_t i = 0; i < p.prob.size(); ++i)
        REQUIRE(zero.seg[i] == (test.lung[i] && zero.prob[i] > 0.0f ? 1 : 0));
    const Prediction full = predict(test.image, test.lung, model, c, 1.0);
    for (std::size_t i = 0; i < p.prob.size(); ++i)
        if (full.seg[i])
            REQUIRE(full.prob[i] == 1.0f);

    // An empty lung region yields zero probability whatever the network says.
    Mask half = test.lung;
    for (int z = 0; z < 20; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                half(z, y, x) = 0;
    const Prediction h = predict(test.image, half, model, c, 0.5);
    for (int z = 0; z < 20; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                REQUIRE(h.prob(z, y, x) == 0.0f);

    TrainConfig other = c;
    other.net.base_channels = 3;
    CHECK_THROWS_AS((void)predict(test.image, test.lung, Unet(other.net, 1), c, 0.5), ConfigError);
    CHECK_THROWS_AS((void)predict(test.image, Mask(Dims{4, 4, 4}), model, c, 0.5), DomainError);
}

TEST_CASE("froc csv rows and pooled curves")
{
    const Scan s = fixtures::phantom_scan(4);
    Volume prob(s.image.dims());
    for (std::size_t i = 0; i < prob.size(); ++i)
        prob[i] = s.truth[i] ? 0.9f : (s.lung[i] ? 0.2f : 0.0f);
    const auto th = default_thresholds();
    const FrocCurve c = froc(prob, s.truth, s.lung, th);
    const auto rows = froc_csv_rows("s4", c, prob, s);
    CHECK(froc_csv_header() == "scan_id,threshold,tp,fp,fn,sensitivity,dice");
    REQUIRE(rows.size() == th.size());
    CHECK(rows.front().rfind("s4,0.05,", 0) == 0);

    const FrocCurve pooled = pool_curves({c, c});
    REQUIRE(pooled.points.size() == c.points.size());
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        CHECK(pooled.points[i].tp == 2 * c.points[i].tp);
        CHECK(pooled.points[i].fp == 2 * c.points[i].fp);
        CHECK(pooled.points[i].sensitivity == doctest::Approx(c.points[i].sensitivity));
    }
    CHECK(optimal_threshold(pooled) == optimal_threshold(c));
}
