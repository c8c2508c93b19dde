#include <doctest.h>

#include <fstream>
#include <regex>

#include "harness.hpp"
#include "fixtures.hpp"
#include "volseg/config.hpp"
#include "volseg/log.hpp"
#include "volseg/report.hpp"

using namespace volseg;

namespace {

std::string config_error(std::string_view text)
{
    try {
        (void)parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Tags open and close in order and every attribute value is quoted. Enough
// to catch broken output without an XML parser.
bool balanced_markup(const std::string& s)
{
    std::vector<std::string> stack;
    std::size_t i = 0;
    while ((i = s.find('<', i)) != std::string::npos) {
        const std::size_t j = s.find('>', i);
        if (j == std::string::npos)
            return false;
        std::string tag = s.substr(i + 1, j - i - 1);
        i = j + 1;
        if (tag.starts_with("?") || tag.starts_with("!"))
            continue;
        if (std::count(tag.begin(), tag.end(), '"') % 2 != 0)
            return false;
        if (tag.starts_with("/")) {
            if (stack.empty() || stack.back() != tag.substr(1))
                return false;
            stack.pop_back();
            continue;
        }
        const bool self_closing = tag.ends_with("/");
        const std::string name = tag.substr(0, tag.find_first_of(" /"));
        if (!self_closing)
            stack.push_back(name);
    }
    return stack.empty();
}

std::string attr(const std::string& svg, const std::string& id, const std::string& name)
{
    const std::size_t at = svg.find("id=\"" + id + "\"");
    if (at == std::string::npos)
        return "";
    const std::size_t start = svg.rfind('<', at), end = svg.find('>', at);
    const std::string tag = svg.substr(start, end - start);
    const std::size_t k = tag.find(name + "=\"");
    if (k == std::string::npos)
        return "";
    const std::size_t v = k + name.size() + 2;
    return tag.substr(v, tag.find('"', v) - v);
}

FrocCurve sample_curve()
{
    FrocCurve c;
    const double fps[] = {400, 250, 120, 60, 30, 10, 4, 1, 0};
    for (int i = 0; i < 9; ++i) {
        const double t = 0.1 * (i + 1);
        c.points.push_back({i == 4 ? 0.5 : t, 0, static_cast<std::uint64_t>(fps[i]), 0, 1.0 - 0.1 * i});
    }
    c.fp_max = 400;
    return c;
}

}  // namespace

TEST_CASE("empty config gives the defaults")
{
    const RunConfig c = parse_config_text("# nothing here\n\n");
    const TrainConfig d;
    CHECK(to_json(c.train) == to_json(d));
    CHECK(c.train.net == UnetConfig{});
    CHECK(c.train.lr == 1e-5);
    CHECK(c.train.patience == 15);
    CHECK(c.train.crop_margin == 30);
    CHECK(c.train.net.input_shape == std::array<int, 3>{104, 352, 240});
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(c.train_scans.empty());
}

TEST_CASE("config values, lists and relative paths")
{
    const RunConfig c = parse_config_text(
        "loss = wbce\n"
        "augmentation = rigid   # trailing comment\n"
        "lr = 2e-4\n"
        "net.levels = 3\n"
        "net.base_channels = 4\n"
        "net.input_shape = 16, 32, 32\n"
        "data.train = a, b\n"
        "data.val = /abs/c\n"
        "seeds = 4, 5\n",
        "/base");
    CHECK(c.train.loss == LossKind::wbce);
    CHECK(c.train.augmentation == AugmentKind::rigid);
    CHECK(c.train.lr == 2e-4);
    CHECK(c.train.net.input_shape == std::array<int, 3>{16, 32, 32});
    CHECK(c.train_scans == std::vector<std::filesystem::path>{"/base/a", "/base/b"});
    CHECK(c.val_scans == std::vector<std::filesystem::path>{"/abs/c"});
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});

    // format_config round-trips.
    const RunConfig back = parse_config_text(format_config(c));
    CHECK(to_json(back.train) == to_json(c.train));
    CHECK(back.train_scans == c.train_scans);
    CHECK(back.seeds == c.seeds);
}

TEST_CASE("config errors name the rule")
{
    CHECK(config_error("net.input_shape = 100, 352, 240\n").find("input depth 100 must be divisible by 8") !=
          std::string::npos);
    const std::string unknown = config_error("lr = 1e-3\nlevels = 3\n");
    CHECK(unknown.find("line 2") != std::string::npos);
    CHECK(unknown.find("unknown key 'levels'") != std::string::npos);
    CHECK(unknown.find("nearest valid key: 'net.levels'") != std::string::npos);
    CHECK(config_error("pateince = 3\n").find("'patience'") != std::string::npos);
    CHECK(config_error("lr = fast\n").find("key 'lr'") != std::string::npos);
    CHECK(config_error("lr = 1\nlr = 2\n").find("line 2") != std::string::npos);
    CHECK(config_error("just words\n").find("expected 'key = value'") != std::string::npos);
    CHECK(config_error("patience = 0\n").find("patience") != std::string::npos);
    CHECK(config_error("loss = hinge\n").find("hinge") != std::string::npos);
    CHECK(config_error("loss = wbce\naugmentation = elastic\n").find("wBCE-Elastic") != std::string::npos);
    CHECK(config_error("loss = wbce\naugmentation = elastic\npaper_mode = false\n").empty());
    CHECK(nearest_key("net.base_chanels") == "net.base_channels");
    CHECK(nearest_key("zzzzzzzzzzzzzzzzzzzz").empty());
}

TEST_CASE("parse_config reads files and prefixes errors with the path")
{
    const auto dir = harness::scratch_dir("cfg");
    std::ofstream(dir / "ok.cfg") << "data.train = scans/a\n";
    CHECK(parse_config(dir / "ok.cfg").train_scans.front() == dir / "scans/a");
    std::ofstream(dir / "bad.cfg") << "lr = -1\n";
    try {
        (void)parse_config(dir / "bad.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).rfind((dir / "bad.cfg").string(), 0) == 0);
    }
    CHECK_THROWS_AS((void)parse_config(dir / "missing.cfg"), IoError);
}

TEST_CASE("scan directories round-trip and refuse to overwrite")
{
    const auto dir = harness::scratch_dir("scan");
    const Scan s = fixtures::phantom_scan(3);
    save_scan(s, dir / "s", false);
    const Scan back = load_scan(dir / "s");
    CHECK(back.image == s.image);
    CHECK(back.lung == s.lung);
    CHECK(back.truth == s.truth);
    REQUIRE(back.exclude.has_value());
    CHECK(*back.exclude == *s.exclude);
    CHECK_THROWS_AS(save_scan(s, dir / "s", false), IoError);
    CHECK_NOTHROW(save_scan(s, dir / "s", true));
    CHECK_THROWS_AS((void)load_scan(dir / "nowhere"), IoError);
}

TEST_CASE("froc svg")
{
    const FrocCurve c = sample_curve();
    const std::string svg = froc_svg(c, "test <curve>");
    CHECK(svg.starts_with("<?xml"));
    CHECK(balanced_markup(svg));
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("test &lt;curve&gt;") != std::string::npos);
    CHECK(svg.find("False positives (voxels)") != std::string::npos);
    CHECK(svg.find(">Sensitivity<") != std::string::npos);
    CHECK(attr(svg, "threshold-0.5", "data-threshold") == "0.5");
    CHECK(attr(svg, "threshold-0.5", "data-fp") == "30");

    const FrocPoint& best = optimal_point(c);
    CHECK(std::stod(attr(svg, "optimal", "data-threshold")) == best.threshold);
    CHECK(std::stod(attr(svg, "optimal", "data-fp")) == static_cast<double>(best.fp));
    CHECK(std::stod(attr(svg, "optimal", "data-sensitivity")) == doctest::Approx(best.sensitivity));

    FrocCurve one;
    one.points.push_back({0.5, 3, 0, 0, 1.0});
    const std::string single = froc_svg(one);
    CHECK(balanced_markup(single));
    CHECK(single.find("nan") == std::string::npos);
    CHECK(single.find("inf") == std::string::npos);
    CHECK_THROWS_AS((void)froc_svg(FrocCurve{}), DomainError);

    const auto dir = harness::scratch_dir("svg");
    emit_froc_svg(c, dir / "f.svg", false);
    CHECK(slurp(dir / "f.svg") == froc_svg(c));
    CHECK_THROWS_AS(emit_froc_svg(c, dir / "f.svg", false), IoError);
    CHECK_NOTHROW(emit_froc_svg(c, dir / "f.svg", true));
}

TEST_CASE("write_text_file")
{
    const auto dir = harness::scratch_dir("write");
    write_text_file(dir / "sub" / "a.txt", "one", false);
    CHECK(slurp(dir / "sub" / "a.txt") == "one");
    CHECK_THROWS_AS(write_text_file(dir / "sub" / "a.txt", "two", false), IoError);
    CHECK(slurp(dir / "sub" / "a.txt") == "one");
    write_text_file(dir / "sub" / "a.txt", "two", true);
    CHECK(slurp(dir / "sub" / "a.txt") == "two");
}

TEST_CASE("hashing and manifests")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const auto dir = harness::scratch_dir("manifest");
    write_text_file(dir / "in" / "b.txt", "abc", false);
    write_text_file(dir / "in" / "a.txt", "", false);
    CHECK(sha256_file(dir / "in" / "b.txt") == sha256_hex("abc"));
    const auto d = digest_inputs({dir / "in"});
    REQUIRE(d.size() == 2);
    CHECK(d[0].path.ends_with("a.txt"));
    CHECK(d[1].sha256 == sha256_hex("abc"));

    RunManifest m;
    m.command = "train";
    m.argv = {"volseg", "train"};
    m.seed = 7;
    m.code_version = code_version();
    m.inputs = d;
    m.started = utc_timestamp();
    CHECK(std::regex_match(m.started, std::regex(R"(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\dZ)")));
    write_manifest(m, dir / "manifest.json");
    const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(j["seed"] == 7);
    CHECK(j["inputs"].size() == 2);
    CHECK(j["command"] == "train");
}

TEST_CASE("event log format")
{
    CHECK(format_event("epoch_end", {{"epoch", "3"}, {"note", "two words"}}) ==
          "epoch_end epoch=3 note=\"two words\"");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1e-7) == "1e-07");

    const auto dir = harness::scratch_dir("log");
    {
        EventLog log(dir / "run.log", false);
        log.log_event(LogLevel::info, "hello", {{"k", "v"}});
        log.log_event(LogLevel::error, "broken", {});
        log.log_event(LogLevel::debug, "detail", {});
    }
    std::ifstream in(dir / "run.log");
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);)
        lines.push_back(l);
    REQUIRE(lines.size() == 3);
    const std::string ts = R"(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3})";
    CHECK(std::regex_match(lines[0], std::regex(ts + R"( \[info\] hello k=v)")));
    CHECK(std::regex_match(lines[1], std::regex(ts + R"( \[error\] broken)")));
    CHECK(std::regex_match(lines[2], std::regex(ts + R"( \[debug\] detail)")));

    EventLog silent;
    CHECK_NOTHROW(silent.log_event(LogLevel::info, "dropped"));
}
