#include "volseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace volseg {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s)
{
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = s.find(',');
        out.push_back(trim(s.substr(0, comma)));
        if (comma == std::string_view::npos)
            break;
        s.remove_prefix(comma + 1);
    }
    if (out.size() == 1 && out[0].empty())
        out.clear();
    return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b)
{
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j)
        row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

class Field {
public:
    Field(std::string key, std::string_view value) : key_(std::move(key)), value_(value) {}

    [[noreturn]] void fail(const std::string& rule) const
    {
        throw ConfigError("key '" + key_ + "': " + rule + " (got '" + std::string(value_) + "')");
    }

    template <typename T>
    T number(std::string_view s) const
    {
        T v{};
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
            fail("expected a number");
        return v;
    }

    template <typename T>
    T number() const
    {
        return number<T>(value_);
    }

    template <typename T, std::size_t N>
    std::array<T, N> triple() const
    {
        const auto items = split_list(value_);
        if (items.size() != N)
            fail("expected " + std::to_string(N) + " comma-separated values");
        std::array<T, N> out{};
        for (std::size_t i = 0; i < N; ++i)
            out[i] = number<T>(items[i]);
        return out;
    }

    bool boolean() const
    {
        if (value_ == "true" || value_ == "1")
            return true;
        if (value_ == "false" || value_ == "0")
            return false;
        fail("expected true or false");
    }

    std::string_view text() const { return value_; }

private:
    std::string key_;
    std::string_view value_;
};

std::vector<fs::path> paths(const Field& f, const fs::path& base)
{
    std::vector<fs::path> out;
    for (std::string_view item : split_list(f.text())) {
        fs::path p(item);
        out.push_back(p.is_relative() && !base.empty() ? base / p : p);
    }
    return out;
}

using Setter = void (*)(RunConfig&, const Field&, const fs::path&);

const std::vector<std::pair<std::string, Setter>>& setters()
{
    static const std::vector<std::pair<std::string, Setter>> table{
        {"loss", [](RunConfig& c, const Field& f, const fs::path&) {
             try {
                 c.train.loss = parse_loss(f.text());
             } catch (const ConfigError&) {
                 f.fail("expected dice or wbce");
             }
         }},
        {"augmentation", [](RunConfig& c, const Field& f, const fs::path&) {
             try {
                 c.train.augmentation = parse_augment(f.text());
             } catch (const ConfigError&) {
                 f.fail("expected none, rigid or elastic");
             }
         }},
        {"lr", [](RunConfig& c, const Field& f, const fs::path&) { c.train.lr = f.number<double>(); }},
        {"max_epochs",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.max_epochs = f.number<int>(); }},
        {"patience",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.patience = f.number<int>(); }},
        {"stopping", [](RunConfig& c, const Field& f, const fs::path&) {
             if (f.text() == "no_improvement")
                 c.train.stopping = StoppingRule::no_improvement;
             else if (f.text() == "increase_streak")
                 c.train.stopping = StoppingRule::increase_streak;
             else
                 f.fail("expected no_improvement or increase_streak");
         }},
        {"seed", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.seed = f.number<std::uint64_t>();
         }},
        {"paper_mode",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.paper_mode = f.boolean(); }},
        {"overlap",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.overlap = f.number<double>(); }},
        {"crop_margin",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.crop_margin = f.number<int>(); }},
        {"taper_shrink", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.taper_shrink = f.triple<int, 3>();
         }},
        {"max_angle",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.max_angle = f.number<double>(); }},
        {"elastic_sigma", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.elastic_sigma = f.number<double>();
         }},
        {"epsilon",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.epsilon = f.number<double>(); }},
        {"queue_depth",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.queue_depth = f.number<int>(); }},
        {"input_fill",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.input_fill = f.number<float>(); }},
        {"net.levels",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.net.levels = f.number<int>(); }},
        {"net.base_channels", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.net.base_channels = f.number<int>();
         }},
        {"net.convs_down_per_level", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.net.convs_down_per_level = f.number<int>();
         }},
        {"net.convs_up_per_level", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.net.convs_up_per_level = f.number<int>();
         }},
        {"net.kernel",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.net.kernel = f.triple<int, 3>(); }},
        {"net.pool",
         [](RunConfig& c, const Field& f, const fs::path&) { c.train.net.pool = f.triple<int, 3>(); }},
        {"net.axial_disabled_at_deepest", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.net.axial_disabled_at_deepest = f.boolean();
         }},
        {"net.input_shape", [](RunConfig& c, const Field& f, const fs::path&) {
             c.train.net.input_shape = f.triple<int, 3>();
         }},
        {"data.train",
         [](RunConfig& c, const Field& f, const fs::path& base) { c.train_scans = paths(f, base); }},
        {"data.val",
         [](RunConfig& c, const Field& f, const fs::path& base) { c.val_scans = paths(f, base); }},
        {"data.test",
         [](RunConfig& c, const Field& f, const fs::path& base) { c.test_scans = paths(f, base); }},
        {"seeds", [](RunConfig& c, const Field& f, const fs::path&) {
             c.seeds.clear();
             for (std::string_view item : split_list(f.text()))
                 c.seeds.push_back(f.number<std::uint64_t>(item));
             if (c.seeds.empty())
                 f.fail("expected at least one seed");
         }},
    };
    return table;
}

template <typename T, std::size_t N>
std::string join(const std::array<T, N>& a)
{
    std::string out;
    for (std::size_t i = 0; i < N; ++i)
        out += (i ? "," : "") + std::to_string(a[i]);
    return out;
}

std::string join(const std::vector<fs::path>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + v[i].string();
    return out;
}

}  // namespace

LossKind parse_loss(std::string_view s)
{
    if (s == "dice")
        return LossKind::dice;
    if (s == "wbce" || s == "wBCE")
        return LossKind::wbce;
    throw ConfigError("unknown loss '" + std::string(s) + "'");
}

AugmentKind parse_augment(std::string_view s)
{
    if (s == "none" || s == "None")
        return AugmentKind::none;
    if (s == "rigid" || s == "Rigid")
        return AugmentKind::rigid;
    if (s == "elastic" || s == "Elastic")
        return AugmentKind::elastic;
    throw ConfigError("unknown augmentation '" + std::string(s) + "'");
}

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters())
            k.push_back(name);
        return k;
    }();
    return keys;
}

std::string nearest_key(std::string_view key)
{
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const std::string& k : config_keys()) {
        const std::size_t d = edit_distance(key, k);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    // A suffix match ("levels" for "net.levels") counts as close.
    for (const std::string& k : config_keys())
        if (k.size() > key.size() && k.ends_with(key) && k[k.size() - key.size() - 1] == '.')
            return k;
    return best_d <= std::max<std::size_t>(3, key.size() / 2) ? best : std::string{};
}

RunConfig parse_config_text(std::string_view text, const fs::path& base_dir)
{
    RunConfig cfg;
    std::map<std::string, int, std::less<>> seen;
    int line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));

        const auto& table = setters();
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const auto& e) { return e.first == key; });
        if (it == table.end()) {
            const std::string near = nearest_key(key);
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'" +
                              (near.empty() ? "" : " (nearest valid key: '" + near + "')"));
        }
        if (const auto [prev, fresh] = seen.emplace(key, line_no); !fresh)
            throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                              "' already set on line " + std::to_string(prev->second));
        it->second(cfg, Field(key, value), base_dir);
    }
    validate(cfg.train);
    return cfg;
}

RunConfig parse_config(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config_text(text.str(), path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string format_config(const RunConfig& c)
{
    const TrainConfig& t = c.train;
    std::ostringstream o;
    o << "loss = " << to_string(t.loss) << '\n'
      << "augmentation = " << to_string(t.augmentation) << '\n'
      << "lr = " << format_number(t.lr) << '\n'
      << "max_epochs = " << t.max_epochs << '\n'
      << "patience = " << t.patience << '\n'
      << "stopping = "
      << (t.stopping == StoppingRule::no_improvement ? "no_improvement" : "increase_streak") << '\n'
      << "seed = " << t.seed << '\n'
      << "paper_mode = " << (t.paper_mode ? "true" : "false") << '\n'
      << "overlap = " << format_number(t.overlap) << '\n'
      << "crop_margin = " << t.crop_margin << '\n'
      << "taper_shrink = " << join(t.taper_shrink) << '\n'
      << "max_angle = " << format_number(t.max_angle) << '\n'
      << "elastic_sigma = " << format_number(t.elastic_sigma) << '\n'
      << "epsilon = " << format_number(t.epsilon) << '\n'
      << "queue_depth = " << t.queue_depth << '\n'
      << "input_fill = " << format_number(t.input_fill) << '\n'
      << "net.levels = " << t.net.levels << '\n'
      << "net.base_channels = " << t.net.base_channels << '\n'
      << "net.convs_down_per_level = " << t.net.convs_down_per_level << '\n'
      << "net.convs_up_per_level = " << t.net.convs_up_per_level << '\n'
      << "net.kernel = " << join(t.net.kernel) << '\n'
      << "net.pool = " << join(t.net.pool) << '\n'
      << "net.axial_disabled_at_deepest = " << (t.net.axial_disabled_at_deepest ? "true" : "false")
      << '\n'
      << "net.input_shape = " << join(t.net.input_shape) << '\n';
    if (!c.train_scans.empty())
        o << "data.train = " << join(c.train_scans) << '\n';
    if (!c.val_scans.empty())
        o << "data.val = " << join(c.val_scans) << '\n';
    if (!c.test_scans.empty())
        o << "data.test = " << join(c.test_scans) << '\n';
    o << "seeds = ";
    for (std::size_t i = 0; i < c.seeds.size(); ++i)
        o << (i ? "," : "") << c.seeds[i];
    o << '\n';
    return o.str();
}

Scan load_scan(const fs::path& dir)
{
    Scan scan;
    scan.id = dir.filename().string();
    if (scan.id.empty())
        scan.id = dir.parent_path().filename().string();
    scan.image = read_volume(dir / "image.vol");
    scan.lung = read_mask(dir / "lung.vol");
    scan.truth = read_mask(dir / "truth.vol");
    require_same_dims(scan.image, scan.lung, "lung.vol");
    require_same_dims(scan.image, scan.truth, "truth.vol");
    if (fs::exists(dir / "exclude.vol")) {
        scan.exclude = read_mask(dir / "exclude.vol");
        require_same_dims(scan.image, *scan.exclude, "exclude.vol");
    }
    return scan;
}

void save_scan(const Scan& scan, const fs::path& dir, bool overwrite)
{
    fs::create_directories(dir);
    for (const char* name : {"image.vol", "lung.vol", "truth.vol", "exclude.vol"})
        if (!overwrite && fs::exists(dir / name))
            throw IoError((dir / name).string() + " exists (pass --overwrite to replace it)");
    write_volume(scan.image, dir / "image.vol");
    write_mask(scan.lung, dir / "lung.vol");
    write_mask(scan.truth, dir / "truth.vol");
    if (scan.exclude)
        write_mask(*scan.exclude, dir / "exclude.vol");
}

}  // namespace volseg
