#include "volseg/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "volseg/errors.hpp"
#include "volseg/log.hpp"

namespace volseg {

namespace fs = std::filesystem;

namespace {

// Plot box inside a 640x440 canvas.
constexpr double kLeft = 70, kRight = 610, kTop = 40, kBottom = 380;

std::string xml_escape(std::string_view s)
{
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

std::string fixed(double v, int digits = 2)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

class Hasher {
public:
    Hasher() : ctx_(EVP_MD_CTX_new())
    {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw IoError("sha256: digest init failed");
    }
    ~Hasher() { EVP_MD_CTX_free(ctx_); }
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    void update(const char* data, std::size_t n)
    {
        if (EVP_DigestUpdate(ctx_, data, n) != 1)
            throw IoError("sha256: digest update failed");
    }

    std::string hex()
    {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, md, &len) != 1)
            throw IoError("sha256: digest final failed");
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

std::string froc_svg(const FrocCurve& c, const std::string& title)
{
    if (c.points.empty())
        throw DomainError("froc_svg: empty curve");
    const double fp_max = c.fp_max > 0.0 ? c.fp_max : 1.0;
    auto px = [&](double fp) { return kLeft + (kRight - kLeft) * fp / fp_max; };
    auto py = [&](double s) { return kBottom - (kBottom - kTop) * s; };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" "
         "viewBox=\"0 0 640 440\">\n"
      << "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n"
      << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
      << "</text>\n"
      << "<g stroke=\"black\" fill=\"none\">\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight << "\" y2=\""
      << kBottom << "\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop << "\"/>\n"
      << "</g>\n";

    o << "<g font-size=\"11\" text-anchor=\"middle\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double fp = fp_max * i / 4.0;
        o << "<text x=\"" << fixed(px(fp)) << "\" y=\"" << kBottom + 16 << "\">"
          << fixed(fp, fp_max >= 100 ? 0 : 1) << "</text>\n";
        const double s = i / 4.0;
        o << "<text x=\"" << kLeft - 22 << "\" y=\"" << fixed(py(s) + 4) << "\">" << fixed(s)
          << "</text>\n";
    }
    o << "</g>\n"
      << "<text id=\"x-label\" x=\"" << (kLeft + kRight) / 2 << "\" y=\"425\" "
         "text-anchor=\"middle\" font-size=\"13\">False positives (voxels)</text>\n"
      << "<text id=\"y-label\" x=\"18\" y=\"" << (kTop + kBottom) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << (kTop + kBottom) / 2 << ")\">Sensitivity</text>\n";

    o << "<polyline id=\"curve\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.points.size(); ++i)
        o << (i ? " " : "") << fixed(px(static_cast<double>(c.points[i].fp))) << ','
          << fixed(py(c.points[i].sensitivity));
    o << "\"/>\n";

    auto attrs = [&](const FrocPoint& p) {
        return "data-threshold=\"" + format_number(p.threshold) + "\" data-fp=\"" +
               std::to_string(p.fp) + "\" data-sensitivity=\"" + format_number(p.sensitivity) +
               "\"";
    };
    for (const FrocPoint& p : c.points)
        if (p.threshold == 0.5)
            o << "<circle id=\"threshold-0.5\" class=\"marker\" cx=\""
              << fixed(px(static_cast<double>(p.fp))) << "\" cy=\"" << fixed(py(p.sensitivity))
              << "\" r=\"6\" fill=\"none\" stroke=\"darkred\" stroke-width=\"2\" " << attrs(p)
              << "/>\n";

    const FrocPoint& best = optimal_point(c);
    const double bx = px(static_cast<double>(best.fp)), by = py(best.sensitivity);
    o << "<polygon id=\"optimal\" class=\"marker\" points=\"" << fixed(bx) << ',' << fixed(by - 7)
      << ' ' << fixed(bx - 6) << ',' << fixed(by + 5) << ' ' << fixed(bx + 6) << ','
      << fixed(by + 5) << "\" fill=\"darkgreen\" " << attrs(best) << "/>\n"
      << "<text x=\"" << fixed(bx + 9) << "\" y=\"" << fixed(by - 8)
      << "\" font-size=\"11\">t=" << format_number(best.threshold) << "</text>\n"
      << "</svg>\n";
    return o.str();
}

void emit_froc_svg(const FrocCurve& c, const fs::path& path, bool overwrite, const std::string& title)
{
    write_text_file(path, froc_svg(c, title), overwrite);
}

void write_text_file(const fs::path& path, const std::string& text, bool overwrite)
{
    if (!overwrite && fs::exists(path))
        throw IoError(path.string() + " exists (pass --overwrite to replace it)");
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
        throw IoError("cannot write " + path.string());
}

std::string sha256_hex(std::string_view bytes)
{
    Hasher h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    Hasher h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<InputDigest> digest_inputs(const std::vector<fs::path>& paths)
{
    std::vector<InputDigest> out;
    for (const fs::path& p : paths) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file())
                    files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const fs::path& f : files)
                out.push_back({f.string(), sha256_file(f)});
        } else {
            out.push_back({p.string(), sha256_file(p)});
        }
    }
    return out;
}

nlohmann::ordered_json to_json(const RunManifest& m)
{
    nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
    for (const InputDigest& d : m.inputs)
        inputs.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return {{"command", m.command},
            {"argv", m.argv},
            {"seed", m.seed},
            {"code_version", m.code_version},
            {"config", m.config},
            {"inputs", inputs},
            {"started", m.started},
            {"finished", m.finished.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(m.finished)}};
}

void write_manifest(const RunManifest& m, const fs::path& path)
{
    write_text_file(path, to_json(m).dump(2) + "\n", true);
}

const char* code_version()
{
#ifdef VOLSEG_VERSION
    return VOLSEG_VERSION;
#else
    return "unknown";
#endif
}

}  // namespace volseg
