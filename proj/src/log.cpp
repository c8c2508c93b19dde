#include "volseg/log.hpp"

#include <atomic>
#include <charconv>

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace volseg {

namespace {

bool needs_quotes(std::string_view v)
{
    return v.empty() || v.find_first_of(" \t\"=") != std::string_view::npos;
}

spdlog::level::level_enum to_spdlog(LogLevel level)
{
    switch (level) {
    case LogLevel::debug:
        return spdlog::level::debug;
    case LogLevel::info:
        return spdlog::level::info;
    case LogLevel::warn:
        return spdlog::level::warn;
    case LogLevel::error:
        return spdlog::level::err;
    }
    return spdlog::level::info;
}

}  // namespace

std::string format_event(std::string_view message, const LogFields& fields)
{
    std::string line(message);
    for (const auto& [key, value] : fields) {
        line += ' ';
        line += key;
        line += '=';
        if (needs_quotes(value)) {
            line += '"';
            for (char c : value) {
                if (c == '"' || c == '\\')
                    line += '\\';
                line += c;
            }
            line += '"';
        } else {
            line += value;
        }
    }
    return line;
}

std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

EventLog::EventLog(const std::filesystem::path& file, bool also_stderr)
{
    static std::atomic<int> counter{0};
    std::vector<spdlog::sink_ptr> sinks;
    sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(file.string(), true));
    if (also_stderr)
        sinks.push_back(std::make_shared<spdlog::sinks::stderr_sink_mt>());
    logger_ = std::make_shared<spdlog::logger>("volseg-" + std::to_string(counter++), sinks.begin(),
                                               sinks.end());
    logger_->set_pattern("%Y-%m-%dT%H:%M:%S.%e [%l] %v");
    logger_->set_level(spdlog::level::debug);
    logger_->flush_on(spdlog::level::info);
}

EventLog::~EventLog()
{
    if (logger_)
        logger_->flush();
}

EventLog::EventLog(EventLog&&) noexcept = default;
EventLog& EventLog::operator=(EventLog&&) noexcept = default;

void EventLog::log_event(LogLevel level, std::string_view message, const LogFields& fields)
{
    if (logger_)
        logger_->log(to_spdlog(level), "{}", format_event(message, fields));
}

void EventLog::flush()
{
    if (logger_)
        logger_->flush();
}

}  // namespace volseg
