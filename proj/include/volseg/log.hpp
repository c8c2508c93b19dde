#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spdlog {
class logger;
}

namespace volseg {

enum class LogLevel { debug, info, warn, error };

/// Ordered key/value pairs; emitted in the given order.
using LogFields = std::vector<std::pair<std::string, std::string>>;

/// "message k=v k=v"; values containing spaces or quotes are quoted.
[[nodiscard]] std::string format_event(std::string_view message, const LogFields& fields);

/// Shortest round-trippable text for a double.
[[nodiscard]] std::string format_number(double v);

/// Line-oriented structured log: "<timestamp> [<level>] message k=v ...".
/// A default-constructed log discards everything.
class EventLog {
public:
    EventLog() = default;
    EventLog(const std::filesystem::path& file, bool also_stderr);
    ~EventLog();
    EventLog(EventLog&&) noexcept;
    EventLog& operator=(EventLog&&) noexcept;

    void log_event(LogLevel level, std::string_view message, const LogFields& fields = {});
    void flush();

private:
    std::shared_ptr<spdlog::logger> logger_;
};

}  // namespace volseg
