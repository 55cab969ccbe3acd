#include "weaver/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace weaver {

namespace {
std::atomic<LogLevel> g_level{LogLevel::warning};
std::mutex g_mutex;

const char* level_tag(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warning: return "warning";
        case LogLevel::error: return "error";
        case LogLevel::off: break;
    }
    return "";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }

LogLevel log_level() { return g_level; }

void log(LogLevel level, std::string_view message) {
    if (level < g_level.load() || level == LogLevel::off) {
        return;
    }
    std::lock_guard lock(g_mutex);
    std::cerr << "[weaver " << level_tag(level) << "] " << message << '\n';
}

}  // namespace weaver
