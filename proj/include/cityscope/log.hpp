#ifndef CITYSCOPE_LOG_HPP
#define CITYSCOPE_LOG_HPP

#include <cstdlib>
#include <iostream>
#include <string>

namespace cityscope {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from CITYSCOPE_LOG (error|info|debug), default info.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("CITYSCOPE_LOG");
        if (!env) return LogLevel::info;
        std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log_info(const std::string& message) {
    if (log_level() >= LogLevel::info) std::cerr << message << "\n";
}

inline void log_debug(const std::string& message) {
    if (log_level() >= LogLevel::debug) std::cerr << "[debug] " << message << "\n";
}

} // namespace cityscope

#endif
