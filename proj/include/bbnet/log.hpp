#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace bbnet::log {

enum class Level { Debug, Info, Warn, Error };

void write(Level level, std::string_view message);
// Reads SPDLOG_LEVEL from the environment.
void init_from_env();

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::Debug, concat(args...)); }
template <typename... Args>
void info(const Args&... args) { write(Level::Info, concat(args...)); }
template <typename... Args>
void warn(const Args&... args) { write(Level::Warn, concat(args...)); }
template <typename... Args>
void error(const Args&... args) { write(Level::Error, concat(args...)); }

}  // namespace bbnet::log
