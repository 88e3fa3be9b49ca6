#include "bbnet/log.hpp"

#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

namespace bbnet::log {

void write(Level level, std::string_view message) {
    switch (level) {
        case Level::Debug: spdlog::debug("{}", message); break;
        case Level::Info: spdlog::info("{}", message); break;
        case Level::Warn: spdlog::warn("{}", message); break;
        case Level::Error: spdlog::error("{}", message); break;
    }
}

void init_from_env() { spdlog::cfg::load_env_levels(); }

}  // namespace bbnet::log
