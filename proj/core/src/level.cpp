#include "tss/level.hpp"

#include <string>

#include "tss/error.hpp"

namespace tss {

std::string_view to_string(Level level) noexcept {
  switch (level) {
    case Level::task:
      return "task";
    case Level::step:
      return "step";
    case Level::before:
      return "before";
    case Level::mid:
      return "mid";
    case Level::after:
      return "after";
  }
  return "?";
}

Level parse_level(std::string_view name) {
  for (Level level : kAllLevels) {
    if (to_string(level) == name) return level;
  }
  throw ConfigError("unknown level '" + std::string(name) + "'");
}

}  // namespace tss
