#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace tss {

// Semantic levels of the task/step/state hierarchy. The three state phases
// are separate levels because their texts are clustered independently.
enum class Level : std::uint8_t { task, step, before, mid, after };

inline constexpr std::array<Level, 5> kAllLevels{Level::task, Level::step, Level::before,
                                                 Level::mid, Level::after};
inline constexpr std::array<Level, 3> kStateLevels{Level::before, Level::mid, Level::after};

constexpr bool is_state_level(Level level) noexcept {
  return level == Level::before || level == Level::mid || level == Level::after;
}

std::string_view to_string(Level level) noexcept;
Level parse_level(std::string_view name);

}  // namespace tss
