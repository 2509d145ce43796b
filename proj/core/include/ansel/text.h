#ifndef ANSEL_TEXT_H_
#define ANSEL_TEXT_H_

#include <optional>
#include <string>
#include <string_view>

namespace ansel {

enum class CasingMode { kCased, kUncased };

std::string_view casing_name(CasingMode mode);
std::optional<CasingMode> parse_casing(std::string_view name);

// ASCII lowercasing/uppercasing; bytes >= 0x80 pass through unchanged.
std::string to_lower(std::string_view text);
std::string to_upper(std::string_view text);

inline std::string apply_casing(std::string_view text, CasingMode mode) {
  return mode == CasingMode::kUncased ? to_lower(text) : std::string(text);
}

}  // namespace ansel

#endif  // ANSEL_TEXT_H_
