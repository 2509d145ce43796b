#include "ansel/text.h"

namespace ansel {

std::string_view casing_name(CasingMode mode) {
  return mode == CasingMode::kCased ? "cased" : "uncased";
}

std::optional<CasingMode> parse_casing(std::string_view name) {
  if (name == "cased") return CasingMode::kCased;
  if (name == "uncased") return CasingMode::kUncased;
  return std::nullopt;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string to_upper(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  }
  return out;
}

}  // namespace ansel
