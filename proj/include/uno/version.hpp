#pragma once

namespace uno {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace uno
