#pragma once

namespace css {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace css
