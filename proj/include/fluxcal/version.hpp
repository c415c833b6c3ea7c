#pragma once

namespace fluxcal {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fluxcal
