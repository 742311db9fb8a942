#pragma once

namespace stereocorr {
inline constexpr const char* kVersion = "0.1.0";
}
