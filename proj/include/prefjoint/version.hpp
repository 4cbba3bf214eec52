#pragma once

namespace prefjoint {
inline constexpr const char* version = "0.1.0";
}
