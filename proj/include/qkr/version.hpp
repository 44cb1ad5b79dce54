#pragma once

namespace qkr {
inline constexpr const char* version_string = "qkr-fss 1.0.0";
}
