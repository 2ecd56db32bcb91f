#pragma once

namespace cmml {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cmml
