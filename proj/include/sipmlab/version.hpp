#pragma once

namespace sipmlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sipmlab
