#pragma once

namespace stmix {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stmix
