#pragma once

namespace tcprune {

inline const char* version() { return "0.1.0"; }

}  // namespace tcprune
