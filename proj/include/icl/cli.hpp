#pragma once

#include <string>
#include <vector>

namespace icl {

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

// Output directory override, read when --out is not given.
inline constexpr const char *kOutDirEnv = "ICL_OUT_DIR";

int run(int argc, const char *const *argv);
// Arguments without the program name.
int run(const std::vector<std::string> &args);

} // namespace icl
