// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_VERSION_HPP
#define CPSAMPLE_VERSION_HPP

namespace cpsample {

// Build identifier injected by the build system (git describe), falling
// back to "untagged" for ad-hoc compiles.
inline const char* build_id() {
#ifdef CPSAMPLE_BUILD_ID
    return CPSAMPLE_BUILD_ID;
#else
    return "untagged";
#endif
}

}  // namespace cpsample

#endif
