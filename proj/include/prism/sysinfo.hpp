#pragma once

#include <cstdint>

namespace prism {

/// Peak resident set size of this process in bytes (VmHWM), 0 where unavailable.
std::uint64_t peak_rss_bytes();

/// Resets the peak-RSS watermark to the current RSS. Returns false when the kernel
/// refuses, in which case the watermark keeps covering the whole process lifetime.
bool reset_peak_rss();

}  // namespace prism
