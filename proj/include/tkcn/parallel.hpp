#pragma once

#include <cstddef>
#include <functional>

namespace tkcn {

/// Caps the worker count used by parallel_for. 0 means hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [0, count). Each index is handled by exactly one
/// worker, so results never depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Keeps large freed blocks on the heap instead of returning them to the OS.
/// Training reallocates the same activation sizes every step, and fresh pages
/// cost a fault each. No-op outside glibc.
void keep_heap_warm();

}  // namespace tkcn
