#pragma once

#include <chrono>
#include <functional>
#include <thread>

#include "iclad/error.hpp"

namespace iclad {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  double multiplier = 2.0;
  std::function<void(std::chrono::milliseconds)> sleep =
      [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  std::chrono::milliseconds delay_before(int attempt) const {
    double ms = static_cast<double>(base_delay.count());
    for (int i = 1; i < attempt; ++i) ms *= multiplier;
    return std::chrono::milliseconds(static_cast<long long>(ms));
  }
};

/// Runs `fn`, retrying transient iclad::Error failures with exponential
/// backoff. Permanent errors and the last transient error propagate.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (!e.transient() || attempt >= policy.max_attempts) throw;
      if (policy.sleep) policy.sleep(policy.delay_before(attempt));
    }
  }
}

}  // namespace iclad
