// SPDX-License-Identifier: Apache-2.0
#pragma once

// Instrumented multiply-add counting. matmul and conv2d report every
// multiply-add they execute in their forward pass to the bucket that is
// current on the calling thread; softmax reports the elements it normalizes.
// Backward passes are not counted.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace paca {

enum class FlopBucket : std::size_t {
  kOther = 0,
  kProjection,       // Q/K/V and output projections
  kAttentionMatrix,  // q . k^T
  kAttentionApply,   // A . v
  kClustering,       // K/V source construction: clustering or nested embedding
  kFfn,
  kCount,
};

std::string_view bucket_name(FlopBucket bucket);

struct FlopTally {
  std::array<std::uint64_t, static_cast<std::size_t>(FlopBucket::kCount)> macs{};
  std::uint64_t softmax_elements = 0;

  std::uint64_t operator[](FlopBucket b) const { return macs[static_cast<std::size_t>(b)]; }
  std::uint64_t total_macs() const;
};

class FlopCounter {
 public:
  // Counts accrue only while a Session is alive on this thread.
  class Session {
   public:
    Session();
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;
    const FlopTally& tally() const;

   private:
    FlopTally* previous_;
    FlopTally tally_;
  };

  static void add_macs(std::uint64_t macs);
  static void add_softmax(std::uint64_t elements);
};

// Sets the bucket for the enclosed scope; restores the previous one on exit.
class FlopScope {
 public:
  explicit FlopScope(FlopBucket bucket);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopBucket previous_;
};

}  // namespace paca
