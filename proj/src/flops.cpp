// SPDX-License-Identifier: Apache-2.0
#include "paca/flops.hpp"

#include <numeric>

namespace paca {
namespace {
thread_local FlopTally* t_tally = nullptr;
thread_local FlopBucket t_bucket = FlopBucket::kOther;
}  // namespace

std::string_view bucket_name(FlopBucket bucket) {
  switch (bucket) {
    case FlopBucket::kOther: return "other";
    case FlopBucket::kProjection: return "projections";
    case FlopBucket::kAttentionMatrix: return "attn_matrix";
    case FlopBucket::kAttentionApply: return "attn_apply";
    case FlopBucket::kClustering: return "clustering";
    case FlopBucket::kFfn: return "ffn";
    case FlopBucket::kCount: break;
  }
  return "?";
}

std::uint64_t FlopTally::total_macs() const { return std::accumulate(macs.begin(), macs.end(), std::uint64_t{0}); }

FlopCounter::Session::Session() : previous_(t_tally) { t_tally = &tally_; }
FlopCounter::Session::~Session() { t_tally = previous_; }
const FlopTally& FlopCounter::Session::tally() const { return tally_; }

void FlopCounter::add_macs(std::uint64_t macs) {
  if (t_tally != nullptr) t_tally->macs[static_cast<std::size_t>(t_bucket)] += macs;
}

void FlopCounter::add_softmax(std::uint64_t elements) {
  if (t_tally != nullptr) t_tally->softmax_elements += elements;
}

FlopScope::FlopScope(FlopBucket bucket) : previous_(t_bucket) { t_bucket = bucket; }
FlopScope::~FlopScope() { t_bucket = previous_; }

}  // namespace paca
