#pragma once

#include <cstdint>
#include <vector>

#include "ufdn/tensor.hpp"

namespace ufdn {

/// One training minibatch. Both domain codes have N one-hot domain slots
/// followed by K attribute bits; v_target differs from v_true in the domain
/// slots of every row.
struct Batch {
  Tensor images;    // [B,C,H,W] in [0,1]
  Tensor v_true;    // [B,N+K]
  Tensor v_target;  // [B,N+K]
  std::vector<int> domains;
  std::vector<int> target_domains;
  std::vector<int> labels;             // class label per row, -1 if unknown
  std::vector<std::uint8_t> label_mask; // 1 where the label may be consumed
  std::vector<std::size_t> sprite_ids;

  std::size_t size() const { return domains.size(); }
};

}  // namespace ufdn
