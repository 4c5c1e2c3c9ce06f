#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "stainforge/archive.hpp"

namespace stainforge {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed, named parameter list. Moments live beside the
/// parameters so the whole optimizer state round-trips through an archive.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options);

  void zero_grad();
  /// Parameters without a gradient are left untouched.
  void step();

  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  void save_state(TensorArchive& archive, const std::string& prefix) const;
  void load_state(const TensorArchive& archive, const std::string& prefix);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param;
    torch::Tensor m;
    torch::Tensor v;
  };

  std::vector<Slot> slots_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace stainforge
