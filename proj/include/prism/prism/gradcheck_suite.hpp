#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prism::core {

/// Worst central-difference error of one layer type over all seeds.
struct LayerGradCheck {
  std::string layer;
  std::size_t seeds = 0;
  double max_relative_error = 0.0;
  std::uint64_t worst_seed = 0;
};

/// grad_check at 64-bit on a fresh random instance of every layer type, the interaction
/// losses and the full training loss, once per seed. Hinge terms are placed at least
/// 1e-3 away from their kink.
std::vector<LayerGradCheck> gradient_check_suite(std::size_t seeds = 20, double eps = 1e-6);

}  // namespace prism::core
