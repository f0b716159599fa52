#include <algorithm>
#include <numeric>
#include <set>

#include "auxseg/auxtask.hpp"

namespace auxseg {
namespace {

// n! saturating at `cap`.
int64_t bounded_factorial(int64_t n, int64_t cap) {
  int64_t f = 1;
  for (int64_t i = 2; i <= n; ++i) {
    if (f > cap / i) return cap + 1;
    f *= i;
  }
  return f;
}

constexpr int64_t kEnumerateLimit = 40320;  // 8!

}  // namespace

std::vector<Permutation> rkb_permutations(int64_t rows, int64_t cols, int64_t k, uint64_t seed) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("rkb_permutations: grid must be positive");
  if (k <= 0) throw std::invalid_argument("rkb_permutations: k must be positive");
  const int64_t n = rows * cols;
  const int64_t total = bounded_factorial(n, std::numeric_limits<int32_t>::max());
  if (k > total) {
    throw std::invalid_argument("rkb_permutations: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(n) + "! permutations");
  }
  Permutation identity(static_cast<size_t>(n));
  std::iota(identity.begin(), identity.end(), int64_t{0});

  std::vector<Permutation> out{identity};
  Rng rng(derive_seed(seed, "rkb_permutations"));
  if (total <= kEnumerateLimit) {
    std::vector<Permutation> rest;
    auto p = identity;
    while (std::next_permutation(p.begin(), p.end())) rest.push_back(p);
    std::shuffle(rest.begin(), rest.end(), rng.engine());
    if (k == total) {
      // Keep the full set in lexicographic order after the identity.
      std::sort(rest.begin(), rest.end());
    }
    out.insert(out.end(), rest.begin(), rest.begin() + (k - 1));
    return out;
  }
  std::set<Permutation> seen{identity};
  while (static_cast<int64_t>(out.size()) < k) {
    auto p = identity;
    std::shuffle(p.begin(), p.end(), rng.engine());
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

Permutation invert(const Permutation& p) {
  Permutation inv(p.size());
  for (size_t j = 0; j < p.size(); ++j) inv[static_cast<size_t>(p[j])] = static_cast<int64_t>(j);
  return inv;
}

torch::Tensor partition_patches(const torch::Tensor& image, int64_t rows, int64_t cols) {
  if (image.dim() != 2) throw std::invalid_argument("partition_patches: image must be 2D");
  const int64_t ph = image.size(0) / rows, pw = image.size(1) / cols;
  if (ph == 0 || pw == 0) throw std::invalid_argument("partition_patches: image smaller than grid");
  const int64_t top = (image.size(0) - ph * rows) / 2;
  const int64_t left = (image.size(1) - pw * cols) / 2;
  const auto cropped = image.slice(0, top, top + ph * rows).slice(1, left, left + pw * cols);
  // rows×ph×cols×pw → rows×cols×ph×pw → P×ph×pw
  return cropped.reshape({rows, ph, cols, pw}).permute({0, 2, 1, 3}).reshape({rows * cols, ph, pw}).contiguous();
}

torch::Tensor permute_patches(const torch::Tensor& stack, const Permutation& perm) {
  if (static_cast<int64_t>(perm.size()) != stack.size(0)) {
    throw std::invalid_argument("permute_patches: permutation length does not match patch count");
  }
  return stack.index_select(0, torch::tensor(perm, torch::kInt64));
}

PatchExample rkb_make_example(const torch::Tensor& image, int64_t rows, int64_t cols,
                              int64_t perm_index, std::span<const Permutation> perms) {
  if (perm_index < 0 || perm_index >= static_cast<int64_t>(perms.size())) {
    throw std::out_of_range("rkb_make_example: perm_index " + std::to_string(perm_index) +
                            " outside [0, " + std::to_string(perms.size()) + ")");
  }
  return PatchExample{permute_patches(partition_patches(image, rows, cols), perms[perm_index]),
                      perm_index};
}

}  // namespace auxseg
