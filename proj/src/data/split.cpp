#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "auxseg/data.hpp"

namespace auxseg {

DatasetSplits split(std::span<const Sample> samples, std::array<double, 3> fractions,
                    uint64_t seed) {
  if (samples.size() < 3) throw std::invalid_argument("split: need at least 3 samples");
  for (double f : fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("split: fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }
  for (const auto& s : samples) {
    if (!s.mask) throw std::invalid_argument("split: sample '" + s.id + "' has no mask");
  }

  const auto n = samples.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng.engine());

  const auto n_val = static_cast<size_t>(std::llround(static_cast<double>(n) * fractions[1]));
  const auto n_test = static_cast<size_t>(std::llround(static_cast<double>(n) * fractions[2]));
  if (n_val + n_test >= n) throw std::invalid_argument("split: train split would be empty");
  const size_t n_train = n - n_val - n_test;

  DatasetSplits out;
  for (size_t i = 0; i < n; ++i) {
    const auto& s = samples[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

BatchSampler::BatchSampler(size_t dataset_size, uint64_t seed) : order_(dataset_size), rng_(seed) {
  if (dataset_size == 0) throw std::invalid_argument("BatchSampler: empty dataset");
  std::iota(order_.begin(), order_.end(), size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_.engine());
  cursor_ = 0;
}

std::vector<size_t> BatchSampler::next(size_t batch_size) {
  std::vector<size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) reshuffle();
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace auxseg
