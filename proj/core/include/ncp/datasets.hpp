#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncp/random.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

enum class Split { kTrain, kValid, kTest };

std::string to_string(Split split);

/// Everything needed to regenerate a synthetic dataset exactly.
struct GeneratorSpec {
  std::string family = "gaussian_ring";
  std::size_t n = 0;
  std::size_t k_modes = 8;
  double radius = 2.0;
  double sigma = 0.1;
  std::uint64_t seed = 0;
};

struct Dataset {
  Tensor samples;  // N x d
  Split split = Split::kTrain;
  GeneratorSpec spec;

  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
};

/// Equal-weight isotropic Gaussian mixture with explicit parameters.
struct GaussianMixture {
  std::vector<std::vector<double>> means;
  double sigma = 1.0;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  double log_density(std::span<const double> x) const;
  /// Index of the component whose mean is closest to x.
  std::size_t nearest_mode(std::span<const double> x) const;
};

struct RingData {
  Dataset dataset;
  GaussianMixture density;
};

/// k equal-weight Gaussians with means on a circle of the given radius.
/// Component counts are stratified (sample i belongs to mode i mod k before a
/// seeded shuffle), so every mode receives n/k samples up to rounding.
RingData make_gaussian_ring(std::size_t n, std::size_t k_modes, double radius, double sigma,
                            std::uint64_t seed);
RingData make_gaussian_ring(const GeneratorSpec& spec);

/// Deterministically moves `fraction` of the rows into a validation split.
std::pair<Dataset, Dataset> split_validation(const Dataset& train, double fraction,
                                             std::uint64_t seed);

/// Bernoulli(intensity) per pixel; intensities outside [0, 1] are rejected.
Tensor binarize_dynamic(const Tensor& images, Rng& rng);

/// Shuffled minibatch index stream, reshuffled every epoch, reproducible per seed.
/// A trailing partial batch is dropped unless the dataset is smaller than one batch.
class MinibatchIterator {
 public:
  MinibatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();
  /// Replays `count` batches; used to resume mid-epoch.
  void skip(std::uint64_t count);

  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t batches_served() const { return served_; }
  std::size_t batch_size() const { return batch_; }

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t served_ = 0;
};

}  // namespace ncp
