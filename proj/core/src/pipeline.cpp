#include "ncp/pipeline.hpp"

#include "ncp/error.hpp"
#include "ncp/idx.hpp"

namespace ncp {

RunData load_run_data(const RunConfig& config) {
  const auto& d = config.dataset;
  RunData out;
  if (d.family == "gaussian_ring") {
    RingData ring = make_gaussian_ring(d.n, d.k_modes, d.radius, d.sigma, config.seed);
    auto [train, valid] = split_validation(ring.dataset, d.valid_fraction, config.seed);
    out.train = DataView{train.samples, false};
    out.valid = DataView{valid.samples, false};
    const std::size_t held = d.heldout_n > 0 ? d.heldout_n : d.n;
    out.heldout = make_gaussian_ring(held, d.k_modes, d.radius, d.sigma, config.seed + 1000003)
                      .dataset.samples;
    out.density = ring.density;
    return out;
  }
  if (d.family == "mnist_idx") {
    Tensor images = load_idx_images(d.train_images);
    const std::size_t n = images.shape()[0];
    Dataset all{images.reshaped({n, 28 * 28}), Split::kTrain, GeneratorSpec{"mnist_idx", n}};
    auto [train, valid] = split_validation(all, d.valid_fraction, config.seed);
    out.train = DataView{train.samples, true};
    out.valid = DataView{valid.samples, true};
    if (!d.test_images.empty()) {
      Tensor test = load_idx_images(d.test_images);
      const std::size_t m = test.shape()[0];
      Rng rng(config.seed, 0x54455354);
      out.heldout = binarize_dynamic(test.reshaped({m, 28 * 28}), rng);
    }
    return out;
  }
  throw ConfigError("unknown dataset family '" + d.family + "'");
}

HierarchicalVae make_initial_model(const RunConfig& config) {
  HierarchicalVae model(config.model);
  Rng rng(config.seed, 0x494e4954);
  model.init(rng);
  return model;
}

}  // namespace ncp
