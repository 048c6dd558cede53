#pragma once

#include <cstdint>
#include <string>

#include "vgdial/corpus.h"
#include "vgdial/regions.h"

namespace vgdial {

// Stand-in for an object detector: re-observes an image of the synthetic
// world and emits K tagged regions. Each region picks one of the image's
// concepts (with replacement once the image's own bag is exhausted) and
// perturbs its latent vector with isotropic gaussian noise.
RegionSet synthetic_detect(const ImageRecord& image,
                           const SyntheticWorld& world, int K, double noise,
                           uint64_t seed);

}  // namespace vgdial
