#include "vgdial/detector.h"

#include <stdexcept>

#include "vgdial/rng.h"

namespace vgdial {

RegionSet synthetic_detect(const ImageRecord& image,
                           const SyntheticWorld& world, int K, double noise,
                           uint64_t seed) {
  if (K <= 0) throw std::invalid_argument("K must be >= 1");
  if (noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  validate_region_set(image.regions);

  const int bag = image.regions.k();
  const int d_obj = image.regions.d_obj();
  Rng rng(seed);

  RegionSet out;
  out.image_id = image.id;
  out.features.resize(K, d_obj);
  for (int r = 0; r < K; ++r) {
    // Walk the image's own regions first, then resample with replacement.
    const int src = r < bag ? r : static_cast<int>(rng.uniform(
                                      static_cast<size_t>(bag)));
    const std::string& tag = image.regions.concepts[static_cast<size_t>(src)];
    const int latent_row = world.concept_index(tag);
    if (latent_row < 0)
      throw std::runtime_error("image '" + image.id +
                               "' carries unknown concept tag '" + tag + "'");
    out.concepts.push_back(tag);
    for (int d = 0; d < d_obj; ++d)
      out.features(r, d) =
          world.concept_latents(latent_row, d) + noise * rng.gaussian();
    out.boxes.push_back(image.regions.boxes[static_cast<size_t>(src)]);
  }
  validate_region_set(out);
  return out;
}

}  // namespace vgdial
