#include "hhrf/dataset.hpp"

#include <stdexcept>
#include <string>

namespace hhrf {

void Dataset::validate() const {
  if (n_subjects < 1) throw std::invalid_argument("dataset has no subjects");
  if (V < 1 || T < 1) throw std::invalid_argument("dataset has no voxels or scans");
  if (!(tr > 0.0)) throw std::invalid_argument("TR must be positive");
  if (static_cast<int>(bold.size()) != n_subjects) throw std::invalid_argument("subject count does not match data");
  for (std::size_t j = 0; j < bold.size(); ++j) {
    if (bold[j].rows() != V || bold[j].cols() != T)
      throw std::invalid_argument("subject " + std::to_string(j) + " has the wrong data shape");
  }
  if (static_cast<int>(parcels.size()) != V) throw std::invalid_argument("need one parcel label per voxel");
  if (nx > 0 && nx * ny != V) throw std::invalid_argument("grid size does not match voxel count");
  if (timeline.L != L || timeline.T != T || timeline.tr != tr)
    throw std::invalid_argument("timeline does not match the dataset header");
  timeline.validate();
}

}  // namespace hhrf
