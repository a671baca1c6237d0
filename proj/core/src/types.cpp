#include "sketchdit/types.hpp"

#include <algorithm>

namespace sketchdit {

VideoClip VideoClip::frame(int t) const {
  VideoClip out(1, height, width);
  const auto begin = pixels.begin() + static_cast<std::ptrdiff_t>(index(t, 0, 0, 0));
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.pixels.size()), out.pixels.begin());
  return out;
}

std::size_t BinaryMap::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

ColVec LatentMask::as_weights() const {
  ColVec w(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) w(static_cast<Eigen::Index>(i)) = cells[i] ? 1.0 : 0.0;
  return w;
}

ColVec LatentMask::inverted_weights() const { return ColVec::Ones(static_cast<Eigen::Index>(cells.size())) - as_weights(); }

}  // namespace sketchdit
