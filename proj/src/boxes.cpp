#include "tfuse/boxes.hpp"

#include <algorithm>
#include <stdexcept>

namespace tfuse {

std::string to_string(Occlusion o) {
  switch (o) {
    case Occlusion::none:
      return "none";
    case Occlusion::partial:
      return "partial";
    case Occlusion::heavy:
      return "heavy";
  }
  return "none";
}

Occlusion occlusion_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return Occlusion::none;
  if (s == "partial") return Occlusion::partial;
  if (s == "heavy") return Occlusion::heavy;
  throw std::invalid_argument("unknown occlusion tag: " + s);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

}  // namespace tfuse
