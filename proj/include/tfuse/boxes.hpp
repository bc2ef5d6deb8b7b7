#pragma once

#include <cstddef>
#include <string>

namespace tfuse {

/// Axis-aligned box in pixel coordinates, half-open: [x1,x2) x [y1,y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  friend bool operator==(const Box&, const Box&) = default;
};

enum class Occlusion { none, partial, heavy };

std::string to_string(Occlusion o);
Occlusion occlusion_from_string(const std::string& s);

struct GroundTruthBox {
  Box box;
  Occlusion occlusion = Occlusion::none;
};

struct Detection {
  Box box;
  double score = 0.0;
  std::size_t image_id = 0;
};

/// Intersection over union with the half-open convention (no +1 on extents).
double iou(const Box& a, const Box& b);

/// Clips to [0,width) x [0,height).
Box clip_box(const Box& b, double width, double height);

}  // namespace tfuse
