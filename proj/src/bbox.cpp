#include "mdtrack/bbox.hpp"

#include <algorithm>
#include <cmath>

namespace mdtrack {

double iou(const BBox& a, const BBox& b) {
    if (a.degenerate() || b.degenerate()) throw DomainError("iou of a zero-area box");
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

double giou(const BBox& a, const BBox& b) {
    if (a.degenerate() || b.degenerate()) throw DomainError("giou of a zero-area box");
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    const double ex = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
    const double ey = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
    const double enc = ex * ey;
    return inter / uni - (enc - uni) / enc;
}

double center_distance(const BBox& a, const BBox& b) {
    return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

}  // namespace mdtrack
