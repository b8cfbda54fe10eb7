#pragma once

#include "mdtrack/common.hpp"

namespace mdtrack {

// Axis-aligned box in normalized center/size form. All values are fractions
// of the search-region side; conversion to corner form happens only inside
// the overlap math.
struct BBox {
    double cx = 0, cy = 0, w = 0, h = 0;

    bool degenerate() const { return !(w > 0.0) || !(h > 0.0); }
    double x0() const { return cx - 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double x1() const { return cx + 0.5 * w; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static BBox from_corners(double x0, double y0, double x1, double y1) {
        return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }
    // top-left x,y,w,h (the groundtruth.txt convention)
    static BBox from_xywh(double x, double y, double w, double h) {
        return {x + 0.5 * w, y + 0.5 * h, w, h};
    }
};

double iou(const BBox& a, const BBox& b);

// IoU minus the enclosing-box penalty; range [-1, 1], exactly 1 for
// identical boxes. Throws DomainError on degenerate inputs.
double giou(const BBox& a, const BBox& b);
inline double giou_loss(const BBox& a, const BBox& b) { return 1.0 - giou(a, b); }

double center_distance(const BBox& a, const BBox& b);

}  // namespace mdtrack
