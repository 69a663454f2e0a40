#pragma once

#include <span>
#include <string>

#include "signline/geometry.hpp"
#include "signline/line_layout.hpp"

namespace signline {

/// SVG drawing of a line layout: boxes coloured by line, each line's fitted
/// segment, and the reading index of every box. `image_href` (optional) is
/// placed underneath.
std::string layout_svg(int width, int height, std::span<const BoundingBox> boxes, const LayoutResult& layout,
                       const std::string& image_href = "");

} // namespace signline
