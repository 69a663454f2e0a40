#include "signline/overlay.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <sstream>

namespace signline {

namespace {

const char* const kPalette[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
                                "#42d4f4", "#f032e6", "#9a6324", "#469990", "#808000"};

std::string escape(const std::string& s) {
	std::string out;
	for (const char c : s) {
		switch (c) {
		case '&': out += "&amp;"; break;
		case '<': out += "&lt;"; break;
		case '>': out += "&gt;"; break;
		case '"': out += "&quot;"; break;
		default: out += c;
		}
	}
	return out;
}

} // namespace

std::string layout_svg(int width, int height, std::span<const BoundingBox> boxes, const LayoutResult& layout,
                       const std::string& image_href) {
	std::ostringstream s;
	s << std::fixed << std::setprecision(1);
	s << "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" << width
	  << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
	if (!image_href.empty()) {
		s << "  <image xlink:href=\"" << escape(image_href) << "\" x=\"0\" y=\"0\" width=\"" << width
		  << "\" height=\"" << height << "\"/>\n";
	}
	std::vector<std::size_t> order(boxes.size(), 0);
	for (std::size_t r = 0; r < layout.reading_sequence.size(); ++r) {
		order[layout.reading_sequence[r]] = r;
	}
	for (std::size_t l = 0; l < layout.lines.size(); ++l) {
		const TextLine& line = layout.lines[l];
		const char* colour = kPalette[l % std::size(kPalette)];
		double x0 = std::numeric_limits<double>::infinity();
		double x1 = -x0;
		for (const auto m : line.members) {
			x0 = std::min(x0, boxes[m].x_min);
			x1 = std::max(x1, boxes[m].x_max);
		}
		if (!line.members.empty()) {
			s << "  <line x1=\"" << x0 << "\" y1=\"" << line.y_at(x0) << "\" x2=\"" << x1 << "\" y2=\""
			  << line.y_at(x1) << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"/>\n";
		}
		for (const auto m : line.members) {
			const BoundingBox& b = boxes[m];
			s << "  <rect x=\"" << b.x_min << "\" y=\"" << b.y_min << "\" width=\"" << b.width() << "\" height=\""
			  << b.height() << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
			s << "  <text x=\"" << b.x_min + 2 << "\" y=\"" << b.y_min + 10 << "\" font-size=\"10\" fill=\"" << colour
			  << "\">" << order[m] << "</text>\n";
		}
	}
	s << "</svg>\n";
	return s.str();
}

} // namespace signline
