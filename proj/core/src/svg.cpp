#include "css/svg.hpp"

#include <cstdio>

namespace css::cli {

namespace {

std::string num(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.3f", v);
  return buffer;
}

}  // namespace

SvgCanvas::SvgCanvas(double world_lo_x, double world_lo_y, double world_hi_x, double world_hi_y,
                     int pixels, double margin_fraction) {
  world_lo_ = {world_lo_x, world_lo_y};
  world_hi_ = {world_hi_x, world_hi_y};
  const double span_x = std::max(world_hi_x - world_lo_x, 1e-9);
  const double span_y = std::max(world_hi_y - world_lo_y, 1e-9);
  margin_px_ = margin_fraction * pixels;
  scale_ = (pixels - 2.0 * margin_px_) / std::max(span_x, span_y);
  width_px_ = static_cast<int>(span_x * scale_ + 2.0 * margin_px_ + 0.5);
  height_px_ = static_cast<int>(span_y * scale_ + 2.0 * margin_px_ + 0.5);
}

Eigen::Vector2d SvgCanvas::to_pixel(const Eigen::Vector2d& world) const {
  return {margin_px_ + (world.x() - world_lo_.x()) * scale_,
          height_px_ - margin_px_ - (world.y() - world_lo_.y()) * scale_};
}

void SvgCanvas::polygon(const std::vector<Eigen::Vector2d>& points, const std::string& stroke,
                        const std::string& fill, double stroke_width, double fill_opacity) {
  body_ += "<polygon points=\"";
  for (const auto& p : points) {
    const Eigen::Vector2d px = to_pixel(p);
    body_ += num(px.x()) + "," + num(px.y()) + " ";
  }
  body_ += "\" stroke=\"" + stroke + "\" fill=\"" + fill + "\" stroke-width=\"" +
           num(stroke_width) + "\" fill-opacity=\"" + num(fill_opacity) + "\"/>\n";
}

void SvgCanvas::polyline(const std::vector<Eigen::Vector2d>& points, const std::string& stroke,
                         double stroke_width) {
  body_ += "<polyline points=\"";
  for (const auto& p : points) {
    const Eigen::Vector2d px = to_pixel(p);
    body_ += num(px.x()) + "," + num(px.y()) + " ";
  }
  body_ += "\" stroke=\"" + stroke + "\" fill=\"none\" stroke-width=\"" + num(stroke_width) +
           "\"/>\n";
}

void SvgCanvas::line(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const std::string& stroke, double stroke_width) {
  const Eigen::Vector2d pa = to_pixel(a);
  const Eigen::Vector2d pb = to_pixel(b);
  body_ += "<line x1=\"" + num(pa.x()) + "\" y1=\"" + num(pa.y()) + "\" x2=\"" + num(pb.x()) +
           "\" y2=\"" + num(pb.y()) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
           num(stroke_width) + "\"/>\n";
}

void SvgCanvas::rect(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, const std::string& fill,
                     double fill_opacity) {
  const Eigen::Vector2d a = to_pixel({lo.x(), hi.y()});  // top-left in pixels
  const Eigen::Vector2d b = to_pixel({hi.x(), lo.y()});
  body_ += "<rect x=\"" + num(a.x()) + "\" y=\"" + num(a.y()) + "\" width=\"" +
           num(b.x() - a.x()) + "\" height=\"" + num(b.y() - a.y()) + "\" fill=\"" + fill +
           "\" fill-opacity=\"" + num(fill_opacity) + "\" stroke=\"none\"/>\n";
}

void SvgCanvas::circle(const Eigen::Vector2d& center, double world_radius,
                       const std::string& fill) {
  const Eigen::Vector2d c = to_pixel(center);
  body_ += "<circle cx=\"" + num(c.x()) + "\" cy=\"" + num(c.y()) + "\" r=\"" +
           num(world_radius * scale_) + "\" fill=\"" + fill + "\"/>\n";
}

void SvgCanvas::text(const Eigen::Vector2d& anchor, const std::string& content, int font_px) {
  const Eigen::Vector2d p = to_pixel(anchor);
  body_ += "<text x=\"" + num(p.x()) + "\" y=\"" + num(p.y()) + "\" font-size=\"" +
           std::to_string(font_px) + "\" font-family=\"sans-serif\">" + content + "</text>\n";
}

std::string SvgCanvas::str() const {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width_px_) +
         "\" height=\"" + std::to_string(height_px_) + "\" viewBox=\"0 0 " +
         std::to_string(width_px_) + " " + std::to_string(height_px_) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += body_;
  out += "</svg>\n";
  return out;
}

}  // namespace css::cli
