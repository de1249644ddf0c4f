#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace css::cli {

/// Minimal SVG canvas with a world-to-pixel transform (y axis flipped).
class SvgCanvas {
 public:
  SvgCanvas(double world_lo_x, double world_lo_y, double world_hi_x, double world_hi_y,
            int pixels = 640, double margin_fraction = 0.08);

  void polygon(const std::vector<Eigen::Vector2d>& points, const std::string& stroke,
               const std::string& fill, double stroke_width, double fill_opacity = 1.0);
  void polyline(const std::vector<Eigen::Vector2d>& points, const std::string& stroke,
                double stroke_width);
  void line(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const std::string& stroke,
            double stroke_width);
  void rect(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, const std::string& fill,
            double fill_opacity);
  void circle(const Eigen::Vector2d& center, double world_radius, const std::string& fill);
  void text(const Eigen::Vector2d& anchor, const std::string& content, int font_px = 14);

  std::string str() const;

 private:
  Eigen::Vector2d to_pixel(const Eigen::Vector2d& world) const;
  double scale_;
  Eigen::Vector2d world_lo_;
  Eigen::Vector2d world_hi_;
  double margin_px_;
  int width_px_;
  int height_px_;
  std::string body_;
};

}  // namespace css::cli
