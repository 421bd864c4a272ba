#pragma once

// Minimal SVG output: time-series line plots and a top-down road/trajectory
// view. No dependencies; a few hundred elements per file at most.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/geometry.hpp"

namespace mshield {

struct PlotSeries {
  std::string label;
  std::string color = "#1f6fb2";
  std::vector<double> x, y;
};

namespace svgdetail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void expand(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span() const { return hi - lo > 1e-12 ? hi - lo : 1.0; }
};

}  // namespace svgdetail

// A single-panel line plot with axes and tick labels.
inline void write_line_plot(const std::string& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            const std::vector<PlotSeries>& series) {
  using svgdetail::num;
  const double W = 640, H = 400;
  const double ml = 64, mr = 16, mt = 36, mb = 48;
  svgdetail::Range rx, ry;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        rx.lo = rx.hi = s.x[i];
        ry.lo = ry.hi = s.y[i];
        any = true;
      }
      rx.expand(s.x[i]);
      ry.expand(s.y[i]);
    }
  }
  if (ry.hi - ry.lo < 1e-9) {
    ry.lo -= 1.0;
    ry.hi += 1.0;
  }
  auto px = [&](double x) { return ml + (x - rx.lo) / rx.span() * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ry.lo) / ry.span() * (H - mt - mb); };

  std::ofstream os(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\" "
        "font-family=\"sans-serif\">" << title << "</text>\n";
  // Axes.
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = rx.lo + rx.span() * k / 5.0;
    const double yv = ry.lo + ry.span() * k / 5.0;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << H - mb << "\" x2=\""
       << num(px(xv)) << "\" y2=\"" << H - mb + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - mb + 20
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
       << num(xv) << "</text>\n";
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << ml
       << "\" y2=\"" << num(py(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << num(py(yv) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << xlabel
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
        "transform=\"rotate(-90 16 " << (mt + H - mb) / 2 << ")\">" << ylabel
     << "</text>\n";
  int legend_y = static_cast<int>(mt) + 6;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << num(px(s.x[i])) << "," << num(py(s.y[i])) << " ";
    }
    os << "\"/>\n";
    if (!s.label.empty() && series.size() > 1) {
      os << "<line x1=\"" << W - mr - 120 << "\" y1=\"" << legend_y << "\" x2=\""
         << W - mr - 100 << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color
         << "\" stroke-width=\"2\"/>\n";
      os << "<text x=\"" << W - mr - 94 << "\" y=\"" << legend_y + 4
         << "\" font-size=\"11\" font-family=\"sans-serif\">" << s.label << "</text>\n";
      legend_y += 16;
    }
  }
  os << "</svg>\n";
}

// Top-down view of the merge network with the ego path and the final poses
// of surrounding vehicles.
inline void write_trajectory_plot(const std::string& path, const RoadGeometry& road,
                                  const std::vector<double>& ego_x,
                                  const std::vector<double>& ego_y,
                                  const std::vector<VehiclePose>& final_vehicles) {
  using svgdetail::num;
  const double x0 = -5.0, x1 = road.mainline_length() + 5.0;
  double ry0 = -road.merge_station() * std::tan(road.ramp_angle()) - 6.0;
  double ry1 = road.mainline_left_edge_y() + 4.0;
  const double W = 980, H = 320;
  const double sx = W / (x1 - x0);
  const double sy = H / (ry1 - ry0);
  const double s = std::min(sx, sy);
  auto px = [&](double x) { return (x - x0) * s; };
  auto py = [&](double y) { return H - (y - ry0) * s; };

  std::ofstream os(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#f8f8f8\"/>\n";

  auto line = [&](double ax, double ay, double bx, double by, const std::string& style) {
    os << "<line x1=\"" << num(px(ax)) << "\" y1=\"" << num(py(ay)) << "\" x2=\""
       << num(px(bx)) << "\" y2=\"" << num(py(by)) << "\" " << style << "/>\n";
  };
  const std::string edge = "stroke=\"#333\" stroke-width=\"1.6\"";
  const std::string lane = "stroke=\"#aaa\" stroke-width=\"0.8\" stroke-dasharray=\"6,6\"";

  const double top = road.mainline_left_edge_y();
  const double bot = road.mainline_right_edge_y();
  const double accel_bot = road.accel_right_edge_y();
  // Mainline edges and lane dividers.
  line(0, top, road.mainline_length(), top, edge);
  line(0, bot, road.merge_station(), bot, edge);
  line(road.accel_lane_end(), bot, road.mainline_length(), bot, edge);
  line(road.merge_station(), bot, road.accel_lane_end(), bot, lane);
  for (int l = 1; l < road.lane_count(); ++l) {
    const double y = road.lane_center_y(l) - 0.5 * road.lane_width();
    line(0, y, road.mainline_length(), y, lane);
  }
  // Acceleration lane.
  line(road.merge_station(), accel_bot, road.accel_lane_end(), accel_bot, edge);
  line(road.accel_lane_end(), accel_bot, road.accel_lane_end(), bot, edge);
  // Ramp edges.
  {
    const double c = std::cos(road.ramp_angle()), si = std::sin(road.ramp_angle());
    const double hw = 0.5 * road.lane_width();
    double sxp, syp;
    road.ramp_point(0.0, &sxp, &syp);
    for (double off : {hw, -hw}) {
      const double ox = -off * si, oy = off * c;
      line(sxp + ox, syp + oy, sxp + ox + road.ramp_length() * c,
           syp + oy + road.ramp_length() * si, edge);
    }
  }
  // Surrounding vehicles at the end of the episode.
  for (const auto& v : final_vehicles) {
    os << "<rect x=\"" << num(px(v.x) - 0.5 * v.length * s) << "\" y=\""
       << num(py(v.y) - 0.5 * v.width * s) << "\" width=\"" << num(v.length * s)
       << "\" height=\"" << num(v.width * s)
       << "\" fill=\"#7f8c8d\" transform=\"rotate(" << num(-v.phi * 180.0 / kPi) << " "
       << num(px(v.x)) << " " << num(py(v.y)) << ")\"/>\n";
  }
  // Ego path.
  os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < ego_x.size(); ++i) {
    os << num(px(ego_x[i])) << "," << num(py(ego_y[i])) << " ";
  }
  os << "\"/>\n";
  if (!ego_x.empty()) {
    os << "<circle cx=\"" << num(px(ego_x.front())) << "\" cy=\"" << num(py(ego_y.front()))
       << "\" r=\"4\" fill=\"#27ae60\"/>\n";
    os << "<circle cx=\"" << num(px(ego_x.back())) << "\" cy=\"" << num(py(ego_y.back()))
       << "\" r=\"4\" fill=\"#c0392b\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace mshield
