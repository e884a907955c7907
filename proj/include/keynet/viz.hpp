#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "keynet/scene.hpp"

namespace keynet {

// Static SVG scatter of the four token streams: position on the horizontal
// axis, segment on the vertical axis, type as an oblique depth offset and
// instance as the colour. Output is plain text, deterministic and diffable.
inline std::string render_tokens_svg(const TokenizedScene& tokens,
                                     const std::string& title = "") {
  static const char* kPalette[10] = {
      "#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4",
      "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080"};

  int max_pos = 1, max_seg = 1, max_type = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens.mask[i]) continue;
    max_pos = std::max(max_pos, tokens.position[i]);
    max_seg = std::max(max_seg, tokens.segment[i]);
    max_type = std::max(max_type, tokens.type[i]);
  }

  const double left = 90, bottom = 560, plot_w = 720, plot_h = 420;
  const double depth_x = 0.9, depth_y = 2.4;  // per type level

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" "
         "height=\"640\" viewBox=\"0 0 960 640\">\n";
  svg += "<rect width=\"960\" height=\"640\" fill=\"white\"/>\n";
  if (!title.empty()) {
    svg += "<text x=\"480\" y=\"28\" text-anchor=\"middle\" "
           "font-family=\"monospace\" font-size=\"16\">" +
           title + "</text>\n";
  }
  // Axes: position (x), segment (y), type (oblique).
  svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" +
         fmt(left + plot_w) + "\" y2=\"" + fmt(bottom) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" +
         fmt(left) + "\" y2=\"" + fmt(bottom - plot_h) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" +
         fmt(left + depth_x * max_type * 8) + "\" y2=\"" +
         fmt(bottom + depth_y * max_type * 8) +
         "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  svg += "<text x=\"" + fmt(left + plot_w / 2) + "\" y=\"" + fmt(bottom + 60) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" "
         "font-size=\"13\">position token</text>\n";
  svg += "<text x=\"30\" y=\"" + fmt(bottom - plot_h / 2) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" "
         "font-size=\"13\" transform=\"rotate(-90 30 " +
         fmt(bottom - plot_h / 2) + ")\">segment token</text>\n";
  svg += "<text x=\"" + fmt(left + depth_x * max_type * 8 + 12) + "\" y=\"" +
         fmt(bottom + depth_y * max_type * 8 + 12) +
         "\" font-family=\"monospace\" font-size=\"13\">type token</text>\n";

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens.mask[i]) continue;
    const double fx = static_cast<double>(tokens.position[i]) / max_pos;
    const double fy = static_cast<double>(tokens.segment[i]) / max_seg;
    const double depth = static_cast<double>(tokens.type[i]);
    const double x = left + fx * plot_w + depth_x * depth * 8;
    const double y = bottom - fy * plot_h + depth_y * depth * 8 - 48;
    const char* color = kPalette[(tokens.instance[i] - 1) % 10];
    svg += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) +
           "\" r=\"3\" fill=\"" + color + "\" fill-opacity=\"0.85\"/>\n";
  }

  // Instance legend.
  std::vector<int> instances;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens.mask[i] &&
        std::find(instances.begin(), instances.end(), tokens.instance[i]) ==
            instances.end()) {
      instances.push_back(tokens.instance[i]);
    }
  }
  std::sort(instances.begin(), instances.end());
  double ly = 70;
  for (int inst : instances) {
    svg += "<circle cx=\"870\" cy=\"" + fmt(ly) + "\" r=\"5\" fill=\"" +
           std::string(kPalette[(inst - 1) % 10]) + "\"/>\n";
    svg += "<text x=\"882\" y=\"" + fmt(ly + 4) +
           "\" font-family=\"monospace\" font-size=\"12\">instance " +
           std::to_string(inst) + "</text>\n";
    ly += 20;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace keynet
