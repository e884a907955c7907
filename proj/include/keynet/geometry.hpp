#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace keynet {

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
  bool operator<(const Pixel& o) const {
    return y != o.y ? y < o.y : x < o.x;
  }
};

struct PointF {
  double x = 0.0;
  double y = 0.0;
};

// Row-major boolean grid; anything outside the image counts as background.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(size_t(w) * h, 0) {
    if (w <= 0 || h <= 0) {
      throw std::invalid_argument("BinaryMask: non-positive extent " +
                                  std::to_string(w) + "x" + std::to_string(h));
    }
  }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  bool at(int x, int y) const {
    return in_bounds(x, y) && bits[size_t(y) * width + x] != 0;
  }
  void set(int x, int y, bool v = true) {
    bits[size_t(y) * width + x] = v ? 1 : 0;
  }
};

// Closed 8-connected pixel cycle around one component's outer boundary.
using Contour = std::vector<Pixel>;

// All foreground pixels with a 4-connected background neighbour or on the
// image border. Independent reference for what a traced contour may visit.
inline std::set<Pixel> boundary_oracle(const BinaryMask& mask) {
  std::set<Pixel> out;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      if (x == 0 || y == 0 || x == mask.width - 1 || y == mask.height - 1 ||
          !mask.at(x - 1, y) || !mask.at(x + 1, y) || !mask.at(x, y - 1) ||
          !mask.at(x, y + 1)) {
        out.insert({x, y});
      }
    }
  }
  return out;
}

namespace detail {

// 8-connected flood fill of the seed's component into a fresh mask, so a
// trace never wanders onto a neighbouring component.
inline BinaryMask isolate_component(const BinaryMask& mask, Pixel seed) {
  BinaryMask comp(mask.width, mask.height);
  std::vector<Pixel> stack = {seed};
  comp.set(seed.x, seed.y);
  while (!stack.empty()) {
    const Pixel p = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int nx = p.x + dx, ny = p.y + dy;
        if (mask.at(nx, ny) && !comp.at(nx, ny)) {
          comp.set(nx, ny);
          stack.push_back({nx, ny});
        }
      }
    }
  }
  return comp;
}

}  // namespace detail

// Boundary following with the Pavlidis rule. From the current pixel and
// heading, the three pixels ahead are P1 (front-left), P2 (front) and P3
// (front-right); the walk moves to the first foreground one, turning left
// after a P1 move, and rotates clockwise in place when all three are
// background. The start is normalized to the uppermost-leftmost pixel of the
// seed's component, which guarantees background above, and the initial
// heading points along the top row. Termination: back at the start with the
// starting heading, or three in-place rotations (isolated pixel).
inline Contour trace_contour(const BinaryMask& mask, Pixel seed) {
  if (mask.width <= 0 || mask.height <= 0) {
    throw std::invalid_argument("trace_contour: empty mask");
  }
  if (!mask.at(seed.x, seed.y)) {
    throw std::invalid_argument("trace_contour: seed (" +
                                std::to_string(seed.x) + "," +
                                std::to_string(seed.y) +
                                ") is not a foreground pixel");
  }
  const BinaryMask comp = detail::isolate_component(mask, seed);

  Pixel start{-1, -1};
  for (int y = 0; y < comp.height && start.x < 0; ++y)
    for (int x = 0; x < comp.width; ++x)
      if (comp.at(x, y)) {
        start = {x, y};
        break;
      }

  // Headings in image coordinates (y grows downward): E, S, W, N.
  static constexpr int fx[4] = {1, 0, -1, 0};
  static constexpr int fy[4] = {0, 1, 0, -1};
  // Left of travel: E->N, S->E, W->S, N->W.
  static constexpr int lx[4] = {0, 1, 0, -1};
  static constexpr int ly[4] = {-1, 0, 1, 0};

  const int start_heading = 0;  // east; the row above the start is background
  Contour contour = {start};
  Pixel pos = start;
  int heading = start_heading;
  int rotations = 0;
  const std::size_t step_cap = 16 * comp.bits.size() + 64;
  for (std::size_t steps = 0; steps < step_cap; ++steps) {
    if (steps > 0 && pos == start && heading == start_heading) break;
    if (rotations == 3) break;  // isolated start pixel

    const Pixel p1{pos.x + fx[heading] + lx[heading],
                   pos.y + fy[heading] + ly[heading]};
    const Pixel p2{pos.x + fx[heading], pos.y + fy[heading]};
    const Pixel p3{pos.x + fx[heading] - lx[heading],
                   pos.y + fy[heading] - ly[heading]};
    if (comp.at(p1.x, p1.y)) {
      pos = p1;
      heading = (heading + 3) % 4;  // turn left
      rotations = 0;
      contour.push_back(pos);
    } else if (comp.at(p2.x, p2.y)) {
      pos = p2;
      rotations = 0;
      contour.push_back(pos);
    } else if (comp.at(p3.x, p3.y)) {
      pos = p3;
      rotations = 0;
      contour.push_back(pos);
    } else {
      heading = (heading + 1) % 4;  // rotate clockwise in place
      ++rotations;
    }
  }
  if (contour.size() > 1 && contour.back() == contour.front()) {
    contour.pop_back();
  }
  return contour;
}

// k points at equal arc-length intervals along the closed contour polyline,
// anchored at the trace start. A zero-length contour collapses to k copies
// of its single point.
inline std::vector<PointF> sample_equidistant(const Contour& contour, int k) {
  if (contour.empty()) {
    throw std::invalid_argument("sample_equidistant: empty contour");
  }
  if (k < 1) {
    throw std::invalid_argument("sample_equidistant: k must be >= 1, got " +
                                std::to_string(k));
  }
  const std::size_t m = contour.size();
  std::vector<double> seg_len(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const Pixel& a = contour[i];
    const Pixel& b = contour[(i + 1) % m];
    seg_len[i] = std::hypot(double(b.x - a.x), double(b.y - a.y));
    total += seg_len[i];
  }
  std::vector<PointF> out;
  out.reserve(k);
  if (total <= 0.0) {
    for (int i = 0; i < k; ++i)
      out.push_back({double(contour[0].x), double(contour[0].y)});
    return out;
  }
  std::size_t seg = 0;
  double seg_start = 0.0;
  for (int i = 0; i < k; ++i) {
    const double target = total * double(i) / double(k);
    while (seg + 1 < m && seg_start + seg_len[seg] <= target) {
      seg_start += seg_len[seg];
      ++seg;
    }
    const Pixel& a = contour[seg];
    const Pixel& b = contour[(seg + 1) % m];
    const double t = seg_len[seg] > 0.0 ? (target - seg_start) / seg_len[seg] : 0.0;
    out.push_back({a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM I/O. P5 (binary) and P2 (ASCII) are accepted; values >= 128 read as
// foreground. Writing always emits P5 with 0/255.

inline BinaryMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);

  auto next_token = [&in, &path]() -> std::string {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
      if (c == '#') {  // comment to end of line
        while (c != EOF && c != '\n') c = in.get();
      } else if (std::isspace(c)) {
        c = in.get();
      } else {
        break;
      }
    }
    while (c != EOF && !std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      c = in.get();
    }
    if (tok.empty()) throw std::runtime_error("read_pgm: truncated " + path);
    return tok;
  };

  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2") {
    throw std::runtime_error("read_pgm: " + path + " is not P2/P5 (got '" +
                             magic + "')");
  }
  const int width = std::stoi(next_token());
  const int height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (width <= 0 || height <= 0) {
    throw std::runtime_error("read_pgm: bad dimensions in " + path);
  }
  BinaryMask mask(width, height);
  if (magic == "P5") {
    if (maxval <= 0 || maxval > 255) {
      throw std::runtime_error("read_pgm: unsupported maxval " +
                               std::to_string(maxval) + " in " + path);
    }
    std::vector<std::uint8_t> raw(size_t(width) * height);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
      throw std::runtime_error("read_pgm: truncated pixel data in " + path);
    }
    for (std::size_t i = 0; i < raw.size(); ++i) mask.bits[i] = raw[i] >= 128;
  } else {
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
      mask.bits[i] = std::stoi(next_token()) >= 128;
    }
  }
  return mask;
}

inline void write_pgm(const BinaryMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> raw(mask.bits.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = mask.bits[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

}  // namespace keynet
