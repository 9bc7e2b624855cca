#include "duw/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "duw/error.hpp"
#include "duw/rng.hpp"

namespace duw {

ImageSet ImageSet::subset(std::span<const int> rows) const {
  ImageSet out;
  out.shape = shape;
  out.images.resize(static_cast<Index>(rows.size()), images.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    out.images.row(static_cast<Index>(i)) = images.row(r);
    if (labeled()) out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    out.ids.push_back(ids.empty() ? r : ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

ImageSet concat(const ImageSet& a, const ImageSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  require(a.shape == b.shape, "input-shape", "cannot concatenate image sets of different shapes");
  require(a.labeled() == b.labeled(), "input-shape", "cannot concatenate labeled with unlabeled sets");
  ImageSet out;
  out.shape = a.shape;
  out.images.resize(a.images.rows() + b.images.rows(), a.images.cols());
  out.images << a.images, b.images;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  return out;
}

std::vector<int> class_histogram(const ImageSet& set, int num_classes) {
  std::vector<int> h(static_cast<std::size_t>(num_classes), 0);
  for (int y : set.labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

namespace {

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;

// Handwriting-like strokes in a unit box, y pointing down.
const std::array<std::vector<Polyline>, 10>& stroke_glyphs() {
  static const std::array<std::vector<Polyline>, 10> glyphs = [] {
    std::array<std::vector<Polyline>, 10> g;
    Polyline ring;
    for (int i = 0; i <= 16; ++i) {
      const double t = 2 * std::numbers::pi * i / 16;
      ring.push_back({0.5 + 0.26 * std::sin(t), 0.5 - 0.38 * std::cos(t)});
    }
    g[0] = {ring};
    g[1] = {{{0.36, 0.26}, {0.54, 0.1}, {0.54, 0.9}}};
    g[2] = {{{0.24, 0.28}, {0.36, 0.13}, {0.56, 0.1}, {0.74, 0.22}, {0.72, 0.42}, {0.24, 0.88}, {0.8, 0.88}}};
    g[3] = {{{0.24, 0.16}, {0.74, 0.14}, {0.46, 0.45}, {0.7, 0.56}, {0.74, 0.76}, {0.56, 0.9}, {0.22, 0.84}}};
    g[4] = {{{0.64, 0.9}, {0.64, 0.1}, {0.2, 0.64}, {0.82, 0.64}}};
    g[5] = {{{0.76, 0.12}, {0.3, 0.12}, {0.27, 0.46}, {0.58, 0.42}, {0.76, 0.6}, {0.7, 0.84}, {0.46, 0.92}, {0.22, 0.84}}};
    g[6] = {{{0.7, 0.12}, {0.42, 0.28}, {0.26, 0.58}, {0.3, 0.84}, {0.52, 0.92}, {0.72, 0.78}, {0.68, 0.56}, {0.44, 0.5},
             {0.27, 0.62}}};
    g[7] = {{{0.2, 0.12}, {0.8, 0.12}, {0.46, 0.9}}};
    g[8] = {{{0.5, 0.48}, {0.3, 0.3}, {0.5, 0.1}, {0.7, 0.3}, {0.5, 0.48}, {0.26, 0.7}, {0.5, 0.92}, {0.74, 0.7},
             {0.5, 0.48}}};
    g[9] = {{{0.72, 0.36}, {0.52, 0.52}, {0.3, 0.4}, {0.32, 0.16}, {0.54, 0.1}, {0.72, 0.24}, {0.72, 0.36}, {0.64, 0.9}}};
    return g;
  }();
  return glyphs;
}

// Seven-segment layout: a b c d e f g.
const std::array<std::vector<Polyline>, 10>& segment_glyphs() {
  static const std::array<std::vector<Polyline>, 10> glyphs = [] {
    const double l = 0.3, r = 0.7, t = 0.14, m = 0.5, b = 0.86;
    const std::array<Polyline, 7> seg = {
        Polyline{{l, t}, {r, t}}, Polyline{{r, t}, {r, m}}, Polyline{{r, m}, {r, b}}, Polyline{{l, b}, {r, b}},
        Polyline{{l, m}, {l, b}}, Polyline{{l, t}, {l, m}}, Polyline{{l, m}, {r, m}}};
    const std::array<const char*, 10> lit = {"abcdef", "bc", "abged", "abgcd", "fgbc",
                                             "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"};
    std::array<std::vector<Polyline>, 10> g;
    for (int d = 0; d < 10; ++d)
      for (const char* c = lit[static_cast<std::size_t>(d)]; *c; ++c) g[static_cast<std::size_t>(d)].push_back(seg[static_cast<std::size_t>(*c - 'a')]);
    return g;
  }();
  return glyphs;
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Style {
  bool segments = false;
  double thick_lo, thick_hi;
  double jitter;  // scales the random affine
};

Style style_for(const std::string& domain) {
  if (domain == "plain") return {false, 0.09, 0.13, 1.0};
  if (domain == "inverted") return {false, 0.10, 0.14, 1.0};
  if (domain == "cluttered") return {false, 0.11, 0.15, 1.0};
  if (domain == "bold") return {false, 0.17, 0.23, 0.8};
  if (domain == "blocky") return {true, 0.10, 0.14, 0.5};
  fail("unknown-domain", "unknown synthetic digit domain '" + domain + "'");
}

}  // namespace

const std::vector<std::string>& synthetic_domains() {
  static const std::vector<std::string> d = {"plain", "inverted", "cluttered", "bold", "blocky"};
  return d;
}

ImageSet render_digits(const std::string& domain, int count, const ImageShape& shape, std::uint64_t seed) {
  require(count >= 0, "invalid-argument", "negative image count");
  const Style style = style_for(domain);
  const auto& glyphs = style.segments ? segment_glyphs() : stroke_glyphs();
  Rng rng = make_rng(seed, {stream::data, hash_string(domain)});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % 10;
  std::shuffle(labels.begin(), labels.end(), rng);

  ImageSet set;
  set.shape = shape;
  set.images.resize(count, shape.size());
  set.labels = labels;
  set.ids.resize(static_cast<std::size_t>(count));
  const int H = shape.height, W = shape.width, C = shape.channels;
  std::vector<double> ink(static_cast<std::size_t>(H * W));
  std::vector<double> background(static_cast<std::size_t>(H * W));

  for (int n = 0; n < count; ++n) {
    set.ids[static_cast<std::size_t>(n)] = n;
    const auto& strokes = glyphs[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
    const double j = style.jitter;
    const double scale = uni(0.82, 1.0), rot = j * uni(-0.22, 0.22), shear = j * uni(-0.18, 0.18);
    const double tx = j * uni(-0.07, 0.07), ty = j * uni(-0.07, 0.07);
    const double thick = uni(style.thick_lo, style.thick_hi);
    // inverse of (rotation * shear * scale)
    const double c = std::cos(rot), s = std::sin(rot);
    const double a00 = scale * c, a01 = scale * (c * shear - s), a10 = scale * s, a11 = scale * (s * shear + c);
    const double det = a00 * a11 - a01 * a10;
    const double aa = 1.0 / (scale * std::max(H, W));

    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double ux = (x + 0.5) / W - 0.5 - tx, uy = (y + 0.5) / H - 0.5 - ty;
        const Point g{(a11 * ux - a01 * uy) / det + 0.5, (-a10 * ux + a00 * uy) / det + 0.5};
        double d = 1e9;
        for (const auto& line : strokes)
          for (std::size_t k = 0; k + 1 < line.size(); ++k) d = std::min(d, segment_distance(g, line[k], line[k + 1]));
        ink[static_cast<std::size_t>(y * W + x)] = std::clamp((thick / 2 - d) / aa + 0.5, 0.0, 1.0);
      }

    // smooth clutter field for the textured domain
    if (domain == "cluttered") {
      const double f1 = uni(0.5, 2.5), f2 = uni(0.5, 2.5), p1 = uni(0, 6.3), p2 = uni(0, 6.3);
      const double base = uni(0.2, 0.5), amp = uni(0.1, 0.25);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          background[static_cast<std::size_t>(y * W + x)] =
              base + amp * std::sin(f1 * 2 * std::numbers::pi * x / W + p1) * std::cos(f2 * 2 * std::numbers::pi * y / H + p2);
    }

    const double fg = uni(0.75, 1.0);
    const double bg_level = domain == "inverted" ? uni(0.7, 0.95) : domain == "bold" ? uni(0.0, 0.3) : 0.0;
    const double fg_dark = uni(0.05, 0.3);
    std::array<double, 3> tint{1.0, 1.0, 1.0};
    if (C == 3)
      for (auto& t : tint) t = uni(0.6, 1.0);

    for (int ch = 0; ch < C; ++ch) {
      const double tone = tint[static_cast<std::size_t>(std::min(ch, 2))];
      for (int p = 0; p < H * W; ++p) {
        const double k = ink[static_cast<std::size_t>(p)];
        double v;
        if (domain == "inverted")
          v = bg_level * (1 - k) + fg_dark * k;
        else if (domain == "cluttered")
          v = std::abs(background[static_cast<std::size_t>(p)] - k * fg);
        else
          v = bg_level * (1 - k) + fg * k;
        v = std::clamp(v * tone + noise(rng), 0.0, 1.0);
        set.images(n, ch * H * W + p) = static_cast<float>(v);
      }
    }
  }
  return set;
}

LabeledDataset synthetic_digits(const std::string& domain, int train_count, int test_count, const ImageShape& shape,
                                std::uint64_t seed) {
  LabeledDataset ds;
  ds.domain = domain;
  ds.num_classes = 10;
  ds.train = render_digits(domain, train_count, shape, derive_seed(seed, {0}));
  ds.test = render_digits(domain, test_count, shape, derive_seed(seed, {1}));
  return ds;
}

RowMatrix<float> resize_images(const RowMatrix<float>& images, const ImageShape& from, const ImageShape& to) {
  require(from.channels == to.channels || from.channels == 1, "input-shape", "cannot map channels on resize");
  RowMatrix<float> out(images.rows(), to.size());
  const double sy = double(from.height) / to.height, sx = double(from.width) / to.width;
  for (Index n = 0; n < images.rows(); ++n)
    for (int c = 0; c < to.channels; ++c) {
      const int src_c = from.channels == 1 ? 0 : c;
      for (int y = 0; y < to.height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(from.height - 1));
        const int y0 = int(fy), y1 = std::min(y0 + 1, from.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < to.width; ++x) {
          const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(from.width - 1));
          const int x0 = int(fx), x1 = std::min(x0 + 1, from.width - 1);
          const double wx = fx - x0;
          auto at = [&](int yy, int xx) { return double(images(n, src_c * from.plane() + yy * from.width + xx)); };
          const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
          out(n, c * to.plane() + y * to.width + x) = static_cast<float>(v);
        }
      }
    }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

}  // namespace

ImageSet load_idx(const std::string& images_path, const std::string& labels_path, const ImageShape& target, int limit) {
  std::ifstream in(images_path, std::ios::binary);
  require(bool(in), "io-error", "cannot open " + images_path);
  require(read_be32(in) == 0x00000803, "io-error", images_path + " is not an IDX3 ubyte image file");
  int n = static_cast<int>(read_be32(in));
  const int h = static_cast<int>(read_be32(in)), w = static_cast<int>(read_be32(in));
  if (limit >= 0) n = std::min(n, limit);
  RowMatrix<float> raw(n, h * w);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h * w));
  for (int i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(bool(in), "io-error", "truncated IDX image file " + images_path);
    for (int p = 0; p < h * w; ++p) raw(i, p) = buf[static_cast<std::size_t>(p)] / 255.0f;
  }
  ImageSet set;
  set.shape = target;
  set.images = resize_images(raw, {1, h, w}, target);
  set.ids.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) set.ids[static_cast<std::size_t>(i)] = i;
  if (!labels_path.empty()) {
    std::ifstream lin(labels_path, std::ios::binary);
    require(bool(lin), "io-error", "cannot open " + labels_path);
    require(read_be32(lin) == 0x00000801, "io-error", labels_path + " is not an IDX1 label file");
    const int m = static_cast<int>(read_be32(lin));
    require(m >= n, "io-error", "label file shorter than image file");
    set.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) set.labels[static_cast<std::size_t>(i)] = lin.get();
  }
  return set;
}

}  // namespace duw
