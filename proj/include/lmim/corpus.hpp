#pragma once
// Procedural text-image corpus: a deterministic renderer for short words,
// image-level augmentation at three pinned strength levels, guidance view
// pairs, and the on-disk corpus format (images/%06d.png + labels.tsv).

#include "lmim/common.hpp"
#include "lmim/image.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace lmim {

inline constexpr int kMaxTranscriptLength = 25;

// ---------------------------------------------------------------------------
// Charset

class Charset {
public:
  Charset() : Charset(std::u32string(U"abcdefghijklmnopqrstuvwxyz0123456789")) {}
  explicit Charset(std::u32string symbols) : symbols_(std::move(symbols)) {
    require(!symbols_.empty(), "charset must not be empty");
  }

  static Charset from_utf8(std::string_view s) {
    const auto cps = utf8_decode(s);
    return Charset(std::u32string(cps.begin(), cps.end()));
  }

  std::size_t size() const { return symbols_.size(); }
  const std::u32string& symbols() const { return symbols_; }

  /// Index of `cp`, or -1 when absent.
  int index_of(char32_t cp) const {
    const auto pos = symbols_.find(cp);
    return pos == std::u32string::npos ? -1 : static_cast<int>(pos);
  }

  char32_t at(std::size_t i) const { return symbols_.at(i); }

  std::string to_utf8() const {
    std::string out;
    for (char32_t cp : symbols_) append_utf8(out, cp);
    return out;
  }

  /// Throws CharsetError for an empty transcript or any code point outside the set.
  void validate(std::string_view transcript) const {
    if (transcript.empty()) throw CharsetError("empty transcript");
    for (char32_t cp : utf8_decode(transcript)) {
      if (index_of(cp) < 0) {
        throw CharsetError("unsupported character " + format_codepoint(cp) + " in transcript '" +
                           std::string(transcript) + "'");
      }
    }
  }

  static void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }

private:
  std::u32string symbols_;
};

// ---------------------------------------------------------------------------
// Bitmap font: 5x7 cells for a-z and 0-9.

namespace detail {

struct Glyph {
  char ch;
  std::array<const char*, 7> rows;
};

// clang-format off
inline constexpr std::array<Glyph, 36> kGlyphs{{
  {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
  {'b', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."}},
  {'c', {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."}},
  {'d', {"....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"}},
  {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."}},
  {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
  {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
  {'h', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
  {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
  {'j', {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."}},
  {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
  {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"}},
  {'n', {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
  {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
  {'p', {".....", ".....", "####.", "#...#", "####.", "#....", "#...."}},
  {'q', {".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"}},
  {'r', {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."}},
  {'s', {".....", ".....", ".###.", "#....", ".###.", "....#", "####."}},
  {'t', {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."}},
  {'u', {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"}},
  {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
  {'w', {".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."}},
  {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
  {'y', {".....", ".....", "#...#", "#...#", ".####", "....#", ".###."}},
  {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
  {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
  {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
  {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
  {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
  {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
  {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
  {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
  {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
  {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
  {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
}};
// clang-format on

inline const Glyph* find_glyph(char32_t cp) {
  for (const auto& g : kGlyphs) {
    if (static_cast<char32_t>(g.ch) == cp) return &g;
  }
  return nullptr;
}

/// Bitmap rows for a glyph in a given font style. Bold dilates horizontally.
inline std::array<std::uint8_t, 7> glyph_bits(const Glyph& g, int font_id) {
  std::array<std::uint8_t, 7> bits{};
  for (int r = 0; r < 7; ++r) {
    std::uint8_t row = 0;
    for (int c = 0; c < 5; ++c) {
      if (g.rows[r][c] == '#') row |= static_cast<std::uint8_t>(1u << (5 - c));
    }
    if (font_id == 1) row |= static_cast<std::uint8_t>(row >> 1);
    bits[r] = row;  // bit 5 is the leftmost cell; 6 cells wide
  }
  return bits;
}

inline double luminance(const std::array<double, 3>& c) {
  return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
}

/// Adds the area of [x0,x1]x[y0,y1] overlapping each pixel to `cov`.
inline void splat_rect(std::vector<double>& cov, int h, int w, double x0, double x1, double y0,
                       double y1) {
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int px1 = std::min(w - 1, static_cast<int>(std::ceil(x1)) - 1);
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int py1 = std::min(h - 1, static_cast<int>(std::ceil(y1)) - 1);
  for (int py = py0; py <= py1; ++py) {
    const double oy = std::min<double>(py + 1, y1) - std::max<double>(py, y0);
    if (oy <= 0) continue;
    for (int px = px0; px <= px1; ++px) {
      const double ox = std::min<double>(px + 1, x1) - std::max<double>(px, x0);
      if (ox <= 0) continue;
      cov[static_cast<std::size_t>(py) * w + px] += ox * oy;
    }
  }
}

}  // namespace detail

inline constexpr int kNumFonts = 4;        // regular, bold, italic, condensed
inline constexpr int kNumBackgrounds = 3;  // solid, horizontal gradient, vertical gradient

struct RenderStyle {
  std::optional<int> font_id;
  std::optional<int> bg_id;
};

struct TextSample {
  Image image;
  std::string transcript;
  std::uint64_t seed = 0;
  int font_id = 0;
  int bg_id = 0;
};

/// Draws `transcript` onto a fresh 32x128 canvas. Pure function of its inputs.
inline TextSample render_sample(const std::string& transcript, std::uint64_t seed,
                                const RenderStyle& style = {}, const Charset& charset = Charset()) {
  charset.validate(transcript);
  const auto cps = utf8_decode(transcript);
  if (static_cast<int>(cps.size()) > kMaxTranscriptLength) {
    throw ValidationError("transcript longer than " + std::to_string(kMaxTranscriptLength) +
                          " characters: '" + transcript + "'");
  }
  std::vector<const detail::Glyph*> glyphs;
  for (char32_t cp : cps) {
    const auto* g = detail::find_glyph(cp);
    if (!g) throw CharsetError("no glyph for character " + format_codepoint(cp));
    glyphs.push_back(g);
  }

  Rng rng(derive_seed(seed, 0x72656e64));  // "rend"
  TextSample out;
  out.transcript = transcript;
  out.seed = seed;
  out.font_id = style.font_id.value_or(static_cast<int>(rng.below(kNumFonts)));
  out.bg_id = style.bg_id.value_or(static_cast<int>(rng.below(kNumBackgrounds)));
  require(out.font_id >= 0 && out.font_id < kNumFonts, "font_id out of range");
  require(out.bg_id >= 0 && out.bg_id < kNumBackgrounds, "bg_id out of range");

  const int H = kImageHeight, W = kImageWidth;
  const double margin = 3.0;

  // Geometry: cell height from text height, cell width from the font aspect.
  double text_h = rng.uniform(14.0, 24.0);
  const double aspect = (out.font_id == 3 ? 0.65 : 0.9) * rng.uniform(0.9, 1.1);
  double cell_h = text_h / 7.0;
  double cell_w = cell_h * aspect;
  const double spacing_cells = rng.uniform(0.5, 1.5);
  const double glyph_cells = out.font_id == 1 ? 6.0 : 5.0;
  const double italic_shear = out.font_id == 2 ? 0.3 : 0.0;  // cells per row
  const auto n = static_cast<double>(glyphs.size());
  auto total_width = [&] {
    return (n * (glyph_cells + spacing_cells) - spacing_cells + 6.0 * italic_shear) * cell_w;
  };
  if (total_width() > W - 2 * margin) {
    const double shrink = (W - 2 * margin) / total_width();
    cell_w *= shrink;
    cell_h = std::min(cell_h, std::max(cell_h * shrink, 8.0 / 7.0));
    text_h = cell_h * 7.0;
  }
  const double x0 = rng.uniform(margin, std::max(margin, W - margin - total_width()));
  const double y0 = rng.uniform(2.0, std::max(2.0, H - 2.0 - text_h));

  // Colours: background luminance decides whether text is dark or light.
  std::array<double, 3> bg{rng.uniform(), rng.uniform(), rng.uniform()};
  std::array<double, 3> bg2 = bg;
  for (auto& c : bg2) c = std::clamp(c + rng.uniform(-0.2, 0.2), 0.0, 1.0);
  const double bg_lum = 0.5 * (detail::luminance(bg) + detail::luminance(bg2));
  const double fg_lum = bg_lum > 0.5 ? rng.uniform(0.0, bg_lum - 0.45) : rng.uniform(bg_lum + 0.45, 1.0);
  std::array<double, 3> tint{rng.uniform(), rng.uniform(), rng.uniform()};
  std::array<double, 3> fg{};
  const double tint_lum = detail::luminance(tint);
  for (int c = 0; c < 3; ++c) fg[c] = std::clamp(fg_lum + 0.3 * (tint[c] - tint_lum), 0.0, 1.0);

  std::vector<double> cov(static_cast<std::size_t>(H) * W, 0.0);
  double pen = x0;
  for (const auto* g : glyphs) {
    const auto bits = detail::glyph_bits(*g, out.font_id);
    for (int r = 0; r < 7; ++r) {
      const double shift = italic_shear * (6 - r) * cell_w;
      for (int c = 0; c < 6; ++c) {
        if (!(bits[r] & (1u << (5 - c)))) continue;
        const double ax = pen + shift + c * cell_w;
        const double ay = y0 + r * cell_h;
        detail::splat_rect(cov, H, W, ax, ax + cell_w, ay, ay + cell_h);
      }
    }
    pen += (glyph_cells + spacing_cells) * cell_w;
  }

  out.image = Image::standard();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double t = 0.0;
      if (out.bg_id == 1) t = x / double(W - 1);
      if (out.bg_id == 2) t = y / double(H - 1);
      const double a = std::min(1.0, cov[static_cast<std::size_t>(y) * W + x]);
      for (int c = 0; c < 3; ++c) {
        const double back = out.bg_id == 0 ? bg[c] : (1 - t) * bg[c] + t * bg2[c];
        const double v = (1 - a) * back + a * fg[c] + rng.normal(0.0, 0.015);
        out.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class AugLevel { none, weak, medium, strong };

inline std::string to_string(AugLevel l) {
  switch (l) {
    case AugLevel::none: return "none";
    case AugLevel::weak: return "weak";
    case AugLevel::medium: return "medium";
    case AugLevel::strong: return "strong";
  }
  return "?";
}

inline AugLevel parse_aug_level(std::string_view s) {
  if (s == "none") return AugLevel::none;
  if (s == "weak") return AugLevel::weak;
  if (s == "medium") return AugLevel::medium;
  if (s == "strong") return AugLevel::strong;
  throw ValidationError("unknown augmentation level '" + std::string(s) + "'");
}

struct AugmentationPolicy {
  AugLevel level = AugLevel::medium;
  // geometric
  double crop_scale_min = 1.0;
  double crop_scale_max = 1.0;
  double rotation_deg = 0.0;
  // colour
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  // warp
  double distortion = 0.0;
  double perspective = 0.0;
  std::uint64_t seed = 0;

  static AugmentationPolicy make(AugLevel level, std::uint64_t seed = 0) {
    AugmentationPolicy p;
    p.level = level;
    p.seed = seed;
    if (level == AugLevel::weak || level == AugLevel::medium) {
      p.crop_scale_min = 0.9;
      p.rotation_deg = 5.0;
    }
    if (level == AugLevel::medium) {
      p.brightness = p.contrast = p.saturation = 0.4;
      p.distortion = 0.3;
      p.perspective = 0.3;
    }
    if (level == AugLevel::strong) {
      p.crop_scale_min = 0.7;
      p.rotation_deg = 15.0;
      p.brightness = p.contrast = p.saturation = 0.7;
      p.distortion = 0.6;
      p.perspective = 0.5;
    }
    return p;
  }

  bool geometric_enabled() const { return crop_scale_min < 1.0 || rotation_deg > 0.0; }
  bool color_enabled() const { return brightness > 0 || contrast > 0 || saturation > 0; }
  bool warp_enabled() const { return distortion > 0 || perspective > 0; }

  void validate() const {
    require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
            "augmentation: crop scale range must satisfy 0 < min <= max <= 1");
    require(rotation_deg >= 0.0 && rotation_deg < 90.0, "augmentation: rotation must be in [0, 90)");
    require(brightness >= 0 && brightness < 1 && contrast >= 0 && contrast < 1 && saturation >= 0 &&
                saturation < 1,
            "augmentation: colour jitter must be in [0, 1)");
    require(distortion >= 0 && distortion <= 1 && perspective >= 0 && perspective <= 1,
            "augmentation: warp strengths must be in [0, 1]");
    if (level == AugLevel::weak) {
      require(!color_enabled() && !warp_enabled(), "augmentation: weak policy is geometric only");
    }
    if (level == AugLevel::none) {
      require(!geometric_enabled() && !color_enabled() && !warp_enabled(),
              "augmentation: 'none' policy must be the identity");
    }
  }

  nlohmann::json to_json() const {
    return {{"level", to_string(level)},
            {"crop_scale", {crop_scale_min, crop_scale_max}},
            {"rotation_deg", rotation_deg},
            {"brightness", brightness},
            {"contrast", contrast},
            {"saturation", saturation},
            {"distortion", distortion},
            {"perspective", perspective},
            {"seed", seed}};
  }
};

namespace detail {

inline float sample_bilinear(const Image& img, double x, double y, int c) {
  // (x, y) in continuous pixel coordinates where pixel centres sit at +0.5.
  x -= 0.5;
  y -= 0.5;
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

/// 3x3 homography taking `src` corners onto `dst` corners.
inline Eigen::Matrix3d homography(const std::array<Eigen::Vector2d, 4>& src,
                                  const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> A;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y(), u = dst[i].x(), v = dst[i].y();
    A.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = A.fullPivLu().solve(b);
  Eigen::Matrix3d H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return H;
}

}  // namespace detail

/// One random draw from `policy`, applied to `img`. Output keeps the input shape.
inline Image augment(const Image& img, const AugmentationPolicy& policy, Rng& rng) {
  const double W = img.width, H = img.height;
  // Every parameter is drawn unconditionally so the stream layout is fixed.
  const double scale = rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
  const double off_x = rng.uniform(-0.5, 0.5) * (1.0 - scale) * W;
  const double off_y = rng.uniform(-0.5, 0.5) * (1.0 - scale) * H;
  const double angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg) * std::numbers::pi / 180.0;
  const double bright = 1.0 + rng.uniform(-policy.brightness, policy.brightness);
  const double contr = 1.0 + rng.uniform(-policy.contrast, policy.contrast);
  const double satur = 1.0 + rng.uniform(-policy.saturation, policy.saturation);
  const double amp = policy.distortion * 0.1 * H;
  const double amp_x = amp * rng.uniform(0.5, 1.0);
  const double amp_y = amp * rng.uniform(0.5, 1.0);
  const double freq_x = rng.uniform(1.0, 3.0);
  const double freq_y = rng.uniform(0.5, 1.5);
  const double phase_x = rng.uniform(0.0, 2 * std::numbers::pi);
  const double phase_y = rng.uniform(0.0, 2 * std::numbers::pi);
  std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(0, 0), Eigen::Vector2d(W, 0),
                                         Eigen::Vector2d(W, H), Eigen::Vector2d(0, H)};
  std::array<Eigen::Vector2d, 4> moved = corners;
  for (auto& c : moved) {
    c.x() += rng.uniform(-policy.perspective, policy.perspective) * 0.1 * W;
    c.y() += rng.uniform(-policy.perspective, policy.perspective) * 0.2 * H;
  }

  const bool has_geometry = scale != 1.0 || angle != 0.0 || amp != 0.0 || policy.perspective != 0.0;
  Image out = img;
  if (has_geometry) {
    const Eigen::Matrix3d Hm = detail::homography(corners, moved);
    const double cx = W / 2, cy = H / 2;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int v = 0; v < img.height; ++v) {
      for (int u = 0; u < img.width; ++u) {
        double x = u + 0.5, y = v + 0.5;
        x += amp_x * std::sin(2 * std::numbers::pi * freq_y * y / H + phase_x);
        y += amp_y * std::sin(2 * std::numbers::pi * freq_x * x / W + phase_y);
        const Eigen::Vector3d p = Hm * Eigen::Vector3d(x, y, 1.0);
        x = p.x() / p.z();
        y = p.y() / p.z();
        const double dx = (x - cx) * scale, dy = (y - cy) * scale;
        const double sx = cx + ca * dx - sa * dy + off_x;
        const double sy = cy + sa * dx + ca * dy + off_y;
        for (int c = 0; c < img.channels; ++c) out.at(v, u, c) = detail::sample_bilinear(img, sx, sy, c);
      }
    }
  }

  if (bright != 1.0 || contr != 1.0 || satur != 1.0) {
    for (auto& p : out.pixels) p = static_cast<float>(std::clamp(p * bright, 0.0, 1.0));
    double mean = 0.0;
    for (float p : out.pixels) mean += p;
    mean /= static_cast<double>(out.pixels.size());
    const int n = out.height * out.width;
    for (int i = 0; i < n; ++i) {
      float* px = &out.pixels[static_cast<std::size_t>(i) * out.channels];
      double gray = 0.0;
      for (int c = 0; c < out.channels; ++c) {
        px[c] = static_cast<float>(std::clamp((px[c] - mean) * contr + mean, 0.0, 1.0));
        gray += px[c];
      }
      gray /= out.channels;
      for (int c = 0; c < out.channels; ++c) {
        px[c] = static_cast<float>(std::clamp(gray + (px[c] - gray) * satur, 0.0, 1.0));
      }
    }
  }
  return out;
}

struct ViewPair {
  Image masked_branch_input;
  Image guidance_input;
  std::string transcript;
};

/// Two independent augmentations of the same sample; deterministic in (sample, policy, seed).
inline ViewPair make_view_pair(const TextSample& sample, const AugmentationPolicy& policy,
                               std::uint64_t seed) {
  policy.validate();
  Rng first(derive_seed(policy.seed, seed, 1));
  Rng second(derive_seed(policy.seed, seed, 2));
  return {augment(sample.image, policy, first), augment(sample.image, policy, second), sample.transcript};
}

// ---------------------------------------------------------------------------
// Corpus generation and loading

struct CorpusEntry {
  std::string file;
  std::string transcript;
};

struct CorpusManifest {
  std::vector<std::string> vocab;
  int count = 0;
  AugmentationPolicy policy;
  std::uint64_t seed = 0;
  std::vector<CorpusEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& e : entries) files.push_back({{"file", e.file}, {"transcript", e.transcript}});
    return {{"format", "lmim-corpus"}, {"version", 1},     {"vocab", vocab}, {"count", count},
            {"policy", policy.to_json()}, {"seed", seed}, {"files", files}};
  }
};

inline std::string corpus_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

/// In-memory corpus: sample i picks a word and render seed from derive_seed(seed, i),
/// so any index range can be produced independently.
inline std::vector<TextSample> synthesize_samples(const std::vector<std::string>& vocab, int count,
                                                  const AugmentationPolicy& policy,
                                                  std::uint64_t seed, int first_index = 0,
                                                  const Charset& charset = Charset()) {
  require(count >= 1, "corpus count must be >= 1");
  require(!vocab.empty(), "corpus vocab must not be empty");
  policy.validate();
  std::vector<TextSample> out;
  out.reserve(count);
  for (int i = first_index; i < first_index + count; ++i) {
    Rng pick(derive_seed(seed, i, 0x776f7264));  // "word"
    const auto& word = vocab[pick.below(vocab.size())];
    TextSample s = render_sample(word, derive_seed(seed, i, 0x72656e64), {}, charset);
    Rng aug(derive_seed(policy.seed, seed, i, 0x61756721));
    s.image = augment(s.image, policy, aug);
    out.push_back(std::move(s));
  }
  return out;
}

inline CorpusManifest generate_corpus(const std::vector<std::string>& vocab, int count,
                                      const AugmentationPolicy& policy, std::uint64_t seed,
                                      const std::filesystem::path& out_dir, const Charset& charset = Charset()) {
  namespace fs = std::filesystem;
  const auto samples = synthesize_samples(vocab, count, policy, seed, 0, charset);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError((out_dir / "images").string() + ": " + ec.message());

  CorpusManifest manifest{vocab, count, policy, seed, {}};
  std::ofstream labels(out_dir / "labels.tsv", std::ios::binary);
  if (!labels) throw IoError((out_dir / "labels.tsv").string() + ": cannot open for writing");
  for (int i = 0; i < count; ++i) {
    const std::string name = corpus_filename(i);
    write_png(samples[i].image, out_dir / "images" / name);
    labels << name << '\t' << samples[i].transcript << '\n';
    manifest.entries.push_back({name, samples[i].transcript});
  }
  if (!labels) throw IoError((out_dir / "labels.tsv").string() + ": write failed");
  std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
  if (!mf) throw IoError((out_dir / "manifest.json").string() + ": cannot open for writing");
  mf << manifest.to_json().dump(2) << '\n';
  return manifest;
}

inline std::vector<CorpusEntry> read_labels(const std::filesystem::path& dir) {
  const auto path = dir / "labels.tsv";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open labels file");
  std::vector<CorpusEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 'filename<TAB>transcript'");
    }
    entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  if (entries.empty()) throw ValidationError(path.string() + ": no labelled images");
  return entries;
}

/// Loads every labelled image of a corpus directory.
inline std::vector<TextSample> load_corpus(const std::filesystem::path& dir) {
  std::vector<TextSample> out;
  for (const auto& e : read_labels(dir)) {
    TextSample s;
    s.image = read_png(dir / "images" / e.file);
    if (s.image.height != kImageHeight || s.image.width != kImageWidth) {
      throw DimensionError((dir / "images" / e.file).string() + ": expected 32x128 image");
    }
    s.transcript = e.transcript;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<std::string> read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open vocabulary file");
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  if (words.empty()) throw ValidationError(path.string() + ": vocabulary is empty");
  return words;
}

}  // namespace lmim
