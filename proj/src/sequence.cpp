#include "siamlite/sequence.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace siamlite {

namespace fs = std::filesystem;

void Sequence::validate() const {
  if (frames.size() != gt.size()) {
    throw ValueError("sequence '" + name + "': " + std::to_string(frames.size()) +
                     " frames but " + std::to_string(gt.size()) + " boxes");
  }
  for (const auto& b : gt) require_valid(b, "sequence");
}

std::string to_string(Motion motion) {
  switch (motion) {
    case Motion::kStatic: return "static";
    case Motion::kLinear: return "linear";
    case Motion::kRandomWalk: return "random-walk";
  }
  return "?";
}

Motion motion_from_string(const std::string& name) {
  if (name == "static") return Motion::kStatic;
  if (name == "linear") return Motion::kLinear;
  if (name == "random-walk") return Motion::kRandomWalk;
  throw ValueError("unknown motion model '" + name + "'");
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

constexpr std::size_t kTextureCells = 4;

struct Background {
  std::array<double, 3> base;
  std::array<double, 3> amp;
  double fx, fy, phase;
};

// Keeps a coordinate and its velocity inside [lo, hi] by mirroring at the walls.
void reflect(double& p, double& v, double lo, double hi) {
  if (hi <= lo) {
    p = lo;
    v = 0;
    return;
  }
  for (int k = 0; k < 8 && (p < lo || p > hi); ++k) {
    if (p < lo) {
      p = 2 * lo - p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
  }
  p = std::clamp(p, lo, hi);
}

}  // namespace

Sequence synth_sequence(const SynthParams& params, std::size_t length, Rng& rng) {
  if (length < 2) throw ValueError("synth_sequence: length must be at least 2");
  if (params.width < 8 || params.height < 8) throw ValueError("synth_sequence: frame too small");
  if (!(params.min_target > 0) || params.max_target < params.min_target) {
    throw ValueError("synth_sequence: bad target size range");
  }
  const double W = static_cast<double>(params.width);
  const double H = static_cast<double>(params.height);
  if (params.max_target > std::min(W, H)) {
    throw ValueError("synth_sequence: target larger than frame");
  }
  if (params.speed < 0 || params.noise < 0) throw ValueError("synth_sequence: negative parameter");

  Rng texture_rng(params.texture_seed);
  std::array<std::array<double, 3>, kTextureCells * kTextureCells> texture{};
  for (auto& cell : texture) {
    for (auto& ch : cell) ch = texture_rng.uniform(0, 255);
  }

  Background bg{};
  for (std::size_t c = 0; c < 3; ++c) {
    bg.base[c] = rng.uniform(70, 180);
    bg.amp[c] = rng.uniform(10, 40);
  }
  bg.fx = rng.uniform(0.5, 2.0) * 2 * std::numbers::pi / W;
  bg.fy = rng.uniform(0.5, 2.0) * 2 * std::numbers::pi / H;
  bg.phase = rng.uniform(0, 2 * std::numbers::pi);

  const double tw = rng.uniform(params.min_target, params.max_target);
  const double th = rng.uniform(params.min_target, params.max_target);
  double cx, cy;
  if (params.start) {
    cx = (*params.start)[0];
    cy = (*params.start)[1];
  } else {
    cx = rng.uniform(tw / 2, W - tw / 2);
    cy = rng.uniform(th / 2, H - th / 2);
  }
  const double theta = params.direction ? *params.direction : rng.uniform(0, 2 * std::numbers::pi);
  double vx = params.speed * std::cos(theta);
  double vy = params.speed * std::sin(theta);
  double heading = theta;

  Sequence seq;
  seq.name = "synth";
  seq.frames.reserve(length);
  seq.gt.reserve(length);

  const std::size_t occ_begin = length / 3;
  const std::size_t occ_end = std::max(occ_begin + 1, 2 * length / 3);
  const double bar_w = std::max(4.0, tw / 3);

  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      if (params.motion == Motion::kRandomWalk) {
        heading += 0.5 * rng.normal();
        vx = params.speed * std::cos(heading);
        vy = params.speed * std::sin(heading);
      }
      if (params.motion != Motion::kStatic) {
        cx += vx;
        cy += vy;
        reflect(cx, vx, tw / 2, W - tw / 2);
        reflect(cy, vy, th / 2, H - th / 2);
        if (params.motion == Motion::kRandomWalk) heading = std::atan2(vy, vx);
      }
    }
    const BBox box{cx, cy, tw, th};
    const double left = box.left();
    const double top = box.top();

    bool occluded = params.occluder && t >= occ_begin && t < occ_end;
    double bar_left = 0;
    if (occluded) {
      const double frac = static_cast<double>(t - occ_begin) / static_cast<double>(occ_end - occ_begin);
      bar_left = left - bar_w + frac * (tw + 2 * bar_w);
    }

    Image frame(params.width, params.height);
    for (std::size_t y = 0; y < params.height; ++y) {
      const double py = static_cast<double>(y) + 0.5;
      for (std::size_t x = 0; x < params.width; ++x) {
        const double px = static_cast<double>(x) + 0.5;
        std::array<double, 3> color;
        if (occluded && px >= bar_left && px < bar_left + bar_w) {
          color = {90, 90, 90};
        } else if (px >= left && px < left + tw && py >= top && py < top + th) {
          const auto u = std::min(kTextureCells - 1,
                                  static_cast<std::size_t>((px - left) / tw * kTextureCells));
          const auto v = std::min(kTextureCells - 1,
                                  static_cast<std::size_t>((py - top) / th * kTextureCells));
          color = texture[v * kTextureCells + u];
        } else {
          const double wave = std::sin(bg.fx * px + bg.phase) * std::cos(bg.fy * py);
          for (std::size_t c = 0; c < 3; ++c) color[c] = bg.base[c] + bg.amp[c] * wave;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double n = params.noise > 0 ? rng.uniform(-params.noise, params.noise) : 0.0;
          frame.at(x, y, c) = to_byte(color[c] + n);
        }
      }
    }
    seq.frames.push_back(std::move(frame));
    seq.gt.push_back(box);
  }
  return seq;
}

// PPM.

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

class PpmHeader {
 public:
  explicit PpmHeader(const std::string& data) : data_(data) {}

  std::size_t pos() const { return pos_; }

  void expect_magic() {
    if (data_.size() < 2 || data_[0] != 'P' || data_[1] != '6') {
      throw FormatError("ppm: expected magic P6", 0);
    }
    pos_ = 2;
  }

  std::size_t number() {
    skip_space();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(data_[pos_] - '0');
      if (value > (1u << 24)) throw FormatError("ppm: header value too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError("ppm: expected a number", start);
    return value;
  }

  void single_space() {
    if (pos_ >= data_.size() || !std::isspace(static_cast<unsigned char>(data_[pos_]))) {
      throw FormatError("ppm: expected whitespace after header", pos_);
    }
    ++pos_;
  }

 private:
  void skip_space() {
    while (pos_ < data_.size()) {
      const char c = data_[pos_];
      if (c == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

Image read_ppm(const fs::path& path) {
  const std::string data = read_file(path);
  PpmHeader header(data);
  header.expect_magic();
  const std::size_t w = header.number();
  const std::size_t h = header.number();
  const std::size_t maxval = header.number();
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported", header.pos());
  if (w == 0 || h == 0) throw FormatError("ppm: zero image extent", header.pos());
  header.single_space();
  const std::size_t need = w * h * 3;
  if (data.size() - header.pos() < need) {
    throw FormatError("ppm: truncated pixel data in '" + path.string() + "'", data.size());
  }
  Image image(w, h);
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(header.pos()), need, image.rgb.begin());
  return image;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::string bytes = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                      "\n255\n";
  bytes.append(image.rgb.begin(), image.rgb.end());
  write_file(path, bytes);
}

// Ground truth.

std::vector<BBox> parse_boxes(const std::string& text) {
  std::vector<BBox> boxes;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t blank_run = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      ++blank_run;
      continue;
    }
    if (blank_run > 0) throw FormatError("boxes: blank line inside box list", line_no - 1);
    std::array<double, 4> v{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < 4; ++k) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, v[k]);
      if (ec != std::errc() || !std::isfinite(v[k])) {
        throw FormatError("boxes: line " + std::to_string(line_no) + ": expected 4 numbers x,y,w,h",
                          line_no);
      }
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (k < 3) {
        if (p >= end || *p != ',') {
          throw FormatError("boxes: line " + std::to_string(line_no) + ": expected ','", line_no);
        }
        ++p;
      }
    }
    if (p != end) {
      throw FormatError("boxes: line " + std::to_string(line_no) + ": trailing characters",
                        line_no);
    }
    if (!(v[2] > 0) || !(v[3] > 0)) {
      throw FormatError("boxes: line " + std::to_string(line_no) + ": non-positive extent",
                        line_no);
    }
    boxes.push_back(BBox::from_top_left(v[0], v[1], v[2], v[3]));
  }
  return boxes;
}

std::vector<BBox> load_boxes(const fs::path& path) {
  try {
    return parse_boxes(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.position());
  }
}

void save_boxes(const std::vector<BBox>& boxes, const fs::path& path) {
  std::string text;
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", b.left(), b.top(), b.w, b.h);
    text += buf;
  }
  write_file(path, text);
}

// Sequence directories.

namespace {

constexpr const char* kGroundTruth = "groundtruth.txt";

std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.ppm", index);
  return buf;
}

}  // namespace

Sequence load_sequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a sequence directory: '" + dir.string() + "'");
  std::vector<fs::path> frame_paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      frame_paths.push_back(entry.path());
    }
  }
  std::sort(frame_paths.begin(), frame_paths.end());
  Sequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  seq.gt = load_boxes(dir / kGroundTruth);
  if (seq.gt.size() != frame_paths.size()) {
    throw FormatError(dir.string() + ": " + std::to_string(frame_paths.size()) + " frames but " +
                          std::to_string(seq.gt.size()) + " ground-truth lines",
                      seq.gt.size());
  }
  seq.frames.reserve(frame_paths.size());
  for (const auto& p : frame_paths) seq.frames.push_back(read_ppm(p));
  seq.validate();
  return seq;
}

void save_sequence(const Sequence& sequence, const fs::path& dir) {
  sequence.validate();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
    write_ppm(sequence.frames[i], dir / frame_name(i));
  }
  save_boxes(sequence.gt, dir / kGroundTruth);
}

std::vector<Sequence> load_sequences(const fs::path& dir) {
  if (fs::exists(dir / kGroundTruth)) return {load_sequence(dir)};
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / kGroundTruth)) {
      subdirs.push_back(entry.path());
    }
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw Error("no sequences found under '" + dir.string() + "'");
  std::vector<Sequence> out;
  out.reserve(subdirs.size());
  for (const auto& d : subdirs) out.push_back(load_sequence(d));
  return out;
}

}  // namespace siamlite
