#include "siamlite/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>

namespace siamlite {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'L', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>((v >> (8 * k)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void tensor(const Tensor& t) {
    for (float v : t.data()) f32(v);
  }
  std::size_t size() const { return out_.size(); }
  std::string take() { return std::move(out_); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError("model file truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_),
                        pos_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]);
    v = static_cast<std::uint16_t>(v | (static_cast<std::uint8_t>(data_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  Tensor tensor(const Shape& shape, const char* what) {
    need(shape.count() * 4, what);
    Tensor t(shape);
    for (auto& v : t.data()) {
      v = f32(what);
      if (!std::isfinite(v)) throw FormatError("model file: non-finite " + std::string(what), pos_ - 4);
    }
    return t;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string range_text(LayerRange r) {
  return std::to_string(r.begin) + "," + std::to_string(r.end);
}

std::string spec_text(const NetworkSpec& spec, bool quantized, int bits) {
  std::string t = "siamlite-model\n";
  t += "quantized=" + std::to_string(quantized ? 1 : 0) + "\n";
  if (quantized) t += "bits=" + std::to_string(bits) + "\n";
  t += "template_size=" + std::to_string(spec.template_size) + "\n";
  t += "search_size=" + std::to_string(spec.search_size) + "\n";
  t += "backbone=" + range_text(spec.backbone) + "\n";
  t += "cls_head=" + range_text(spec.cls_head) + "\n";
  t += "reg_head=" + range_text(spec.reg_head) + "\n";
  t += "layers=" + std::to_string(spec.layers.size()) + "\n";
  for (const auto& l : spec.layers) {
    t += "layer=" + to_string(l.kind) + "," + std::to_string(l.kernel) + "," +
         std::to_string(l.stride) + "," + std::to_string(l.padding) + "," +
         std::to_string(l.in_channels) + "," + std::to_string(l.out_channels) + "," +
         std::to_string(l.expand_ratio) + "," + std::to_string(l.hidden_channels) + "\n";
  }
  return t;
}

void write_header(Writer& w, const std::string& text) {
  w.bytes(kMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

void write_trailer(Writer& w) { w.u32(crc_of(w.str().data(), w.size())); }

struct ParsedHeader {
  NetworkSpec spec;
  bool quantized = false;
  int bits = 8;
};

// Parses the text block; `base` is its byte offset in the file.
ParsedHeader parse_header(std::string_view text, std::size_t base) {
  ParsedHeader h;
  std::size_t pos = 0;
  std::size_t layer_count = 0;
  bool have_layers = false;
  bool first = true;
  auto fail = [&](const std::string& msg, std::size_t at) -> FormatError {
    return FormatError("model header: " + msg + " at byte " + std::to_string(base + at), base + at);
  };
  auto parse_size = [&](std::string_view v, std::size_t at) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw fail("bad integer", at);
    return out;
  };
  auto parse_list = [&](std::string_view v, std::size_t at, std::size_t count) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
      const auto comma = v.find(',', start);
      parts.push_back(v.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (parts.size() != count) throw fail("expected " + std::to_string(count) + " fields", at);
    return parts;
  };
  auto parse_range = [&](std::string_view v, std::size_t at) {
    const auto parts = parse_list(v, at, 2);
    return LayerRange{parse_size(parts[0], at), parse_size(parts[1], at)};
  };

  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw fail("unterminated line", pos);
    const std::string_view line = text.substr(pos, nl - pos);
    const std::size_t at = pos;
    pos = nl + 1;
    if (first) {
      if (line != "siamlite-model") throw fail("missing format tag", at);
      first = false;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw fail("expected key=value", at);
    const std::string_view key = line.substr(0, eq);
    const std::string_view value = line.substr(eq + 1);
    if (key == "quantized") {
      const auto q = parse_size(value, at);
      if (q > 1) throw fail("quantized must be 0 or 1", at);
      h.quantized = q == 1;
    } else if (key == "bits") {
      h.bits = static_cast<int>(parse_size(value, at));
      if (h.bits != 8 && h.bits != 16) throw fail("bits must be 8 or 16", at);
    } else if (key == "template_size") {
      h.spec.template_size = parse_size(value, at);
    } else if (key == "search_size") {
      h.spec.search_size = parse_size(value, at);
    } else if (key == "backbone") {
      h.spec.backbone = parse_range(value, at);
    } else if (key == "cls_head") {
      h.spec.cls_head = parse_range(value, at);
    } else if (key == "reg_head") {
      h.spec.reg_head = parse_range(value, at);
    } else if (key == "layers") {
      layer_count = parse_size(value, at);
      have_layers = true;
    } else if (key == "layer") {
      const auto f = parse_list(value, at, 8);
      LayerSpec l;
      try {
        l.kind = layer_kind_from_string(std::string(f[0]));
      } catch (const ValueError&) {
        throw fail("unknown layer kind", at);
      }
      l.kernel = parse_size(f[1], at);
      l.stride = parse_size(f[2], at);
      l.padding = parse_size(f[3], at);
      l.in_channels = parse_size(f[4], at);
      l.out_channels = parse_size(f[5], at);
      l.expand_ratio = parse_size(f[6], at);
      l.hidden_channels = parse_size(f[7], at);
      h.spec.layers.push_back(l);
    } else {
      throw fail("unknown key '" + std::string(key) + "'", at);
    }
  }
  if (first) throw fail("empty header", 0);
  if (!have_layers || layer_count != h.spec.layers.size()) {
    throw fail("layer count does not match layer lines", text.size());
  }
  try {
    h.spec.validate();
  } catch (const ShapeError& e) {
    throw fail(std::string("invalid network: ") + e.what(), 0);
  }
  return h;
}

}  // namespace

std::string serialize_model(const Model& model) {
  model.spec.validate();
  validate_weights(model.spec, model.weights);
  Writer w;
  write_header(w, spec_text(model.spec, false, 8));
  for (const auto& layer : model.weights.layers) {
    for (const auto& conv : layer.convs) {
      w.tensor(conv.weight);
      w.tensor(conv.bias);
    }
  }
  write_trailer(w);
  return w.take();
}

std::string serialize_model(const QuantizedNetwork& qnet) {
  qnet.validate();
  Writer w;
  write_header(w, spec_text(qnet.spec, true, qnet.bits));
  for (const auto& layer : qnet.layers) {
    for (const auto& conv : layer) w.tensor(conv.bias);
  }
  for (const auto& layer : qnet.layers) {
    for (const auto& conv : layer) {
      for (auto code : conv.codes) {
        if (qnet.bits == 8) {
          w.u8(static_cast<std::uint8_t>(code));
        } else {
          w.u16(code);
        }
      }
    }
  }
  auto record = [&](const QuantParams& p) {
    w.f32(static_cast<float>(p.scale));
    if (qnet.bits == 8) {
      w.u8(static_cast<std::uint8_t>(p.zero_point));
    } else {
      w.u16(static_cast<std::uint16_t>(p.zero_point));
    }
  };
  for (const auto& layer : qnet.layers) {
    for (const auto& conv : layer) record(conv.params);
  }
  for (const TapId& id : activation_taps(qnet.spec)) record(qnet.activations.at(id));
  write_trailer(w);
  return w.take();
}

LoadedModel deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("model file: bad magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("model file: unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t text_len = r.u32("header length");
  const std::size_t text_at = r.pos();
  const std::string_view text = r.take(text_len, "header text");
  const ParsedHeader h = parse_header(text, text_at);

  LoadedModel out;
  out.quantized = h.quantized;
  out.layout.header_bytes = r.pos();
  std::size_t mark = r.pos();
  if (!h.quantized) {
    out.model.spec = h.spec;
    for (const auto& layer : h.spec.layers) {
      auto& lw = out.model.weights.layers.emplace_back();
      for (const auto& slot : conv_slots(layer)) {
        const Shape ws = slot.weight_shape();
        std::size_t before = r.pos();
        Tensor weight = r.tensor(ws, "weight blob");
        out.layout.weight_bytes += r.pos() - before;
        before = r.pos();
        Tensor bias = r.tensor(Shape{1, ws.n, 1, 1}, "bias blob");
        out.layout.bias_bytes += r.pos() - before;
        lw.convs.push_back({std::move(weight), std::move(bias)});
      }
    }
  } else {
    QuantizedNetwork& q = out.qnet;
    q.spec = h.spec;
    q.bits = h.bits;
    for (const auto& layer : h.spec.layers) {
      auto& convs = q.layers.emplace_back();
      for (const auto& slot : conv_slots(layer)) {
        const Shape ws = slot.weight_shape();
        QuantizedConv c;
        c.shape = ws;
        c.bias = r.tensor(Shape{1, ws.n, 1, 1}, "bias blob");
        convs.push_back(std::move(c));
      }
    }
    out.layout.bias_bytes = r.pos() - mark;
    mark = r.pos();
    const std::size_t code_bytes = h.bits == 8 ? 1 : 2;
    for (auto& layer : q.layers) {
      for (auto& c : layer) {
        r.need(c.shape.count() * code_bytes, "code blob");
        c.codes.resize(c.shape.count());
        for (auto& code : c.codes) code = h.bits == 8 ? r.u8("code blob") : r.u16("code blob");
      }
    }
    out.layout.weight_bytes = r.pos() - mark;
    mark = r.pos();
    auto record = [&](const char* what) {
      QuantParams p;
      p.bits = h.bits;
      const std::size_t at = r.pos();
      p.scale = r.f32(what);
      p.zero_point = h.bits == 8 ? r.u8(what) : r.u16(what);
      if (!(p.scale > 0) || !std::isfinite(p.scale)) {
        throw FormatError("model file: non-positive scale in " + std::string(what), at);
      }
      return p;
    };
    for (auto& layer : q.layers) {
      for (auto& c : layer) c.params = record("weight params");
    }
    for (const TapId& id : activation_taps(q.spec)) q.activations[id] = record("activation params");
    out.layout.qparam_bytes = r.pos() - mark;
  }
  const std::size_t crc_at = r.pos();
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) {
    throw FormatError("model file: " + std::to_string(r.remaining()) + " trailing bytes", r.pos());
  }
  if (stored != crc_of(bytes.data(), crc_at)) {
    throw FormatError("model file: checksum mismatch", crc_at);
  }
  out.layout.trailer_bytes = 4;
  if (out.quantized) {
    try {
      out.qnet.validate();
    } catch (const Error& e) {
      throw FormatError(std::string("model file: ") + e.what(), out.layout.header_bytes);
    }
  }
  return out;
}

namespace {

void write_bytes(const std::string& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  write_bytes(serialize_model(model), path);
}

void save_model(const QuantizedNetwork& qnet, const std::filesystem::path& path) {
  write_bytes(serialize_model(qnet), path);
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  return deserialize_model(bytes);
}

}  // namespace siamlite
