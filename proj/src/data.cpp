#include "flexivit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "flexivit/rng.hpp"

namespace flexivit {

namespace {

enum class Shape { kCircle, kSquare, kTriangle, kCross };

bool inside_shape(Shape shape, double dx, double dy, double size) {
  switch (shape) {
    case Shape::kCircle:
      return dx * dx + dy * dy <= size * size;
    case Shape::kSquare:
      return std::abs(dx) <= size && std::abs(dy) <= size;
    case Shape::kTriangle:
      // Upward isoceles triangle inscribed in the +/- size box.
      return dy >= -size && dy <= size &&
             std::abs(dx) <= (dy + size) / 2.0;
    case Shape::kCross:
      return (std::abs(dx) <= size * 0.35 && std::abs(dy) <= size) ||
             (std::abs(dy) <= size * 0.35 && std::abs(dx) <= size);
  }
  return false;
}

Image render_shape(Rng rng, int side, int channels, int label) {
  Shape shape = static_cast<Shape>(label / 2);
  bool filled = (label % 2) == 0;

  double size = rng.uniform(side * 0.28, side * 0.34);
  double cx = rng.uniform(side * 0.46, side * 0.54);
  double cy = rng.uniform(side * 0.46, side * 0.54);
  double fg = rng.uniform(0.9, 1.0);
  double ring = std::max(3.0, side / 12.0);

  std::vector<double> tint(channels, 1.0);
  if (channels > 1) {
    for (int ch = 0; ch < channels; ++ch) tint[ch] = rng.uniform(0.6, 1.0);
  }

  Image img;
  img.h = side;
  img.w = side;
  img.c = channels;
  img.v.resize(static_cast<std::size_t>(side) * side * channels);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double dx = x + 0.5 - cx;
      double dy = y + 0.5 - cy;
      bool in = inside_shape(shape, dx, dy, size);
      bool on = in;
      if (!filled && in) {
        // Keep only the rim: inside the shape but not inside the shrunken one.
        on = !inside_shape(shape, dx, dy, size - ring);
      }
      double noise = rng.uniform() * 0.05;
      for (int ch = 0; ch < channels; ++ch) {
        img.at(y, x, ch) = on ? fg * tint[ch] : noise;
      }
    }
  }
  return img;
}

}  // namespace

ShapeDataset gen_shapes(std::uint64_t seed, int n, int side, int channels) {
  if (n <= 0) throw std::invalid_argument("gen_shapes: n must be positive");
  if (side < 16) throw std::invalid_argument("gen_shapes: side must be >= 16");
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("gen_shapes: channels must be 1 or 3");

  ShapeDataset ds;
  ds.side = side;
  ds.channels = channels;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  Rng root(seed, /*stream=*/0xDA7A);
  for (int i = 0; i < n; ++i) {
    // Balanced labels by construction: class = index mod 8.
    int label = i % ShapeDataset::kNumClasses;
    ds.images.push_back(render_shape(root.fork(i), side, channels, label));
    ds.labels.push_back(label);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// PNM
// ---------------------------------------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_pnm: cannot open " + path);

  std::string magic = pnm_token(in);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("load_pnm: unsupported magic '" + magic +
                             "' (want binary P5 or P6)");

  auto parse_int = [&](const char* what) {
    std::string tok = pnm_token(in);
    if (tok.empty()) throw std::runtime_error(std::string("load_pnm: missing ") + what);
    try {
      std::size_t pos = 0;
      long v = std::stol(tok, &pos);
      if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("load_pnm: malformed ") + what + " '" + tok + "'");
    }
  };

  long w = parse_int("width");
  long h = parse_int("height");
  long maxval = parse_int("maxval");
  if (maxval != 255)
    throw std::runtime_error("load_pnm: unsupported maxval " +
                             std::to_string(maxval) + " (only 255)");

  std::size_t expected = static_cast<std::size_t>(w) * h * channels;
  std::vector<unsigned char> buf(expected);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != expected)
    throw std::runtime_error("load_pnm: truncated payload, expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(got));

  Image img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.c = channels;
  img.v.resize(expected);
  for (std::size_t i = 0; i < expected; ++i) img.v[i] = buf[i] / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// FXT
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("fxt: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_u64_bits(std::ostream& out, std::uint64_t bits, int nbytes) {
  unsigned char b[8];
  for (int i = 0; i < nbytes; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), nbytes);
}

std::uint64_t get_u64_bits(std::istream& in, int nbytes) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), nbytes);
  if (!in) throw std::runtime_error("fxt: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < nbytes; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return bits;
}

}  // namespace

void fxt_write(const std::string& path, const FxtMap& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("fxt_write: cannot open " + path);

  out.write("FXT1", 4);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    std::uint64_t count = 1;
    for (auto d : t.dims) {
      count *= d;
      if (count > (1ull << 40))
        throw std::runtime_error("fxt_write: tensor '" + name + "' dims overflow");
    }
    if (count != t.values.size())
      throw std::runtime_error("fxt_write: tensor '" + name +
                               "' dims do not match value count");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(t.is_f32 ? '\x00' : '\x01');
    out.put(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (double v : t.values) {
      if (t.is_f32) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u64_bits(out, bits, 4);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64_bits(out, bits, 8);
      }
    }
  }
  if (!out) throw std::runtime_error("fxt_write: write failed for " + path);
}

FxtMap fxt_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fxt_read: cannot open " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in) throw std::runtime_error("fxt_read: truncated magic");
  if (std::memcmp(magic, "FXT", 3) != 0)
    throw std::runtime_error("fxt_read: bad magic");
  if (magic[3] != '1')
    throw std::runtime_error(std::string("fxt_read: unsupported FXT version '") +
                             magic[3] + "'");

  std::uint32_t count = get_u32(in);
  FxtMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(in);
    if (name_len > (1u << 20)) throw std::runtime_error("fxt_read: absurd name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("fxt_read: truncated name");

    int dtype = in.get();
    int rank = in.get();
    if (dtype == EOF || rank == EOF) throw std::runtime_error("fxt_read: truncated header");
    if (dtype != 0 && dtype != 1)
      throw std::runtime_error("fxt_read: unknown dtype code " + std::to_string(dtype));

    FxtTensor t;
    t.is_f32 = (dtype == 0);
    std::uint64_t n = 1;
    for (int r = 0; r < rank; ++r) {
      std::uint32_t d = get_u32(in);
      t.dims.push_back(d);
      n *= d;
      if (n > (1ull << 40)) throw std::runtime_error("fxt_read: dims overflow");
    }
    t.values.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (t.is_f32) {
        std::uint32_t bits = static_cast<std::uint32_t>(get_u64_bits(in, 4));
        float f;
        std::memcpy(&f, &bits, 4);
        t.values[k] = f;
      } else {
        std::uint64_t bits = get_u64_bits(in, 8);
        double v;
        std::memcpy(&v, &bits, 8);
        t.values[k] = v;
      }
    }
    if (tensors.count(name))
      throw std::runtime_error("fxt_read: duplicate tensor name '" + name + "'");
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

void save_dataset_fxt(const std::string& path, const ShapeDataset& ds) {
  FxtMap m;
  FxtTensor images;
  std::uint32_t n = static_cast<std::uint32_t>(ds.images.size());
  images.dims = {n, static_cast<std::uint32_t>(ds.side),
                 static_cast<std::uint32_t>(ds.side),
                 static_cast<std::uint32_t>(ds.channels)};
  images.values.reserve(images.size());
  for (const Image& img : ds.images)
    images.values.insert(images.values.end(), img.v.begin(), img.v.end());

  FxtTensor labels;
  labels.dims = {n};
  for (int l : ds.labels) labels.values.push_back(l);

  m.emplace("images", std::move(images));
  m.emplace("labels", std::move(labels));
  fxt_write(path, m);
}

ShapeDataset load_dataset_fxt(const std::string& path) {
  FxtMap m = fxt_read(path);
  auto it = m.find("images");
  auto lt = m.find("labels");
  if (it == m.end() || lt == m.end())
    throw std::runtime_error("load_dataset_fxt: missing 'images' or 'labels'");
  const FxtTensor& images = it->second;
  if (images.dims.size() != 4 || images.dims[1] != images.dims[2])
    throw std::runtime_error("load_dataset_fxt: images must be (n, side, side, c)");

  ShapeDataset ds;
  ds.side = static_cast<int>(images.dims[1]);
  ds.channels = static_cast<int>(images.dims[3]);
  std::size_t n = images.dims[0];
  if (lt->second.values.size() != n)
    throw std::runtime_error("load_dataset_fxt: label count mismatch");
  std::size_t per = static_cast<std::size_t>(ds.side) * ds.side * ds.channels;
  for (std::size_t i = 0; i < n; ++i) {
    Image img;
    img.h = img.w = ds.side;
    img.c = ds.channels;
    img.v.assign(images.values.begin() + i * per, images.values.begin() + (i + 1) * per);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<int>(lt->second.values[i]));
  }
  return ds;
}

}  // namespace flexivit
