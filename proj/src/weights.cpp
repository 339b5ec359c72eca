#include "gmar/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <string>

#include "gmar/error.hpp"

namespace gmar {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "WeightFileV1 stores IEEE-754 binary32");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t checked_u32(std::size_t v) {
  if (v > 0xffffffffu) throw ParameterError("value does not fit the u32 fields of the weight file");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatErrorKind::kTruncated, pos_,
                        std::string("need ") + std::to_string(n) + " bytes for " + what + ", have " +
                            std::to_string(bytes_.size() - pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    const auto b = take(4, what);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const ViTModel& model) {
  check_params(model.config, model.params);
  const ViTConfig& c = model.config;
  std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  for (std::size_t v : {c.image_size, c.patch_size, c.embed_dim, c.num_layers, c.num_heads, c.mlp_dim, c.num_classes}) {
    put_u32(out, checked_u32(v));
  }
  put_u32(out, checked_u32(model.params.size()));
  for (const auto& [name, tensor] : model.params) {
    put_u32(out, checked_u32(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, checked_u32(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(out, checked_u32(d));
    for (double v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ViTModel decode_weights(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(sizeof(kWeightMagic), "magic");
  if (std::memcmp(magic.data(), kWeightMagic, sizeof(kWeightMagic)) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, 0, "expected GMARW001");
  }

  ViTModel model;
  ViTConfig& c = model.config;
  for (std::size_t* field : {&c.image_size, &c.patch_size, &c.embed_dim, &c.num_layers, &c.num_heads, &c.mlp_dim,
                             &c.num_classes}) {
    *field = in.u32("config");
  }
  std::map<std::string, Shape> expected;
  try {
    expected = param_shapes(c);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kInvalidConfig, in.offset(), e.what());
  }

  const std::size_t count_offset = in.offset();
  const std::uint32_t count = in.u32("entry count");
  if (count != expected.size()) {
    throw FormatError(FormatErrorKind::kShapeMismatch, count_offset,
                      "file holds " + std::to_string(count) + " entries, config needs " +
                          std::to_string(expected.size()));
  }
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t entry_offset = in.offset();
    const std::uint32_t name_len = in.u32("name length");
    const auto name_bytes = in.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto it = expected.find(name);
    if (it == expected.end()) {
      throw FormatError(FormatErrorKind::kShapeMismatch, entry_offset, "unknown parameter '" + name + "'");
    }
    if (model.params.contains(name)) {
      throw FormatError(FormatErrorKind::kShapeMismatch, entry_offset, "duplicate parameter '" + name + "'");
    }
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw FormatError(FormatErrorKind::kShapeMismatch, entry_offset, "rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = in.u32("dims");
    if (shape != it->second) {
      throw FormatError(FormatErrorKind::kShapeMismatch, entry_offset,
                        name + " is " + shape_to_string(shape) + ", config needs " + shape_to_string(it->second));
    }
    std::vector<double> values(numel(shape));
    for (double& v : values) v = static_cast<double>(in.f32("values"));
    model.params.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.at_end()) {
    throw FormatError(FormatErrorKind::kShapeMismatch, in.offset(), "trailing bytes after the last entry");
  }
  return model;
}

void save_weights(const ViTModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_weights(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParameterError("write failed for " + path.string());
}

ViTModel load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::kIo, 0, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

ModelParams quantize_f32(const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params) {
    std::vector<double> values(t.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(static_cast<float>(t[i]));
    out.emplace(name, Tensor(t.shape(), std::move(values)));
  }
  return out;
}

}  // namespace gmar
