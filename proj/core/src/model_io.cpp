#include "gccvit/model_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <type_traits>

#include "gccvit/errors.hpp"

namespace gccvit {

namespace fs = std::filesystem;

ContainerError::ContainerError(std::uint32_t found, std::uint32_t supported)
    : std::runtime_error("unsupported container version " + std::to_string(found) + " (this build reads version " +
                         std::to_string(supported) + ")"),
      kind_(Kind::kUnsupportedVersion),
      found_version_(found),
      supported_version_(supported) {}

namespace {

constexpr std::array<char, 4> kMagic{'G', 'V', 'S', 'M'};
constexpr std::size_t kMaxRank = 8;
constexpr std::uint32_t kMaxStringBytes = 1u << 20;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > kMaxStringBytes) throw ContainerError(ContainerError::Kind::kInvalidRecord, "string field too long");
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) {
      throw ContainerError(ContainerError::Kind::kTruncated,
                           "container truncated at byte " + std::to_string(pos_) + " (needs " + std::to_string(n) +
                               " more, " + std::to_string(in_.size() - pos_) + " available)");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct ContainerHeader {
  VitConfig vit;
  HeadConfig head;
  std::vector<std::string> class_names;
  std::optional<SplitRecord> split;
  Granularity granularity = Granularity::kPerTensor;
  QuantProvenance provenance;
};

void write_config(ByteWriter& w, const ContainerHeader& h) {
  w.u32(static_cast<std::uint32_t>(h.vit.image_size));
  w.u32(static_cast<std::uint32_t>(h.vit.patch_size));
  w.u32(static_cast<std::uint32_t>(h.vit.projection_dim));
  w.u32(static_cast<std::uint32_t>(h.vit.num_heads));
  w.u32(static_cast<std::uint32_t>(h.vit.num_layers));
  w.u32(static_cast<std::uint32_t>(h.vit.mlp_hidden));
  w.f32(h.vit.layer_norm_eps);
  w.u32(static_cast<std::uint32_t>(h.head.hidden));
  w.u32(static_cast<std::uint32_t>(h.head.num_classes));
  w.f32(h.head.l2_strength);
  w.u8(static_cast<std::uint8_t>(h.head.loss));
  w.u8(h.split ? 1 : 0);
  w.u64(h.split ? h.split->seed : 0);
  w.f32(h.split ? h.split->ratio : 0.0f);
  w.u8(static_cast<std::uint8_t>(h.granularity));
  w.str(h.provenance.source_hash);
  w.str(h.provenance.quantized_on);
  w.u32(static_cast<std::uint32_t>(h.class_names.size()));
  for (const auto& n : h.class_names) w.str(n);
}

ContainerHeader read_config(ByteReader& r) {
  ContainerHeader h;
  h.vit.image_size = r.u32();
  h.vit.patch_size = r.u32();
  h.vit.projection_dim = r.u32();
  h.vit.num_heads = r.u32();
  h.vit.num_layers = r.u32();
  h.vit.mlp_hidden = r.u32();
  h.vit.layer_norm_eps = r.f32();
  h.head.hidden = r.u32();
  h.head.num_classes = r.u32();
  h.head.l2_strength = r.f32();
  const std::uint8_t loss = r.u8();
  if (loss > 1) throw ContainerError(ContainerError::Kind::kInvalidRecord, "unknown head loss tag");
  h.head.loss = static_cast<HeadLoss>(loss);
  const bool has_split = r.u8() != 0;
  const std::uint64_t seed = r.u64();
  const float ratio = r.f32();
  if (has_split) h.split = SplitRecord{seed, ratio};
  const std::uint8_t gran = r.u8();
  if (gran > 1) throw ContainerError(ContainerError::Kind::kInvalidRecord, "unknown quantization granularity tag");
  h.granularity = static_cast<Granularity>(gran);
  h.provenance.source_hash = r.str();
  h.provenance.quantized_on = r.str();
  const std::uint32_t n = r.u32();
  if (n > 1'000'000) throw ContainerError(ContainerError::Kind::kInvalidRecord, "implausible class count");
  for (std::uint32_t i = 0; i < n; ++i) h.class_names.push_back(r.str());
  try {
    h.vit.validate();
    h.head.validate();
  } catch (const ConfigError& e) {
    throw ContainerError(ContainerError::Kind::kSchemaMismatch, std::string("stored configuration invalid: ") + e.what());
  }
  if (h.class_names.size() != h.head.num_classes) {
    throw ContainerError(ContainerError::Kind::kSchemaMismatch, "class name count does not match head outputs");
  }
  return h;
}

void write_record(ByteWriter& w, const TensorRecord& rec) {
  w.str(rec.name);
  w.u8(static_cast<std::uint8_t>(rec.dtype));
  w.u8(static_cast<std::uint8_t>(rec.shape.size()));
  for (auto d : rec.shape) w.u32(static_cast<std::uint32_t>(d));
  w.u64(rec.offset);
  w.u64(rec.length);
  if (rec.dtype == DType::kI8) {
    w.u32(static_cast<std::uint32_t>(rec.scales.size()));
    for (float s : rec.scales) w.f32(s);
    w.i32(rec.zero_point);
  }
}

TensorRecord read_record(ByteReader& r) {
  TensorRecord rec;
  rec.name = r.str();
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' has unknown dtype");
  rec.dtype = static_cast<DType>(dtype);
  const std::uint8_t rank = r.u8();
  if (rank == 0 || rank > kMaxRank) {
    throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' has invalid rank");
  }
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' has a zero dimension");
    rec.shape.push_back(d);
  }
  rec.offset = r.u64();
  rec.length = r.u64();
  if (rec.dtype == DType::kI8) {
    const std::uint32_t n = r.u32();
    if (n != 1 && n != rec.shape.back()) {
      throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' has an invalid scale count");
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      const float s = r.f32();
      if (!(s > 0.0f) || !std::isfinite(s)) {
        throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' has a non-positive scale");
      }
      rec.scales.push_back(s);
    }
    rec.zero_point = r.i32();
  }
  return rec;
}

struct Slot {
  std::string name;
  DType dtype;
  const void* data;
};

// Serialises tensors in canonical visit order. `slots` carries pointers to Tensor or QuantizedTensor.
std::vector<std::uint8_t> write_container(const ContainerHeader& header, const std::vector<Slot>& slots) {
  std::vector<TensorRecord> records;
  records.reserve(slots.size());
  for (const auto& s : slots) {
    TensorRecord rec;
    rec.name = s.name;
    rec.dtype = s.dtype;
    if (s.dtype == DType::kF32) {
      const auto& t = *static_cast<const Tensor*>(s.data);
      rec.shape = t.shape();
      rec.length = t.size() * sizeof(float);
    } else {
      const auto& q = *static_cast<const QuantizedTensor*>(s.data);
      rec.shape = q.shape;
      rec.length = q.data.size();
      rec.scales = q.scales;
      rec.zero_point = q.zero_point;
    }
    records.push_back(std::move(rec));
  }

  auto write_head = [&](ByteWriter& w, std::uint64_t payload_offset) {
    w.raw(kMagic.data(), kMagic.size());
    w.u32(kContainerVersion);
    w.u64(payload_offset);
    write_config(w, header);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) write_record(w, rec);
  };

  ByteWriter probe;
  write_head(probe, 0);
  const std::uint64_t payload_offset = probe.size();
  std::uint64_t cursor = payload_offset;
  for (auto& rec : records) {
    rec.offset = cursor;
    cursor += rec.length;
  }

  ByteWriter w;
  write_head(w, payload_offset);
  for (const auto& s : slots) {
    if (s.dtype == DType::kF32) {
      for (float v : static_cast<const Tensor*>(s.data)->data()) w.f32(v);
    } else {
      const auto& q = *static_cast<const QuantizedTensor*>(s.data);
      w.raw(q.data.data(), q.data.size());
    }
  }
  return std::move(w.bytes());
}

struct ParsedContainer {
  ContainerHeader header;
  std::vector<TensorRecord> records;
};

ParsedContainer parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw ContainerError(ContainerError::Kind::kNotAContainer, "not a model container (bad magic)");
  }
  ByteReader r(bytes.subspan(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) throw ContainerError(version, kContainerVersion);
  const std::uint64_t payload_offset = r.u64();
  ParsedContainer pc;
  pc.header = read_config(r);
  const std::uint32_t count = r.u32();
  if (count > 1'000'000) throw ContainerError(ContainerError::Kind::kInvalidRecord, "implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) pc.records.push_back(read_record(r));
  if (kMagic.size() + r.position() != payload_offset) {
    throw ContainerError(ContainerError::Kind::kInvalidRecord, "payload offset does not follow the manifest");
  }

  std::vector<const TensorRecord*> by_offset;
  for (const auto& rec : pc.records) {
    const std::uint64_t elem = rec.dtype == DType::kF32 ? sizeof(float) : 1;
    if (rec.length != shape_size(rec.shape) * elem) {
      throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' byte length disagrees with its shape");
    }
    if (rec.offset < payload_offset) {
      throw ContainerError(ContainerError::Kind::kInvalidRecord, "tensor '" + rec.name + "' starts inside the header");
    }
    if (rec.offset > bytes.size() || rec.length > bytes.size() - rec.offset) {
      throw ContainerError(ContainerError::Kind::kTruncated, "tensor '" + rec.name + "' extends past the end of the container");
    }
    by_offset.push_back(&rec);
  }
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i - 1]->offset + by_offset[i - 1]->length > by_offset[i]->offset) {
      throw ContainerError(ContainerError::Kind::kOverlappingTensors,
                           "tensors '" + by_offset[i - 1]->name + "' and '" + by_offset[i]->name + "' overlap");
    }
  }
  return pc;
}

using ShapeParams = ModelParamsT<Shape, Shape>;

ShapeParams expected_shapes(const VitConfig& v, const HeadConfig& h) {
  const std::size_t d = v.projection_dim;
  ShapeParams s;
  s.backbone.patch_weight = {v.patch_dim(), d};
  s.backbone.patch_bias = {d};
  s.backbone.cls_token = {1, d};
  s.backbone.pos_embed = {v.num_patches() + 1, d};
  s.backbone.blocks.resize(v.num_layers);
  for (auto& b : s.backbone.blocks) {
    b.ln1_gamma = b.ln1_beta = b.ln2_gamma = b.ln2_beta = {d};
    b.wq = b.wk = b.wv = b.wo = {d, d};
    b.bq = b.bk = b.bv = b.bo = b.b2 = {d};
    b.w1 = {d, v.mlp_hidden};
    b.b1 = {v.mlp_hidden};
    b.w2 = {v.mlp_hidden, d};
  }
  s.backbone.final_gamma = s.backbone.final_beta = {d};
  s.head.dense_weight = {d + 1, h.hidden};
  s.head.dense_bias = {h.hidden};
  s.head.svm_weight = {h.hidden, h.num_classes};
  s.head.svm_bias = {h.num_classes};
  return s;
}

Tensor read_f32(std::span<const std::uint8_t> bytes, const TensorRecord& rec) {
  Tensor t(rec.shape);
  ByteReader r(bytes.subspan(rec.offset, rec.length));
  for (auto& v : t.data()) v = r.f32();
  return t;
}

QuantizedTensor read_i8(std::span<const std::uint8_t> bytes, const TensorRecord& rec) {
  QuantizedTensor q;
  q.shape = rec.shape;
  q.scales = rec.scales;
  q.zero_point = rec.zero_point;
  q.data.resize(rec.length);
  std::memcpy(q.data.data(), bytes.data() + rec.offset, rec.length);
  return q;
}

// Fills `params` from the manifest, enforcing that names, shapes and dtypes match the schema.
template <class P>
void materialize_params(std::span<const std::uint8_t> bytes, const ParsedContainer& pc, P& params) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& rec : pc.records) {
    if (!by_name.emplace(rec.name, &rec).second) {
      throw ContainerError(ContainerError::Kind::kSchemaMismatch, "duplicate tensor '" + rec.name + "'");
    }
  }
  ShapeParams shapes = expected_shapes(pc.header.vit, pc.header.head);
  std::vector<Shape> expected;
  ShapeParams::visit(shapes, "", [&](const std::string&, const Shape& s, Role) { expected.push_back(s); });
  match_layout(params, shapes);

  std::size_t i = 0;
  std::size_t seen = 0;
  P::visit(params, "", [&](const std::string& name, auto& slot, Role) {
    using Slot = std::decay_t<decltype(slot)>;
    const Shape& shape = expected[i++];
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContainerError(ContainerError::Kind::kSchemaMismatch, "missing tensor '" + name + "'");
    const TensorRecord& rec = *it->second;
    if (rec.shape != shape) {
      throw ContainerError(ContainerError::Kind::kSchemaMismatch, "tensor '" + name + "' has shape " +
                                                                      shape_to_string(rec.shape) + ", expected " +
                                                                      shape_to_string(shape));
    }
    ++seen;
    if constexpr (std::is_same_v<Slot, QuantizedTensor>) {
      if (rec.dtype != DType::kI8) throw ContainerError(ContainerError::Kind::kSchemaMismatch, "tensor '" + name + "' should be i8");
      slot = read_i8(bytes, rec);
    } else {
      if (rec.dtype != DType::kF32) throw ContainerError(ContainerError::Kind::kSchemaMismatch, "tensor '" + name + "' should be f32");
      slot = read_f32(bytes, rec);
    }
  });
  if (seen != pc.records.size()) {
    throw ContainerError(ContainerError::Kind::kSchemaMismatch, "container holds tensors not used by the model");
  }
}

template <class P>
std::vector<Slot> collect_slots(const P& params) {
  std::vector<Slot> slots;
  P::visit(params, "", [&](const std::string& name, const auto& slot, Role) {
    using S = std::decay_t<decltype(slot)>;
    slots.push_back({name, std::is_same_v<S, QuantizedTensor> ? DType::kI8 : DType::kF32, &slot});
  });
  return slots;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  if (in.bad()) throw IoError("error reading model file " + path.string());
  return bytes;
}

std::size_t write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("error writing " + path.string());
  return bytes.size();
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  ContainerHeader h{model.vit, model.head, model.class_names, model.split, Granularity::kPerTensor, {}};
  return write_container(h, collect_slots(model.params));
}

std::vector<std::uint8_t> serialize_model(const QuantizedModel& model) {
  ContainerHeader h{model.vit, model.head, model.class_names, model.split, model.granularity, model.provenance};
  return write_container(h, collect_slots(model.params));
}

std::vector<TensorRecord> read_manifest(std::span<const std::uint8_t> bytes) { return parse(bytes).records; }

LoadedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ParsedContainer pc = parse(bytes);
  const bool quantized =
      std::any_of(pc.records.begin(), pc.records.end(), [](const TensorRecord& r) { return r.dtype == DType::kI8; });
  if (quantized) {
    QuantizedModel qm;
    qm.vit = pc.header.vit;
    qm.head = pc.header.head;
    qm.class_names = pc.header.class_names;
    qm.split = pc.header.split;
    qm.granularity = pc.header.granularity;
    qm.provenance = pc.header.provenance;
    materialize_params(bytes, pc, qm.params);
    return qm;
  }
  Model m;
  m.vit = pc.header.vit;
  m.head = pc.header.head;
  m.class_names = pc.header.class_names;
  m.split = pc.header.split;
  materialize_params(bytes, pc, m.params);
  return m;
}

std::size_t save_model(const Model& model, const fs::path& path) { return write_bytes(path, serialize_model(model)); }

std::size_t save_model(const QuantizedModel& model, const fs::path& path) {
  return write_bytes(path, serialize_model(model));
}

LoadedModel load_model(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return deserialize_model(bytes);
  } catch (const ContainerError& e) {
    if (e.kind() == ContainerError::Kind::kUnsupportedVersion) throw;
    throw ContainerError(e.kind(), path.string() + ": " + e.what());
  }
}

Model load_float_model(const fs::path& path) {
  auto loaded = load_model(path);
  if (auto* m = std::get_if<Model>(&loaded)) return std::move(*m);
  return dequantize_model(std::get<QuantizedModel>(loaded));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace gccvit
