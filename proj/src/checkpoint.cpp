#include "feather/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace feather {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'H', 'R'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool ends_with_mask(std::string_view name) { return name.ends_with("/mask"); }

std::vector<float> to_floats(const Tensorf& t) { return {t.data().data(), t.data().data() + t.size()}; }

}  // namespace

bool CheckpointRecord::is_mask() const { return std::holds_alternative<std::vector<std::uint8_t>>(data); }

std::size_t CheckpointRecord::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

const CheckpointRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const CheckpointRecord& Checkpoint::at(std::string_view name) const {
  const auto* r = find(name);
  if (r == nullptr) throw ContractError("checkpoint has no record '" + std::string(name) + "'");
  return *r;
}

void Checkpoint::add(std::string name, Shape dims, std::vector<float> values) {
  if (ends_with_mask(name)) throw ContractError("float record name may not end in /mask: " + name);
  if (shape_size(dims) != values.size()) throw DimensionError("record '" + name + "' size does not match " + shape_string(dims));
  records.push_back({std::move(name), std::move(dims), std::move(values)});
}

void Checkpoint::add_mask(std::string name, Shape dims, const Mask& mask) {
  if (!ends_with_mask(name)) throw ContractError("mask record name must end in /mask: " + name);
  if (shape_size(dims) != static_cast<std::size_t>(mask.size())) {
    throw DimensionError("mask '" + name + "' size does not match " + shape_string(dims));
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) bytes[static_cast<std::size_t>(i)] = mask[i] ? 1 : 0;
  records.push_back({std::move(name), std::move(dims), std::move(bytes)});
}

std::vector<float> Checkpoint::floats(std::string_view name) const {
  const auto& r = at(name);
  if (r.is_mask()) throw ContractError("record '" + std::string(name) + "' is a mask");
  return std::get<std::vector<float>>(r.data);
}

Mask Checkpoint::mask(std::string_view name) const {
  const auto& r = at(name);
  if (!r.is_mask()) throw ContractError("record '" + std::string(name) + "' is not a mask");
  const auto& bytes = std::get<std::vector<std::uint8_t>>(r.data);
  Mask m(static_cast<Eigen::Index>(bytes.size()));
  for (std::size_t i = 0; i < bytes.size(); ++i) m[static_cast<Eigen::Index>(i)] = bytes[i] != 0;
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& r : checkpoint.records) {
    if (ends_with_mask(r.name) != r.is_mask()) throw ContractError("record '" + r.name + "' type does not match its name");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) w.u32(static_cast<std::uint32_t>(d));
    if (r.is_mask()) {
      const auto& bytes = std::get<std::vector<std::uint8_t>>(r.data);
      w.raw(bytes.data(), bytes.size());
    } else {
      for (float f : std::get<std::vector<float>>(r.data)) w.u32(std::bit_cast<std::uint32_t>(f));
    }
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not an FTHR checkpoint (bad magic)", 0);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto count = r.u32("record count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto name_len = r.u32("name length");
    const auto name = r.take(name_len, "name");
    rec.name.assign(name.begin(), name.end());
    const auto rank = r.u32("rank");
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto start = r.pos();
      const auto dim = r.u32("dims");
      if (dim == 0) throw FormatError("record '" + rec.name + "' has a zero dimension", start);
      rec.dims.push_back(dim);
    }
    const std::size_t n = shape_size(rec.dims);
    if (ends_with_mask(rec.name)) {
      const auto payload = r.take(n, "mask data");
      rec.data = std::vector<std::uint8_t>(payload.begin(), payload.end());
    } else {
      std::vector<float> values(n);
      for (auto& v : values) v = std::bit_cast<float>(r.u32("tensor data"));
      rec.data = std::move(values);
    }
    ck.records.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after last checkpoint record", r.pos());
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Model& model, std::span<const PruneLayerState> layers) {
  const auto weighted = model.weighted_layers();
  if (layers.size() != weighted.size()) throw ContractError("one prune state per weighted layer expected");
  Checkpoint ck;
  for (std::size_t i = 0; i < weighted.size(); ++i) {
    const auto& l = *weighted[i];
    ck.add(l.name + "/weight", l.weight.shape(), to_floats(l.weight));
    ck.add(l.name + "/bias", l.bias.shape(), to_floats(l.bias));
    const auto t = layers[i].threshold.value_or(ThresholdValue(0.0));
    ck.add(l.name + "/threshold", {}, {static_cast<float>(t.value())});
    ck.add_mask(l.name + "/mask", l.weight.shape(), layers[i].mask);
  }
  return ck;
}

void restore_model(Model& model, const Checkpoint& checkpoint) {
  for (auto* l : model.weighted_layers()) {
    for (auto [tensor, suffix] : {std::pair{&l->weight, "/weight"}, std::pair{&l->bias, "/bias"}}) {
      const auto& rec = checkpoint.at(l->name + suffix);
      if (rec.dims != tensor->shape()) {
        throw DimensionError("checkpoint record '" + rec.name + "' has shape " + shape_string(rec.dims) + ", model expects " +
                             shape_string(tensor->shape()));
      }
      const auto values = checkpoint.floats(rec.name);
      tensor->mutable_data() = Eigen::Map<const Vector<float>>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
  }
}

std::vector<Mask> checkpoint_masks(const Model& model, const Checkpoint& checkpoint) {
  std::vector<Mask> out;
  for (const auto* l : model.weighted_layers()) {
    auto m = checkpoint.mask(l->name + "/mask");
    if (m.size() != l->weight.size()) throw DimensionError("mask for '" + l->name + "' does not match its weights");
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<ThresholdValue> checkpoint_thresholds(const Model& model, const Checkpoint& checkpoint) {
  std::vector<ThresholdValue> out;
  for (const auto* l : model.weighted_layers()) {
    out.emplace_back(static_cast<double>(checkpoint.floats(l->name + "/threshold").at(0)));
  }
  return out;
}

Checkpoint pack_snapshots(std::span<const MaskSnapshot> snapshots, std::span<const PruneLayerState> layers) {
  Checkpoint ck;
  for (const auto& s : snapshots) {
    if (s.layers.size() != layers.size()) throw ContractError("snapshot layer count does not match model");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      ck.add_mask("epoch" + std::to_string(s.epoch) + "/" + layers[i].name + "/mask", layers[i].weights.shape(), s.layers[i]);
    }
  }
  return ck;
}

std::vector<MaskSnapshot> unpack_snapshots(const Checkpoint& packed) {
  std::vector<MaskSnapshot> out;
  for (const auto& rec : packed.records) {
    if (!rec.is_mask() || !rec.name.starts_with("epoch")) {
      throw ContractError("unexpected record '" + rec.name + "' in mask snapshot file");
    }
    const auto slash = rec.name.find('/');
    int epoch = 0;
    try {
      epoch = std::stoi(rec.name.substr(5, slash - 5));
    } catch (const std::exception&) {
      throw ContractError("bad epoch in snapshot record '" + rec.name + "'");
    }
    if (out.empty() || out.back().epoch != epoch) out.push_back({epoch, {}});
    out.back().layers.push_back(packed.mask(rec.name));
  }
  return out;
}

}  // namespace feather
