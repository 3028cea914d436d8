#include "geoadapt/tinynet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "geoadapt/error.hpp"

namespace geoadapt::tinynet {

namespace {

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_), pos_);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : sections)
    if (n == name) return true;
  return false;
}

const Mlp& Checkpoint::section(const std::string& name) const {
  for (const auto& [n, net] : sections)
    if (n == name) return net;
  throw DataError("checkpoint has no section '" + name + "'");
}

Mlp& Checkpoint::section(const std::string& name) {
  return const_cast<Mlp&>(static_cast<const Checkpoint&>(*this).section(name));
}

void Checkpoint::set(const std::string& name, Mlp net) {
  for (auto& [n, existing] : sections) {
    if (n == name) {
      existing = std::move(net);
      return;
    }
  }
  sections.emplace_back(name, std::move(net));
}

std::string serialize(const Checkpoint& ckpt) {
  std::string out = "GATN";
  put<std::uint8_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& [name, net] : ckpt.sections) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_count()));
    for (const auto& l : net.layers()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    }
  }
  for (const auto& [name, net] : ckpt.sections) {
    for (const auto& l : net.layers()) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_f32(out, l.weight.value(r, c));
      for (Eigen::Index r = 0; r < l.bias.rows(); ++r) put_f32(out, l.bias.value(r, 0));
    }
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(4) != "GATN") throw ParseError("not a checkpoint (bad magic)", 0);
  const auto version = in.get<std::uint8_t>();
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint ckpt;
  ckpt.metadata = in.get_string(in.get<std::uint32_t>());
  const auto n_sections = in.get<std::uint32_t>();
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::string name = in.get_string(in.get<std::uint16_t>());
    const auto n_layers = in.get<std::uint32_t>();
    Mlp net;
    for (std::uint32_t k = 0; k < n_layers; ++k) {
      const auto rows = in.get<std::uint32_t>();
      const auto cols = in.get<std::uint32_t>();
      const auto act = in.get<std::uint8_t>();
      if (act > static_cast<std::uint8_t>(Activation::sigmoid)) throw ParseError("unknown activation code", in.pos() - 1);
      DenseLayer l;
      l.weight = ParamTensor(rows, cols);
      l.bias = ParamTensor(rows, 1);
      l.activation = static_cast<Activation>(act);
      if (!net.layers().empty() && net.layers().back().weight.rows() != static_cast<Eigen::Index>(cols)) {
        throw ParseError("layer shapes of section '" + name + "' do not compose", in.pos());
      }
      net.layers().push_back(std::move(l));
    }
    ckpt.sections.emplace_back(name, std::move(net));
  }
  for (auto& [name, net] : ckpt.sections) {
    for (auto& l : net.layers()) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight.value(r, c) = in.get_f32();
      for (Eigen::Index r = 0; r < l.bias.rows(); ++r) l.bias.value(r, 0) = in.get_f32();
    }
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint payload", in.pos());
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = serialize(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace geoadapt::tinynet
