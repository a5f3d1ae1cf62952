#include "sr3/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sr3/errors.hpp"

namespace sr3 {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, std::string source)
      : bytes_(bytes), end_(end), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) {
      throw FormatError("checkpoint " + source_ + " (format v" +
                        std::to_string(kCheckpointVersion) + ") is truncated at byte " +
                        std::to_string(pos_));
    }
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::string text() { return raw(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint8_t kind_code(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Linear:
      return 0;
    case ScheduleKind::Cosine:
      return 1;
    case ScheduleKind::Respaced:
      return 2;
  }
  return 255;
}

template <typename T>
void write_group(Writer& w, const std::string& prefix, const NamedTensors<T>& group) {
  for (const auto& item : group) {
    w.text(prefix + item.name);
    w.u32(static_cast<std::uint32_t>(item.tensor.rank()));
    for (auto extent : item.tensor.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (T v : item.tensor.data()) w.f32(static_cast<float>(v));
  }
}

}  // namespace

std::string header_value(const std::vector<std::pair<std::string, std::string>>& header,
                         const std::string& key) {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint header has no key '" + key + "'");
}

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const TrainState<T>& state) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);

  std::string header = "step=" + std::to_string(state.step) + "\n";
  for (const auto& [k, v] : state.header) {
    if (k != "step") header += k + "=" + v + "\n";
  }
  w.text(header);

  w.u8(kind_code(state.schedule.kind()));
  const auto betas = state.schedule.betas();
  w.u32(static_cast<std::uint32_t>(betas.size()));
  for (double b : betas) w.f64(b);

  w.u32(3);
  w.text(state.noise_rng.serialize());
  w.text(state.dropout_rng.serialize());
  w.text(state.data_rng.serialize());

  w.u32(static_cast<std::uint32_t>(state.params.size() + state.ema_params.size() +
                                   state.adam_m.size() + state.adam_v.size()));
  write_group(w, "param/", state.params);
  write_group(w, "ema/", state.ema_params);
  write_group(w, "adam_m/", state.adam_m);
  write_group(w, "adam_v/", state.adam_v);

  auto& bytes = w.bytes();
  w.u32(crc_of(bytes.data(), bytes.size()));
  return std::move(bytes);
}

template <typename T>
TrainState<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  const std::string where = "checkpoint " + source;
  if (bytes.size() < kCheckpointMagic.size() + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw FormatError(where + ": bad magic (not an SR3 checkpoint, expected format v" +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) stored_crc |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  Reader r(bytes, body, source);
  r.raw(kCheckpointMagic.size());
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(where + ": unsupported format version " + std::to_string(version) +
                      " (this build reads v" + std::to_string(kCheckpointVersion) + ")");
  }
  if (crc_of(bytes.data(), body) != stored_crc) {
    throw FormatError(where + ": checksum mismatch (corrupt or truncated, format v" +
                      std::to_string(kCheckpointVersion) + ")");
  }

  std::vector<std::pair<std::string, std::string>> header;
  long step = 0;
  {
    const std::string text = r.text();
    std::size_t start = 0;
    while (start < text.size()) {
      const auto end = text.find('\n', start);
      const std::string line = text.substr(start, end - start);
      start = end == std::string::npos ? text.size() : end + 1;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError(where + ": malformed header line '" + line + "'");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "step") {
        step = std::stol(value);
      } else {
        header.emplace_back(key, value);
      }
    }
  }

  const auto kind_byte = r.u8();
  if (kind_byte > 2) throw FormatError(where + ": unknown schedule kind " + std::to_string(kind_byte));
  const ScheduleKind kinds[] = {ScheduleKind::Linear, ScheduleKind::Cosine, ScheduleKind::Respaced};
  std::vector<double> betas(r.u32());
  for (auto& b : betas) b = r.f64();
  NoiseSchedule schedule(kinds[kind_byte], std::move(betas));

  const auto rng_count = r.u32();
  if (rng_count != 3) throw FormatError(where + ": expected 3 generator states");
  Rng noise = Rng::restore(r.text());
  Rng dropout = Rng::restore(r.text());
  Rng data = Rng::restore(r.text());

  TrainState<T> state{step, {}, {}, {}, {}, std::move(schedule), noise, dropout, data, std::move(header)};
  const auto tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::string name = r.text();
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError(where + ": tensor '" + name + "' has invalid rank");
    Shape shape(rank);
    for (auto& extent : shape) extent = r.u32();
    std::vector<T> values(shape_numel(shape));
    r.need(values.size() * 4);
    for (auto& v : values) v = static_cast<T>(r.f32());
    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash), local = name.substr(slash + 1);
    NamedTensors<T>* target = group == "param"    ? &state.params
                              : group == "ema"    ? &state.ema_params
                              : group == "adam_m" ? &state.adam_m
                              : group == "adam_v" ? &state.adam_v
                                                  : nullptr;
    if (!target || slash == std::string::npos) {
      throw FormatError(where + ": tensor '" + name + "' has no known group prefix");
    }
    target->push_back({local, Tensor<T>(std::move(shape), std::move(values), group == "param")});
  }
  if (r.pos() != body) throw FormatError(where + ": trailing bytes before checksum");
  return state;
}

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes, path.string());
}

template std::vector<std::uint8_t> encode_checkpoint(const TrainState<float>&);
template std::vector<std::uint8_t> encode_checkpoint(const TrainState<double>&);
template TrainState<float> decode_checkpoint(const std::vector<std::uint8_t>&, const std::string&);
template TrainState<double> decode_checkpoint(const std::vector<std::uint8_t>&, const std::string&);
template void save_checkpoint(const TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint(const TrainState<double>&, const std::filesystem::path&);
template TrainState<float> load_checkpoint(const std::filesystem::path&);
template TrainState<double> load_checkpoint(const std::filesystem::path&);

}  // namespace sr3
