#include "cotasr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cotasr/errors.hpp"

namespace cotasr::checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(at_, n));
    at_ += n;
    return s;
  }
  void get_doubles(std::span<double> dst) {
    need(dst.size() * sizeof(double));
    std::memcpy(dst.data(), bytes_.data() + at_, dst.size() * sizeof(double));
    at_ += dst.size() * sizeof(double);
  }
  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - at_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t at_ = 0;
};

std::string metadata_text(const config::KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace

std::string serialize(const model::CotAsrModel& m, const config::KeyValues& metadata) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put_string(out, config::model_config_to_text(m.config));
  put_string(out, metadata_text(metadata));
  put<std::uint64_t>(out, [&] {
    std::uint64_t n = 0;
    model::visit_params(m, [&](const std::string&, const Matrix&) { ++n; });
    return n;
  }());
  model::visit_params(m, [&](const std::string& name, const Matrix& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    for (double v : t.values()) put<double>(out, v);
  });
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw CheckpointError("not a cotasr checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kFormatVersion) + ")");
  }
  Checkpoint ck;
  try {
    const auto cfg_len = r.get<std::uint64_t>();
    const model::ModelConfig cfg = config::model_config_from_text(r.get_string(cfg_len));
    const auto meta_len = r.get<std::uint64_t>();
    ck.metadata = config::parse_key_values(r.get_string(meta_len));
    // Shapes come from the config; values are overwritten below.
    ck.model = model::CotAsrModel::create(cfg, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config echo is invalid: ") + e.what());
  }

  std::vector<std::pair<std::string, Matrix*>> slots;
  model::visit_params(ck.model, [&](const std::string& n, Matrix& t) { slots.emplace_back(n, &t); });
  const auto count = r.get<std::uint64_t>();
  if (count != slots.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                          std::to_string(slots.size()));
  }
  for (auto& [name, tensor] : slots) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string got = r.get_string(name_len);
    if (got != name) throw CheckpointError("checkpoint tensor '" + got + "' where '" + name + "' expected");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != tensor->rows() || cols != tensor->cols()) {
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    r.get_doubles(tensor->values());
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

void save(const std::filesystem::path& path, const model::CotAsrModel& m,
          const config::KeyValues& metadata) {
  const std::string bytes = serialize(m, metadata);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace cotasr::checkpoint
