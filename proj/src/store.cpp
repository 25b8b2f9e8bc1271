#include "memno/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

namespace memno::store {

namespace fs = std::filesystem;

std::string to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "io error";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::UnsupportedVersion: return "unsupported version";
    case ErrorKind::UnsupportedType: return "unsupported element type";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::NonFinite: return "non-finite payload";
    case ErrorKind::Malformed: return "malformed";
  }
  return "?";
}

StoreError::StoreError(ErrorKind kind, const fs::path& path, const std::string& detail)
    : std::runtime_error(to_string(kind) + ": " + (path.empty() ? std::string("<memory>") : path.string()) + ": " +
                         detail),
      kind_(kind),
      path_(path),
      detail_(detail) {}

bool Container::has(std::string_view name) const {
  return std::any_of(fields.begin(), fields.end(), [&](const Field& f) { return f.name == name; });
}

namespace {

template <typename T>
const T& field_as(const Container& c, std::string_view name) {
  for (const auto& f : c.fields) {
    if (f.name != name) continue;
    if (const auto* v = std::get_if<T>(&f.value)) return *v;
    throw StoreError(ErrorKind::Malformed, {}, "field '" + std::string(name) + "' has the wrong kind");
  }
  throw StoreError(ErrorKind::Malformed, {}, "missing field '" + std::string(name) + "'");
}

template <typename T>
void set_field(Container& c, std::string name, T value) {
  for (auto& f : c.fields) {
    if (f.name == name) {
      f.value = std::move(value);
      return;
    }
  }
  c.fields.push_back({std::move(name), std::move(value)});
}

}  // namespace

const std::string& Container::text(std::string_view name) const { return field_as<std::string>(*this, name); }
const std::vector<double>& Container::array(std::string_view name) const {
  return field_as<std::vector<double>>(*this, name);
}
void Container::set(std::string name, std::string text) { set_field(*this, std::move(name), std::move(text)); }
void Container::set(std::string name, std::vector<double> values) {
  set_field(*this, std::move(name), std::move(values));
}

// ---------------------------------------------------------------------------
// byte codec

namespace {

constexpr std::uint8_t kFieldArray = 1;
constexpr std::uint8_t kFieldText = 2;

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void f64s(std::span<const double> v) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(v.data(), v.size() * sizeof(double));
    } else {
      for (double x : v) uint(std::bit_cast<std::uint64_t>(x));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const fs::path& origin) : bytes_(bytes), origin_(origin) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw StoreError(ErrorKind::Truncated, origin_,
                       std::string("expected ") + std::to_string(pos_ + n) + " bytes (reading " + what +
                           "), file has " + std::to_string(bytes_.size()));
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) need(n * sizeof(double), what);
    std::vector<double> v(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
      pos_ += n * sizeof(double);
    } else {
      for (auto& x : v) x = std::bit_cast<double>(uint<std::uint64_t>(what));
    }
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  const fs::path& origin_;
  std::size_t pos_ = 0;
};

std::uint64_t extent_product(const std::vector<std::uint64_t>& extents) {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode(const Container& c) {
  if (extent_product(c.extents) != c.payload.size()) {
    throw StoreError(ErrorKind::Malformed, {}, "extents describe " + std::to_string(extent_product(c.extents)) +
                                                   " values, payload has " + std::to_string(c.payload.size()));
  }
  Writer w;
  w.raw(kMagic, 4);
  w.uint<std::uint16_t>(kVersion);
  w.uint<std::uint16_t>(kTypeF64);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(c.extents.size()));
  for (auto e : c.extents) w.uint<std::uint64_t>(e);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(c.fields.size()));
  for (const auto& f : c.fields) {
    if (f.name.size() > 0xFFFF) throw StoreError(ErrorKind::Malformed, {}, "field name too long");
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(f.name.size()));
    w.raw(f.name.data(), f.name.size());
    if (const auto* a = std::get_if<std::vector<double>>(&f.value)) {
      w.uint<std::uint8_t>(kFieldArray);
      w.uint<std::uint64_t>(a->size());
      w.f64s(*a);
    } else {
      const auto& t = std::get<std::string>(f.value);
      w.uint<std::uint8_t>(kFieldText);
      w.uint<std::uint64_t>(t.size());
      w.raw(t.data(), t.size());
    }
  }
  w.uint<std::uint64_t>(c.payload.size() * sizeof(double));
  w.f64s(c.payload);
  return w.take();
}

Container decode(std::span<const std::uint8_t> bytes, const fs::path& origin) {
  Reader r(bytes, origin);
  const std::string magic = r.text(4, "magic");
  if (magic != std::string_view(kMagic, 4)) throw StoreError(ErrorKind::BadMagic, origin, "expected \"MNO1\"");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kVersion) {
    throw StoreError(ErrorKind::UnsupportedVersion, origin,
                     "version " + std::to_string(version) + " (supported: " + std::to_string(kVersion) + ")");
  }
  const auto type = r.uint<std::uint16_t>("element type");
  if (type != kTypeF64) {
    throw StoreError(ErrorKind::UnsupportedType, origin, "element type code " + std::to_string(type));
  }
  Container c;
  const auto rank = r.uint<std::uint32_t>("rank");
  r.need(std::size_t{rank} * 8, "extents");
  for (std::uint32_t i = 0; i < rank; ++i) c.extents.push_back(r.uint<std::uint64_t>("extents"));

  const auto n_fields = r.uint<std::uint32_t>("field count");
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    const auto len = r.uint<std::uint16_t>("field name");
    std::string name = r.text(len, "field name");
    const auto kind = r.uint<std::uint8_t>("field kind");
    const auto count = r.uint<std::uint64_t>("field size");
    if (kind == kFieldArray) {
      c.fields.push_back({std::move(name), r.f64s(count, "field data")});
    } else if (kind == kFieldText) {
      if (count > r.size() - r.pos()) r.need(count, "field data");
      c.fields.push_back({std::move(name), r.text(count, "field data")});
    } else {
      throw StoreError(ErrorKind::Malformed, origin, "field '" + name + "' has unknown kind " + std::to_string(kind));
    }
  }

  const auto payload_bytes = r.uint<std::uint64_t>("payload size");
  const std::uint64_t values = extent_product(c.extents);
  if (payload_bytes != values * sizeof(double)) {
    throw StoreError(ErrorKind::Malformed, origin,
                     "payload size " + std::to_string(payload_bytes) + " does not match extents (" +
                         std::to_string(values * sizeof(double)) + " bytes)");
  }
  if (payload_bytes > r.size() - r.pos()) {
    throw StoreError(ErrorKind::Truncated, origin,
                     "expected " + std::to_string(r.pos() + payload_bytes) + " bytes, file has " +
                         std::to_string(r.size()));
  }
  c.payload = r.f64s(values, "payload");
  if (r.pos() != r.size()) {
    throw StoreError(ErrorKind::Malformed, origin,
                     std::to_string(r.size() - r.pos()) + " trailing bytes after the payload");
  }
  for (std::size_t i = 0; i < c.payload.size(); ++i) {
    if (!std::isfinite(c.payload[i])) {
      throw StoreError(ErrorKind::NonFinite, origin, "payload value " + std::to_string(i) + " is not finite");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// files

void write_bytes_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp" + std::to_string(rd());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw StoreError(ErrorKind::Io, path, "cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw StoreError(ErrorKind::Io, path, "write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw StoreError(ErrorKind::Io, path, "rename failed: " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, std::string_view text) {
  write_bytes_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StoreError(ErrorKind::Io, path, "cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (is.bad()) throw StoreError(ErrorKind::Io, path, "read failed");
  return bytes;
}

void write_container(const fs::path& path, const Container& c) { write_bytes_atomic(path, encode(c)); }

Container read_container(const fs::path& path) { return decode(read_bytes(path), path); }

std::string digest(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path sidecar_path(const fs::path& path) { return path.string() + ".txt"; }

// ---------------------------------------------------------------------------
// datasets

namespace {

std::string shape_text(const std::vector<std::size_t>& spatial) {
  std::string s;
  for (std::size_t i = 0; i < spatial.size(); ++i) s += (i ? "x" : "") + std::to_string(spatial[i]);
  return s;
}

}  // namespace

void write_dataset(const pde::TrajectorySet& ts, const fs::path& path) {
  try {
    ts.validate();
  } catch (const std::invalid_argument& e) {
    throw StoreError(ErrorKind::Malformed, path, e.what());
  }
  Container c;
  c.extents = {ts.n_traj, ts.n_times()};
  for (auto e : ts.spatial) c.extents.push_back(e);
  const std::string spec = ts.spec.to_text();
  c.set("kind", std::string("trajectories"));
  c.set("spec", spec);
  c.set("spec_digest", digest(spec));
  c.set("times", ts.times);
  c.set("spatial_lengths", std::vector<double>(ts.spatial.size(), ts.spec.length));
  c.payload = ts.data;
  write_container(path, c);

  std::ostringstream side;
  side << "format=MNO1\nversion=" << kVersion << "\nkind=trajectories\nn_traj=" << ts.n_traj
       << "\nn_times=" << ts.n_times() << "\nspatial=" << shape_text(ts.spatial)
       << "\npayload_bytes=" << ts.data.size() * sizeof(double) << "\nspec_digest=" << digest(spec) << '\n'
       << spec;
  write_text_atomic(sidecar_path(path), side.str());
}

pde::TrajectorySet read_dataset(const fs::path& path) {
  Container c = read_container(path);
  auto malformed = [&](const std::string& what) { return StoreError(ErrorKind::Malformed, path, what); };
  try {
    if (c.text("kind") != "trajectories") throw malformed("not a trajectory container (kind=" + c.text("kind") + ")");
    if (c.extents.size() != 3 && c.extents.size() != 4) {
      throw malformed("trajectory containers have rank 3 or 4, got " + std::to_string(c.extents.size()));
    }
    const std::string& spec = c.text("spec");
    if (digest(spec) != c.text("spec_digest")) throw malformed("spec digest mismatch");
    pde::TrajectorySet ts;
    try {
      ts.spec = pde::SolverSpec::from_text(spec);
    } catch (const std::invalid_argument& e) {
      throw malformed(e.what());
    }
    ts.n_traj = c.extents[0];
    ts.times = c.array("times");
    if (ts.times.size() != c.extents[1]) throw malformed("time grid length does not match extents");
    ts.spatial.assign(c.extents.begin() + 2, c.extents.end());
    ts.data = std::move(c.payload);
    try {
      ts.validate();
    } catch (const std::invalid_argument& e) {
      throw malformed(e.what());
    }
    return ts;
  } catch (const StoreError& e) {
    if (e.path().empty()) throw StoreError(e.kind(), path, e.detail());
    throw;
  }
}

// ---------------------------------------------------------------------------
// checkpoints

nn::MemNO Checkpoint::model() const {
  nn::MemNO m(config, resolution, length, 0);
  m.set_parameters(parameters);
  return m;
}

void write_checkpoint(const fs::path& path, const nn::MemNO& model, const std::string& notes) {
  Container c;
  c.payload = model.flat_parameters();
  c.extents = {c.payload.size()};
  c.set("kind", std::string("checkpoint"));
  c.set("config", model.config().to_text());
  c.set("resolution", std::vector<double>{static_cast<double>(model.resolution())});
  c.set("length", std::vector<double>{model.length()});
  std::string names;
  for (const auto& n : model.parameter_names()) names += n + '\n';
  c.set("parameter_names", names);
  c.set("notes", notes);
  write_container(path, c);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const Container c = read_container(path);
  auto malformed = [&](const std::string& what) { return StoreError(ErrorKind::Malformed, path, what); };
  try {
    if (c.text("kind") != "checkpoint") throw malformed("not a checkpoint (kind=" + c.text("kind") + ")");
    Checkpoint ck;
    try {
      ck.config = nn::ModelConfig::from_text(c.text("config"));
      ck.config.validate();
    } catch (const std::invalid_argument& e) {
      throw malformed(e.what());
    }
    const auto& res = c.array("resolution");
    const auto& len = c.array("length");
    if (res.size() != 1 || len.size() != 1 || !(res[0] >= 2) || !(len[0] > 0)) throw malformed("bad grid fields");
    ck.resolution = static_cast<std::size_t>(res[0]);
    ck.length = len[0];
    ck.parameters = c.payload;
    ck.notes = c.has("notes") ? c.text("notes") : std::string();
    const nn::MemNO probe(ck.config, ck.resolution, ck.length, 0);
    std::string names;
    for (const auto& n : probe.parameter_names()) names += n + '\n';
    if (names != c.text("parameter_names") || probe.parameter_count() != ck.parameters.size()) {
      throw malformed("parameter layout does not match the stored configuration");
    }
    return ck;
  } catch (const StoreError& e) {
    if (e.path().empty()) throw StoreError(e.kind(), path, e.detail());
    throw;
  }
}

}  // namespace memno::store
