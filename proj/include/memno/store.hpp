#pragma once

// Flat binary container ("MNO1") for trajectory stacks and parameter
// checkpoints, plus atomic text output for sidecars and run metadata.
//
// Layout, little-endian throughout:
//   "MNO1" | u16 version | u16 element type (1 = f64) | u32 rank | u64 extents[rank]
//   | u32 field count | fields | u64 payload bytes | f64 payload
// Each field: u16 name length | name | u8 kind (1 = f64 array, 2 = text)
//   | u64 count (elements or bytes) | data.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "memno/neural.hpp"
#include "memno/pde.hpp"

namespace memno::store {

inline constexpr char kMagic[4] = {'M', 'N', 'O', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kTypeF64 = 1;

enum class ErrorKind { Io, BadMagic, UnsupportedVersion, UnsupportedType, Truncated, NonFinite, Malformed };
std::string to_string(ErrorKind kind);

class StoreError : public std::runtime_error {
 public:
  StoreError(ErrorKind kind, const std::filesystem::path& path, const std::string& detail);
  ErrorKind kind() const { return kind_; }
  const std::filesystem::path& path() const { return path_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::filesystem::path path_;
  std::string detail_;
};

struct Field {
  std::string name;
  std::variant<std::vector<double>, std::string> value;
};

struct Container {
  std::vector<std::uint64_t> extents;
  std::vector<Field> fields;
  std::vector<double> payload;

  bool has(std::string_view name) const;
  // Throw StoreError(Malformed) when missing or of the other kind.
  const std::string& text(std::string_view name) const;
  const std::vector<double>& array(std::string_view name) const;
  void set(std::string name, std::string text);
  void set(std::string name, std::vector<double> values);
};

std::vector<std::uint8_t> encode(const Container& c);
// `origin` only labels errors.
Container decode(std::span<const std::uint8_t> bytes, const std::filesystem::path& origin = {});

// Temp file in the same directory, then rename.
void write_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// FNV-1a, 64 bit, rendered as 16 hex digits.
std::string digest(std::string_view text);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

// Container plus `<path>.txt` holding the solver spec and extents.
void write_dataset(const pde::TrajectorySet& ts, const std::filesystem::path& path);
pde::TrajectorySet read_dataset(const std::filesystem::path& path);

struct Checkpoint {
  nn::ModelConfig config;
  std::size_t resolution = 0;
  double length = 0.0;
  std::vector<double> parameters;
  std::string notes;  // free text, e.g. the training configuration

  nn::MemNO model() const;
};

void write_checkpoint(const std::filesystem::path& path, const nn::MemNO& model, const std::string& notes = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace memno::store
