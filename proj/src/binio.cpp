#include "seg/binio.hpp"

#include <bit>
#include <cstring>
#include <vector>

#include "seg/error.hpp"

namespace seg::binio {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0x000000FFu) << 24) | ((v & 0x0000FF00u) << 8) |
           ((v & 0x00FF0000u) >> 8) | ((v & 0xFF000000u) >> 24);
  }
  return v;
}

std::uint32_t f32_bits_le(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  return to_le(bits);
}

float f32_from_bits_le(std::uint32_t bits) {
  bits = to_le(bits);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

}  // namespace

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open for reading: " + path.string());
  return in;
}

void write_u32le(std::ostream& out, std::uint32_t value) {
  const std::uint32_t le = to_le(value);
  out.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

std::uint32_t read_u32le(std::istream& in, const std::string& what) {
  std::uint32_t le = 0;
  in.read(reinterpret_cast<char*>(&le), sizeof(le));
  require(in.good(), ErrorKind::Io, "truncated file while reading " + what);
  return to_le(le);
}

void write_header(std::ostream& out, const char magic[4], std::uint32_t version,
                  const nlohmann::json& header) {
  out.write(magic, 4);
  write_u32le(out, version);
  const std::string text = header.dump();
  write_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(out.good(), ErrorKind::Io, "failed writing file header");
}

nlohmann::json read_header(std::istream& in, const char magic[4],
                           std::uint32_t expected_version,
                           const std::string& what) {
  char found[4] = {};
  in.read(found, 4);
  require(in.good() && std::memcmp(found, magic, 4) == 0, ErrorKind::Io,
          "bad magic, not a " + what + " file");
  const std::uint32_t version = read_u32le(in, what + " version");
  require(version == expected_version, ErrorKind::Io,
          "unsupported " + what + " version " + std::to_string(version));
  const std::uint32_t length = read_u32le(in, what + " header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  require(in.good(), ErrorKind::Io, "truncated " + what + " header");
  nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  require(!header.is_discarded(), ErrorKind::Io, "malformed " + what + " header");
  return header;
}

void write_f32_block(std::ostream& out, std::span<const double> values) {
  std::vector<std::uint32_t> packed(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    packed[i] = f32_bits_le(static_cast<float>(values[i]));
  }
  out.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size() * sizeof(std::uint32_t)));
  require(out.good(), ErrorKind::Io, "failed writing f32 block");
}

void read_f32_block(std::istream& in, std::span<double> values,
                    const std::string& what) {
  std::vector<std::uint32_t> packed(values.size());
  in.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed.size() * sizeof(std::uint32_t)));
  require(in.good(), ErrorKind::Io, "truncated f32 block in " + what);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<double>(f32_from_bits_le(packed[i]));
  }
}

void write_bytes(std::ostream& out, std::span<const std::uint8_t> bytes) {
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::Io, "failed writing byte block");
}

void read_bytes(std::istream& in, std::span<std::uint8_t> bytes,
                const std::string& what) {
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  require(in.good(), ErrorKind::Io, "truncated byte block in " + what);
}

}  // namespace seg::binio
