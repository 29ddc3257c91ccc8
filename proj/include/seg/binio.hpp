#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include <json.hpp>

namespace seg::binio {

// All three container formats share the same framing:
//   magic (4 bytes) | version u32 LE | header length u32 LE | JSON header |
//   binary payload.
// Numeric payloads are little-endian f32 regardless of host order.

std::ofstream open_output(const std::filesystem::path& path);
std::ifstream open_input(const std::filesystem::path& path);

void write_u32le(std::ostream& out, std::uint32_t value);
std::uint32_t read_u32le(std::istream& in, const std::string& what);

void write_header(std::ostream& out, const char magic[4], std::uint32_t version,
                  const nlohmann::json& header);

// Checks magic and version, returns the parsed JSON header.
nlohmann::json read_header(std::istream& in, const char magic[4],
                           std::uint32_t expected_version,
                           const std::string& what);

// f64 values are narrowed to f32 on write and widened back on read.
void write_f32_block(std::ostream& out, std::span<const double> values);
void read_f32_block(std::istream& in, std::span<double> values,
                    const std::string& what);

void write_bytes(std::ostream& out, std::span<const std::uint8_t> bytes);
void read_bytes(std::istream& in, std::span<std::uint8_t> bytes,
                const std::string& what);

}  // namespace seg::binio
