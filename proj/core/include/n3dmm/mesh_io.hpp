#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <array>
#include <cstdint>

#include "n3dmm/mesh.hpp"

namespace n3dmm {

enum class MeshFormat { obj, ply };

enum class PlyEncoding { ascii, binary_little_endian };

using Rgb = std::array<std::uint8_t, 3>;

// Format inferred from the extension when not given. The result is checked
// with validate_mesh.
Mesh load_mesh(const std::filesystem::path& path, std::optional<MeshFormat> format = std::nullopt);

Mesh parse_obj(const std::string& text, const std::string& name = {});
Mesh parse_ply(const std::string& bytes, const std::string& name = {});

// Binary output stores positions as float64 and round-trips bit-exactly.
// ASCII output prints max_digits10 significant digits.
void save_ply(const std::filesystem::path& path, const Mesh& mesh,
              PlyEncoding encoding = PlyEncoding::binary_little_endian,
              std::span<const Rgb> colors = {});
void save_obj(const std::filesystem::path& path, const Mesh& mesh);

}  // namespace n3dmm
