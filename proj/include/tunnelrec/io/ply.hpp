#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace tunnelrec {

struct PlyVertex {
  std::array<float, 3> position{};
  std::array<std::uint8_t, 3> color{};
  bool operator==(const PlyVertex&) const = default;
};

enum class PlyFormat { BinaryLittleEndian, Ascii };

/// Streams vertices to a PLY file with properties `float x y z` and
/// `uchar red green blue`. The vertex count is patched into the header on
/// close(), so the total need not be known up front.
class PlyWriter {
 public:
  PlyWriter(const std::filesystem::path& path, PlyFormat format = PlyFormat::BinaryLittleEndian);
  ~PlyWriter();
  PlyWriter(const PlyWriter&) = delete;
  PlyWriter& operator=(const PlyWriter&) = delete;

  void add(const PlyVertex& v);
  /// Finalizes the header. Throws IoError if any write failed.
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  PlyFormat format_;
  std::streampos count_pos_{};
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

void write_ply(const std::filesystem::path& path, const std::vector<PlyVertex>& vertices,
               PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Reads the vertex element of an ascii or binary little-endian PLY file.
/// x, y, z may be float or double and the colors uchar; other vertex
/// properties are skipped. Missing colors read as zero.
std::vector<PlyVertex> read_ply(const std::filesystem::path& path);

}  // namespace tunnelrec
