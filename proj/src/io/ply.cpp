#include "tunnelrec/io/ply.hpp"

#include "tunnelrec/core/error.hpp"

#include <fmt/format.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>
#include <string>

namespace tunnelrec {

namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY output assumes little endian");

// Wide enough for any 64-bit count; the padding is trailing whitespace on the
// header line, which PLY readers ignore.
constexpr int kCountWidth = 20;

}  // namespace

PlyWriter::PlyWriter(const std::filesystem::path& path, PlyFormat format)
    : path_(path), out_(path, std::ios::binary), format_(format) {
  if (!out_) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out_ << "ply\n"
       << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
       << "element vertex ";
  count_pos_ = out_.tellp();
  out_ << std::string(kCountWidth, ' ') << "\n"
       << "property float x\nproperty float y\nproperty float z\n"
       << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
       << "end_header\n";
}

PlyWriter::~PlyWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void PlyWriter::add(const PlyVertex& v) {
  if (format_ == PlyFormat::Ascii) {
    out_ << fmt::format("{} {} {} {} {} {}\n", v.position[0], v.position[1], v.position[2],
                        v.color[0], v.color[1], v.color[2]);
  } else {
    char buf[15];
    std::memcpy(buf, v.position.data(), 12);
    std::memcpy(buf + 12, v.color.data(), 3);
    out_.write(buf, sizeof buf);
  }
  ++count_;
}

void PlyWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(count_pos_);
  const std::string n = std::to_string(count_);
  out_.write(n.data(), static_cast<std::streamsize>(n.size()));
  out_.close();
  if (!out_) throw IoError(fmt::format("error writing '{}'", path_.string()));
}

void write_ply(const std::filesystem::path& path, const std::vector<PlyVertex>& vertices,
               PlyFormat format) {
  PlyWriter w(path, format);
  for (const auto& v : vertices) w.add(v);
  w.close();
}

namespace {

enum class Type { Char, UChar, Short, UShort, Int, UInt, Float, Double };

Type parse_type(const std::string& s) {
  if (s == "char" || s == "int8") return Type::Char;
  if (s == "uchar" || s == "uint8") return Type::UChar;
  if (s == "short" || s == "int16") return Type::Short;
  if (s == "ushort" || s == "uint16") return Type::UShort;
  if (s == "int" || s == "int32") return Type::Int;
  if (s == "uint" || s == "uint32") return Type::UInt;
  if (s == "float" || s == "float32") return Type::Float;
  if (s == "double" || s == "float64") return Type::Double;
  throw IoError(fmt::format("unsupported PLY property type '{}'", s));
}

int type_size(Type t) {
  switch (t) {
    case Type::Char:
    case Type::UChar: return 1;
    case Type::Short:
    case Type::UShort: return 2;
    case Type::Int:
    case Type::UInt:
    case Type::Float: return 4;
    case Type::Double: return 8;
  }
  return 0;
}

template <class T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

double load_as_double(Type t, const char* p) {
  switch (t) {
    case Type::Char: return load<std::int8_t>(p);
    case Type::UChar: return load<std::uint8_t>(p);
    case Type::Short: return load<std::int16_t>(p);
    case Type::UShort: return load<std::uint16_t>(p);
    case Type::Int: return load<std::int32_t>(p);
    case Type::UInt: return load<std::uint32_t>(p);
    case Type::Float: return load<float>(p);
    case Type::Double: return load<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  Type type;
};

}  // namespace

std::vector<PlyVertex> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "ply") {
    throw IoError(fmt::format("'{}' is not a PLY file", path.string()));
  }
  bool ascii = false;
  std::uint64_t count = 0;
  std::vector<Property> props;
  bool in_vertex = false, seen_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end_header") break;
    if (key == "format") {
      std::string fmt_name;
      ss >> fmt_name;
      if (fmt_name == "ascii") {
        ascii = true;
      } else if (fmt_name != "binary_little_endian") {
        throw IoError(fmt::format("unsupported PLY format '{}'", fmt_name));
      }
    } else if (key == "element") {
      std::string name;
      ss >> name;
      if (seen_vertex && name != "vertex") break;  // later elements are ignored
      in_vertex = name == "vertex";
      if (in_vertex) {
        ss >> count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw IoError("PLY elements before the vertex element are not supported");
      }
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ss >> type;
      if (type == "list") throw IoError("list properties on vertices are not supported");
      ss >> name;
      props.push_back({name, parse_type(type)});
    }
  }
  if (!in) throw IoError(fmt::format("truncated PLY header in '{}'", path.string()));
  // Skip any remaining header lines when we broke out early.
  while (line != "end_header" && std::getline(in, line)) {
  }

  auto slot = [](const std::string& name) -> int {
    if (name == "x") return 0;
    if (name == "y") return 1;
    if (name == "z") return 2;
    if (name == "red" || name == "r") return 3;
    if (name == "green" || name == "g") return 4;
    if (name == "blue" || name == "b") return 5;
    return -1;
  };
  std::vector<int> slots;
  std::size_t stride = 0;
  for (const auto& p : props) {
    slots.push_back(slot(p.name));
    stride += type_size(p.type);
  }

  std::vector<PlyVertex> out(count);
  std::vector<char> buf(stride);
  for (std::uint64_t i = 0; i < count; ++i) {
    PlyVertex& v = out[i];
    if (ascii) {
      for (std::size_t k = 0; k < props.size(); ++k) {
        std::string token;
        if (!(in >> token)) throw IoError(fmt::format("truncated PLY body in '{}'", path.string()));
        const int s = slots[k];
        if (s < 0) continue;
        // Parse straight to float so shortest-form output round trips exactly.
        float fv = 0.0f;
        int iv = 0;
        const char* b = token.data();
        const char* e = b + token.size();
        const bool ok = s < 3 ? std::from_chars(b, e, fv).ec == std::errc()
                              : std::from_chars(b, e, iv).ec == std::errc();
        if (!ok) throw IoError(fmt::format("bad PLY value '{}' in '{}'", token, path.string()));
        if (s < 3) {
          v.position[s] = fv;
        } else {
          v.color[s - 3] = static_cast<std::uint8_t>(iv);
        }
      }
    } else {
      if (!in.read(buf.data(), static_cast<std::streamsize>(stride))) {
        throw IoError(fmt::format("truncated PLY body in '{}'", path.string()));
      }
      const char* p = buf.data();
      for (std::size_t k = 0; k < props.size(); ++k) {
        const int s = slots[k];
        if (s >= 0 && s < 3) {
          v.position[s] = props[k].type == Type::Float
                              ? load<float>(p)
                              : static_cast<float>(load_as_double(props[k].type, p));
        } else if (s >= 3) {
          v.color[s - 3] = static_cast<std::uint8_t>(load_as_double(props[k].type, p));
        }
        p += type_size(props[k].type);
      }
    }
  }
  return out;
}

}  // namespace tunnelrec
