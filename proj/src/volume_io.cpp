#include "coroseg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

namespace coroseg {
namespace fs = std::filesystem;

namespace {

enum class DType { U8, I8, I16, U16, I32, U32, F32, F64 };

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8:
    case DType::I8: return 1;
    case DType::I16:
    case DType::U16: return 2;
    case DType::I32:
    case DType::U32:
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  return 0;
}

/// Decoded file contents before conversion to a typed grid.
struct RawGrid {
  Dims dims;
  Spacing spacing;
  DType type = DType::F32;
  bool swap_bytes = false;
  double slope = 1.0;
  double inter = 0.0;
  std::vector<char> bytes;  // exactly dims.count() * dtype_size(type)
};

template <typename T>
T byteswapped(T v) {
  auto raw = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(raw.begin(), raw.end());
  return std::bit_cast<T>(raw);
}

template <typename T>
T read_scalar(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return swap ? byteswapped(v) : v;
}

template <typename T>
void write_scalar(char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

double element_as_double(const RawGrid& raw, std::int64_t i) {
  const char* p = raw.bytes.data() + i * dtype_size(raw.type);
  const bool s = raw.swap_bytes;
  switch (raw.type) {
    case DType::U8: return read_scalar<std::uint8_t>(p, false);
    case DType::I8: return read_scalar<std::int8_t>(p, false);
    case DType::I16: return read_scalar<std::int16_t>(p, s);
    case DType::U16: return read_scalar<std::uint16_t>(p, s);
    case DType::I32: return read_scalar<std::int32_t>(p, s);
    case DType::U32: return read_scalar<std::uint32_t>(p, s);
    case DType::F32: return read_scalar<float>(p, s);
    case DType::F64: return read_scalar<double>(p, s);
  }
  return 0.0;
}

/// NIfTI stores spacing as float32. The shortest decimal that round-trips the
/// float is parsed back as double, so 0.4 reads as 0.4 rather than 0.4000000059.
double float_to_decimal_double(float f) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), f);
  double d = 0.0;
  std::from_chars(buf, end, d);
  return d;
}

std::vector<char> read_file_bytes(const fs::path& path) {
  if (!fs::exists(path)) throw FileNotFound("no such file: " + path.string());
  // gzread transparently passes through uncompressed input.
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IOError("cannot open " + path.string());
  std::vector<char> out;
  std::vector<char> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      throw FormatError("corrupt compressed stream in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

void write_file_bytes(const fs::path& path, const std::vector<char>& bytes, bool gzip) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (gzip) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (f == nullptr) throw IOError("cannot write " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) {
      throw IOError("short write to " + path.string());
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IOError("short write to " + path.string());
}

std::vector<char> inflate_any(const char* data, std::size_t size) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
  zs.avail_in = static_cast<uInt>(size);
  std::vector<char> out;
  std::vector<char> chunk(1 << 20);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip payload");
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

void check_payload(const RawGrid& raw, const fs::path& path) {
  const auto want = static_cast<std::size_t>(raw.dims.count()) * dtype_size(raw.type);
  if (raw.bytes.size() < want) {
    throw FormatError(fmt::format("{}: payload has {} bytes, header implies {}", path.string(),
                                  raw.bytes.size(), want));
  }
}

// ---------------------------------------------------------------- NIfTI-1

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

DType nifti_dtype(std::int16_t code, const fs::path& path) {
  switch (code) {
    case 2: return DType::U8;
    case 4: return DType::I16;
    case 8: return DType::I32;
    case 16: return DType::F32;
    case 64: return DType::F64;
    case 256: return DType::I8;
    case 512: return DType::U16;
    case 768: return DType::U32;
    default: throw FormatError(fmt::format("{}: unsupported NIfTI datatype {}", path.string(), code));
  }
}

RawGrid read_nifti(const fs::path& path) {
  std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() < kNiftiHeaderSize) throw FormatError(path.string() + ": truncated NIfTI header");
  const char* h = bytes.data();

  RawGrid raw;
  const auto hdr_size = read_scalar<std::int32_t>(h, false);
  if (hdr_size == kNiftiHeaderSize) {
    raw.swap_bytes = false;
  } else if (byteswapped(hdr_size) == kNiftiHeaderSize) {
    raw.swap_bytes = true;
  } else {
    throw FormatError(path.string() + ": not a NIfTI-1 file (sizeof_hdr mismatch)");
  }
  if (std::memcmp(h + 344, "n+1", 3) != 0) {
    throw FormatError(path.string() + ": only single-file NIfTI-1 (n+1) is supported");
  }
  const bool sw = raw.swap_bytes;
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = read_scalar<std::int16_t>(h + 40 + 2 * i, sw);
  if (dim[0] < 3 || dim[0] > 7) throw FormatError(path.string() + ": unsupported dimensionality");
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) throw FormatError(path.string() + ": only 3D volumes are supported");
  }
  if (dim[1] <= 0 || dim[2] <= 0 || dim[3] <= 0) {
    throw FormatError(path.string() + ": non-positive dim in header");
  }
  raw.dims = {dim[1], dim[2], dim[3]};
  raw.type = nifti_dtype(read_scalar<std::int16_t>(h + 70, sw), path);
  raw.spacing = {float_to_decimal_double(read_scalar<float>(h + 80, sw)),
                 float_to_decimal_double(read_scalar<float>(h + 84, sw)),
                 float_to_decimal_double(read_scalar<float>(h + 88, sw))};
  const float slope = read_scalar<float>(h + 112, sw);
  const float inter = read_scalar<float>(h + 116, sw);
  if (slope != 0.0f && std::isfinite(slope)) raw.slope = slope;
  if (std::isfinite(inter)) raw.inter = inter;

  const auto vox_offset = static_cast<std::size_t>(read_scalar<float>(h + 108, sw));
  if (vox_offset < kNiftiHeaderSize || vox_offset > bytes.size()) {
    throw FormatError(path.string() + ": invalid vox_offset");
  }
  raw.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(vox_offset), bytes.end());
  check_payload(raw, path);
  raw.bytes.resize(static_cast<std::size_t>(raw.dims.count()) * dtype_size(raw.type));
  return raw;
}

template <typename T>
void write_nifti(const Grid3<T>& grid, const fs::path& path, bool gzip) {
  static_assert(std::endian::native == std::endian::little);
  constexpr bool is_float = std::is_same_v<T, float>;
  const std::size_t payload = static_cast<std::size_t>(grid.size()) * sizeof(T);
  std::vector<char> bytes(kNiftiVoxOffset + payload, 0);
  char* h = bytes.data();
  write_scalar<std::int32_t>(h, kNiftiHeaderSize);
  h[38] = 'r';
  const Dims& d = grid.dims();
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(d.nx), static_cast<std::int16_t>(d.ny),
                                        static_cast<std::int16_t>(d.nz), 1, 1, 1, 1};
  if (d.nx > 32767 || d.ny > 32767 || d.nz > 32767) {
    throw ValidationError("NIfTI-1 cannot store extents above 32767");
  }
  for (int i = 0; i < 8; ++i) write_scalar<std::int16_t>(h + 40 + 2 * i, dim[i]);
  write_scalar<std::int16_t>(h + 70, is_float ? 16 : 2);
  write_scalar<std::int16_t>(h + 72, is_float ? 32 : 8);
  const Spacing& s = grid.spacing();
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(s.sx), static_cast<float>(s.sy),
                                    static_cast<float>(s.sz), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) write_scalar<float>(h + 76 + 4 * i, pixdim[i]);
  write_scalar<float>(h + 108, static_cast<float>(kNiftiVoxOffset));
  write_scalar<float>(h + 112, 1.0f);
  write_scalar<float>(h + 116, 0.0f);
  h[123] = 2;  // xyzt_units: millimetres
  std::strncpy(h + 148, "coroseg", 80);
  write_scalar<std::int16_t>(h + 254, 1);  // sform_code: scanner
  write_scalar<float>(h + 280, pixdim[1]);
  write_scalar<float>(h + 296 + 4, pixdim[2]);
  write_scalar<float>(h + 312 + 8, pixdim[3]);
  std::memcpy(h + 344, "n+1\0", 4);
  std::memcpy(h + kNiftiVoxOffset, grid.values().data(), payload);
  write_file_bytes(path, bytes, gzip);
}

// ---------------------------------------------------------------- NRRD

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

DType nrrd_dtype(const std::string& t, const fs::path& path) {
  static const std::map<std::string, DType> table{
      {"uchar", DType::U8},          {"unsigned char", DType::U8}, {"uint8", DType::U8},
      {"uint8_t", DType::U8},        {"signed char", DType::I8},   {"int8", DType::I8},
      {"int8_t", DType::I8},         {"short", DType::I16},        {"short int", DType::I16},
      {"signed short", DType::I16},  {"int16", DType::I16},        {"int16_t", DType::I16},
      {"ushort", DType::U16},        {"unsigned short", DType::U16}, {"uint16", DType::U16},
      {"uint16_t", DType::U16},      {"int", DType::I32},          {"signed int", DType::I32},
      {"int32", DType::I32},         {"int32_t", DType::I32},      {"uint", DType::U32},
      {"unsigned int", DType::U32},  {"uint32", DType::U32},       {"uint32_t", DType::U32},
      {"float", DType::F32},         {"double", DType::F64}};
  const auto it = table.find(t);
  if (it == table.end()) throw FormatError(path.string() + ": unsupported NRRD type '" + t + "'");
  return it->second;
}

double parse_double(const std::string& s, const fs::path& path) {
  double v = 0.0;
  const char* b = s.data();
  const auto [p, ec] = std::from_chars(b, b + s.size(), v);
  if (ec != std::errc{}) throw FormatError(path.string() + ": bad number '" + s + "'");
  return v;
}

/// Parses "(a,b,c) (d,e,f) (g,h,i)" into per-axis vector norms.
std::array<double, 3> parse_space_directions(const std::string& value, const fs::path& path) {
  std::array<double, 3> norms{};
  std::size_t pos = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const auto open = value.find('(', pos);
    const auto close = value.find(')', open);
    if (open == std::string::npos || close == std::string::npos) {
      throw FormatError(path.string() + ": malformed space directions");
    }
    std::stringstream ss(value.substr(open + 1, close - open - 1));
    std::string comp;
    double sq = 0.0;
    while (std::getline(ss, comp, ',')) {
      const double c = parse_double(trim(comp), path);
      sq += c * c;
    }
    norms[axis] = std::sqrt(sq);
    pos = close + 1;
  }
  return norms;
}

RawGrid read_nrrd(const fs::path& path) {
  if (!fs::exists(path)) throw FileNotFound("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&]() -> std::optional<std::string> {
    if (pos >= bytes.size()) return std::nullopt;
    const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
    std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl);
    pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  const auto magic = next_line();
  if (!magic || magic->rfind("NRRD000", 0) != 0) throw FormatError(path.string() + ": missing NRRD magic");

  std::map<std::string, std::string> fields;
  for (;;) {
    const auto line = next_line();
    if (!line) throw FormatError(path.string() + ": header not terminated by a blank line");
    if (line->empty()) break;
    if ((*line)[0] == '#') continue;
    const auto colon = line->find(':');
    if (colon == std::string::npos) continue;
    std::string key = trim(line->substr(0, colon));
    std::string value = line->substr(colon + 1);
    if (!value.empty() && value[0] == '=') continue;  // key/value pair, not a field
    std::transform(key.begin(), key.end(), key.begin(), ::tolower);
    fields[key] = trim(value);
  }

  auto field = [&](const std::string& k) -> const std::string& {
    const auto it = fields.find(k);
    if (it == fields.end()) throw FormatError(path.string() + ": missing NRRD field '" + k + "'");
    return it->second;
  };

  if (fields.count("data file") || fields.count("datafile")) {
    throw FormatError(path.string() + ": detached NRRD data is not supported");
  }
  if (std::stoi(field("dimension")) != 3) throw FormatError(path.string() + ": only 3D NRRD supported");

  RawGrid raw;
  raw.type = nrrd_dtype(field("type"), path);
  {
    std::stringstream ss(field("sizes"));
    std::int64_t a = 0, b = 0, c = 0;
    if (!(ss >> a >> b >> c) || a <= 0 || b <= 0 || c <= 0) {
      throw FormatError(path.string() + ": bad sizes field");
    }
    raw.dims = {a, b, c};
  }
  if (fields.count("spacings")) {
    std::stringstream ss(fields["spacings"]);
    std::array<std::string, 3> tok;
    if (!(ss >> tok[0] >> tok[1] >> tok[2])) throw FormatError(path.string() + ": bad spacings field");
    raw.spacing = {parse_double(tok[0], path), parse_double(tok[1], path), parse_double(tok[2], path)};
  } else if (fields.count("space directions")) {
    const auto n = parse_space_directions(fields["space directions"], path);
    raw.spacing = {n[0], n[1], n[2]};
  } else {
    raw.spacing = {1.0, 1.0, 1.0};
  }
  if (fields.count("endian") && dtype_size(raw.type) > 1) {
    raw.swap_bytes = (fields["endian"] == "big") == (std::endian::native == std::endian::little);
  }

  const std::string encoding = field("encoding");
  const char* payload = bytes.data() + pos;
  const std::size_t payload_size = bytes.size() - pos;
  if (encoding == "raw") {
    raw.bytes.assign(payload, payload + payload_size);
  } else if (encoding == "gzip" || encoding == "gz") {
    raw.bytes = inflate_any(payload, payload_size);
  } else {
    throw FormatError(path.string() + ": unsupported NRRD encoding '" + encoding + "'");
  }
  check_payload(raw, path);
  raw.bytes.resize(static_cast<std::size_t>(raw.dims.count()) * dtype_size(raw.type));
  return raw;
}

template <typename T>
void write_nrrd(const Grid3<T>& grid, const fs::path& path) {
  static_assert(std::endian::native == std::endian::little);
  const Dims& d = grid.dims();
  const Spacing& s = grid.spacing();
  const std::string header = fmt::format(
      "NRRD0004\n"
      "# written by coroseg\n"
      "type: {}\n"
      "dimension: 3\n"
      "sizes: {} {} {}\n"
      "spacings: {:.17g} {:.17g} {:.17g}\n"
      "endian: little\n"
      "encoding: raw\n\n",
      std::is_same_v<T, float> ? "float" : "uint8", d.nx, d.ny, d.nz, s.sx, s.sy, s.sz);
  std::vector<char> bytes(header.begin(), header.end());
  const auto* p = reinterpret_cast<const char*>(grid.values().data());
  bytes.insert(bytes.end(), p, p + grid.size() * static_cast<std::int64_t>(sizeof(T)));
  write_file_bytes(path, bytes, false);
}

RawGrid read_raw(const fs::path& path) {
  switch (format_from_path(path)) {
    case VolumeFormat::Nifti:
    case VolumeFormat::NiftiGz: return read_nifti(path);
    case VolumeFormat::Nrrd: return read_nrrd(path);
  }
  throw FormatError("unreachable");
}

template <typename T>
void write_any(const Grid3<T>& grid, const fs::path& path) {
  switch (format_from_path(path)) {
    case VolumeFormat::Nifti: write_nifti(grid, path, false); break;
    case VolumeFormat::NiftiGz: write_nifti(grid, path, true); break;
    case VolumeFormat::Nrrd: write_nrrd(grid, path); break;
  }
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
  std::string name = path.filename().string();
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".nii.gz")) return VolumeFormat::NiftiGz;
  if (ends_with(".nii")) return VolumeFormat::Nifti;
  if (ends_with(".nrrd")) return VolumeFormat::Nrrd;
  throw FormatError("unrecognized volume extension: " + path.string());
}

Volume load_volume(const fs::path& path) {
  RawGrid raw = read_raw(path);
  validate_spacing(raw.spacing);
  std::vector<float> data(static_cast<std::size_t>(raw.dims.count()));
  const bool rescale = raw.slope != 1.0 || raw.inter != 0.0;
  if (raw.type == DType::F32 && !raw.swap_bytes && !rescale) {
    std::memcpy(data.data(), raw.bytes.data(), raw.bytes.size());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = element_as_double(raw, static_cast<std::int64_t>(i));
      data[i] = static_cast<float>(rescale ? v * raw.slope + raw.inter : v);
    }
  }
  Volume vol(raw.dims, raw.spacing, std::move(data));
  validate_volume(vol);
  return vol;
}

Mask load_mask(const fs::path& path) {
  RawGrid raw = read_raw(path);
  validate_spacing(raw.spacing);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(raw.dims.count()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = element_as_double(raw, static_cast<std::int64_t>(i));
    if (v != 0.0 && v != 1.0) {
      throw ValidationError(fmt::format("{}: label value {} at offset {} is not binary", path.string(), v, i));
    }
    data[i] = static_cast<std::uint8_t>(v);
  }
  return Mask(raw.dims, raw.spacing, std::move(data));
}

void save_volume(const Volume& volume, const fs::path& path) {
  validate_volume(volume);
  write_any(volume, path);
}

void save_mask(const Mask& mask, const fs::path& path) {
  validate_mask(mask);
  write_any(mask, path);
}

}  // namespace coroseg
