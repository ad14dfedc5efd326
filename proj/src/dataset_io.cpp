#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lanebev/binary_io.hpp"
#include "lanebev/errors.hpp"
#include "lanebev/scenegen.hpp"

namespace lanebev {

namespace binio {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace binio

namespace {

constexpr char kManifestHeader[] = "lanebev-dataset";
constexpr int kManifestVersion = 1;
constexpr char kRecordMagic[4] = {'L', 'B', 'V', 'S'};
constexpr std::uint32_t kRecordVersion = 1;

std::string record_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.bin", i);
  return buf;
}

std::vector<std::uint8_t> encode(const Sample& s) {
  binio::Writer w;
  w.raw(kRecordMagic, 4);
  w.u32(kRecordVersion);
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  for (double v : {s.cam.fx, s.cam.fy, s.cam.cx, s.cam.cy, s.cam.cam_height, s.cam.pitch}) w.f64(v);
  w.f64(s.depth.d_min);
  w.f64(s.depth.d_max);
  w.u32(static_cast<std::uint32_t>(s.depth.bins));
  w.u8(s.depth.mode == DepthBinMode::uniform ? 0 : 1);
  for (float v : s.image) w.f32(v);
  for (std::uint16_t v : s.depth_bin) w.u16(v);
  for (std::uint8_t v : s.ignore) w.u8(v);
  w.u32(static_cast<std::uint32_t>(s.lanes.size()));
  for (const Polyline& lane : s.lanes) {
    w.u32(static_cast<std::uint32_t>(lane.size()));
    for (const Point3D& p : lane) {
      w.f64(p.x);
      w.f64(p.y);
      w.f64(p.z);
    }
  }
  return w.bytes();
}

Sample decode(std::vector<std::uint8_t> bytes, const std::string& origin) {
  binio::Reader r(std::move(bytes));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kRecordMagic, 4) != 0) throw FormatError(origin + ": bad sample magic");
  const std::uint32_t version = r.u32();
  if (version != kRecordVersion) {
    throw FormatError(origin + ": unsupported sample version " + std::to_string(version));
  }
  Sample s;
  s.height = static_cast<int>(r.u32());
  s.width = static_cast<int>(r.u32());
  s.cam.fx = r.f64();
  s.cam.fy = r.f64();
  s.cam.cx = r.f64();
  s.cam.cy = r.f64();
  s.cam.cam_height = r.f64();
  s.cam.pitch = r.f64();
  s.depth.d_min = r.f64();
  s.depth.d_max = r.f64();
  s.depth.bins = static_cast<int>(r.u32());
  s.depth.mode = r.u8() == 0 ? DepthBinMode::uniform : DepthBinMode::log_spaced;
  const std::size_t px = static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width);
  s.image.resize(px * 3);
  for (float& v : s.image) v = r.f32();
  s.depth_bin.resize(px);
  for (std::uint16_t& v : s.depth_bin) v = r.u16();
  s.ignore.resize(px);
  for (std::uint8_t& v : s.ignore) v = r.u8();
  s.lanes.resize(r.u32());
  for (Polyline& lane : s.lanes) {
    lane.resize(r.u32());
    for (Point3D& p : lane) {
      p.x = r.f64();
      p.y = r.f64();
      p.z = r.f64();
    }
  }
  if (!r.at_end()) throw FormatError(origin + ": trailing bytes in sample record");
  return s;
}

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << kManifestHeader << ' ' << kManifestVersion << '\n';
  manifest << "samples " << samples.size() << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = record_name(i);
    binio::write_file((dir / name).string(), encode(samples[i]));
    manifest << name << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.str();
  if (!out) throw IoError("manifest write failed in " + dir.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("cannot open manifest in " + dir.string());
  std::string header;
  int version = 0;
  if (!(in >> header >> version) || header != kManifestHeader) {
    throw FormatError(dir.string() + ": not a dataset manifest");
  }
  if (version != kManifestVersion) {
    throw FormatError(dir.string() + ": unsupported dataset version " + std::to_string(version));
  }
  std::string key;
  std::size_t count = 0;
  if (!(in >> key >> count) || key != "samples") throw FormatError(dir.string() + ": bad manifest");
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!(in >> name)) throw FormatError(dir.string() + ": manifest lists too few samples");
    const std::string path = (dir / name).string();
    samples.push_back(decode(binio::read_file(path), path));
  }
  return samples;
}

}  // namespace lanebev
