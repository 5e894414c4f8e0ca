#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ufen/core.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/tensor.hpp"
#include "ufen/tensor_heads.hpp"
#include "ufen/trajectory_eval.hpp"

// File formats:
//   .uft   "UFT" 0x01 | rank u32 LE | dims u32 LE x rank | f32 LE payload, row-major
//   .ppm   binary P6, 8-bit
//   .csv   keypoints "x,y,score"
//   .bin   packed descriptors, 32 bytes per record, bit k in byte k/8 at k%8
//   .txt   homography, 9 numbers on one row
//   TUM    "t x y z qx qy qz qw", '#' comments

namespace ufen::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temporary file, then renames over the target.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Data, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Data, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorKind::Data, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Tensor container
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string out = "UFT";
  out.push_back('\x01');
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.dims()) {
    require(d <= std::numeric_limits<std::uint32_t>::max(), ErrorKind::Data, "tensor dimension too large");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Tensor decode_tensor(const std::string& bytes) {
  require(bytes.size() >= 8 && bytes.compare(0, 3, "UFT") == 0, ErrorKind::Data, "not a UFT tensor container");
  require(bytes[3] == '\x01', ErrorKind::Data, "unsupported UFT version");
  const std::uint32_t rank = detail::get_u32(bytes, 4);
  require(rank >= 1 && rank <= 4, ErrorKind::Data, "UFT rank must be 1..4");
  require(bytes.size() >= 8 + 4 * rank, ErrorKind::Data, "truncated UFT header");
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = detail::get_u32(bytes, 8 + 4 * i);
    count *= dims[i];
  }
  const std::size_t start = 8 + 4 * rank;
  require(bytes.size() == start + 4 * count, ErrorKind::Data, "UFT payload length does not match its dimensions");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(detail::get_u32(bytes, start + 4 * i));
  return Tensor(std::move(dims), std::move(data));
}

inline Tensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path)); }
inline void write_tensor(const fs::path& path, const Tensor& t) { write_file_atomic(path, encode_tensor(t)); }

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

inline Tensor decode_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  auto next_token = [&in]() {
    std::string tok;
    while (in >> std::ws && in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
    }
    in >> tok;
    return tok;
  };
  require(next_token() == "P6", ErrorKind::Data, "only binary P6 PPM images are supported");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw Error(ErrorKind::Data, "malformed PPM header");
  }
  require(maxval == 255, ErrorKind::Data, "only 8-bit PPM images are supported");
  require(w > 0 && h > 0, ErrorKind::Data, "PPM image is empty");
  in.get();  // single whitespace after maxval
  const std::size_t start = static_cast<std::size_t>(in.tellg());
  require(bytes.size() >= start + w * h * 3, ErrorKind::Data, "truncated PPM payload");
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) img[i] = static_cast<unsigned char>(bytes[start + i]) / 255.0;
  return img;
}

inline std::string encode_ppm(const Tensor& img) {
  require(img.rank() == 3 && img.dim(2) == 3, ErrorKind::Data, "PPM output needs an H x W x 3 image");
  std::string out = "P6\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
  for (double v : img.data()) out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline Tensor read_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }
inline void write_ppm(const fs::path& path, const Tensor& img) { write_file_atomic(path, encode_ppm(img)); }

// ---------------------------------------------------------------------------
// Keypoints, descriptors, homographies
// ---------------------------------------------------------------------------

inline std::string encode_keypoints(std::span<const heads::Keypoint> kps) {
  std::ostringstream os;
  os << std::setprecision(17) << "x,y,score\n";
  for (const auto& k : kps) os << k.x << ',' << k.y << ',' << k.score << '\n';
  return os.str();
}

inline std::vector<heads::Keypoint> decode_keypoints(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<heads::Keypoint> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.rfind("x,", 0) == 0) continue;
    heads::Keypoint k;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    ls >> k.x >> c1 >> k.y >> c2 >> k.score;
    require(!ls.fail() && c1 == ',' && c2 == ',', ErrorKind::Data,
            "malformed keypoint row " + std::to_string(lineno) + ": " + line);
    out.push_back(k);
  }
  return out;
}

inline std::vector<heads::Keypoint> read_keypoints(const fs::path& p) { return decode_keypoints(read_file(p)); }
inline void write_keypoints(const fs::path& p, std::span<const heads::Keypoint> k) {
  write_file_atomic(p, encode_keypoints(k));
}

inline std::string encode_descriptors(std::span<const heads::BinaryDescriptor> d) {
  std::string out;
  out.reserve(d.size() * heads::BinaryDescriptor::kBytes);
  for (const auto& rec : d)
    for (std::uint8_t b : rec.to_bytes()) out.push_back(static_cast<char>(b));
  return out;
}

inline std::vector<heads::BinaryDescriptor> decode_descriptors(const std::string& bytes) {
  constexpr std::size_t n = heads::BinaryDescriptor::kBytes;
  require(bytes.size() % n == 0, ErrorKind::Data, "descriptor file is not a whole number of 32-byte records");
  std::vector<heads::BinaryDescriptor> out(bytes.size() / n);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = heads::BinaryDescriptor::from_bytes(
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data() + i * n), n));
  return out;
}

inline std::vector<heads::BinaryDescriptor> read_descriptors(const fs::path& p) { return decode_descriptors(read_file(p)); }
inline void write_descriptors(const fs::path& p, std::span<const heads::BinaryDescriptor> d) {
  write_file_atomic(p, encode_descriptors(d));
}

inline std::string encode_homography(const geometry::Homography& h) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto r = h.rows();
  for (std::size_t i = 0; i < r.size(); ++i) os << (i ? " " : "") << r[i];
  os << '\n';
  return os.str();
}

inline geometry::Homography decode_homography(const std::string& text) {
  std::istringstream in(text);
  std::array<double, 9> v{};
  for (double& x : v) require(static_cast<bool>(in >> x), ErrorKind::Data, "homography needs 9 numbers");
  return geometry::Homography::from_rows(v);
}

// ---------------------------------------------------------------------------
// TUM trajectories
// ---------------------------------------------------------------------------

inline trajectory::Trajectory decode_tum(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  trajectory::Trajectory traj;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double t, x, y, z, qx, qy, qz, qw;
    ls >> t >> x >> y >> z;
    require(!ls.fail(), ErrorKind::Data, "malformed TUM row " + std::to_string(lineno));
    trajectory::Sample s{t, {x, y, z}, std::nullopt};
    if (ls >> qx >> qy >> qz >> qw) s.q = Eigen::Quaterniond(qw, qx, qy, qz);
    traj.samples.push_back(s);
  }
  traj.validate();
  return traj;
}

inline std::string encode_tum(const trajectory::Trajectory& traj) {
  std::ostringstream os;
  os << std::setprecision(17) << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& s : traj.samples) {
    const Eigen::Quaterniond q = s.q.value_or(Eigen::Quaterniond::Identity());
    os << s.t << ' ' << s.p.x() << ' ' << s.p.y() << ' ' << s.p.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z()
       << ' ' << q.w() << '\n';
  }
  return os.str();
}

inline trajectory::Trajectory read_tum(const fs::path& p) { return decode_tum(read_file(p)); }
inline void write_tum(const fs::path& p, const trajectory::Trajectory& t) { write_file_atomic(p, encode_tum(t)); }

}  // namespace ufen::io
