#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "core/fetch.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <httplib.h>

#include "core/common.hpp"
#include "core/sha256.hpp"

namespace fs = std::filesystem;

namespace bvo {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::Io, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(Err::Io, "read failed on " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Err::Io, "write failed on " + path);
}

std::string read_text_file(const std::string& path) {
  auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::Io, "cannot create " + path);
  out << text;
  if (!out) fail(Err::Io, "write failed on " + path);
}

std::vector<unsigned char> default_fetch(const std::string& url) {
  if (url.rfind("file://", 0) == 0) return read_file_bytes(url.substr(7));
  bool https = url.rfind("https://", 0) == 0;
  bool http = url.rfind("http://", 0) == 0;
  if (!https && !http) return read_file_bytes(url);  // bare filesystem path

  size_t host_start = https ? 8 : 7;
  size_t slash = url.find('/', host_start);
  std::string origin = url.substr(0, slash == std::string::npos ? url.size() : slash);
  std::string path = slash == std::string::npos ? "/" : url.substr(slash);

  httplib::Client cli(origin);
  cli.set_follow_location(true);
  cli.set_connection_timeout(30, 0);
  cli.set_read_timeout(120, 0);
  auto res = cli.Get(path);
  if (!res)
    fail(Err::Fetch, "no response from " + origin + " (" + httplib::to_string(res.error()) +
                         ") fetching " + url);
  if (res->status != 200)
    fail(Err::Fetch, "HTTP " + std::to_string(res->status) + " fetching " + url);
  return std::vector<unsigned char>(res->body.begin(), res->body.end());
}

namespace {

bool is_hex64(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s)
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// flock-based exclusive lock held for the duration of a cache mutation.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fd_ = ::open((dir / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) fail(Err::Io, "cannot open lock file in " + dir.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      fail(Err::Io, "cannot lock cache directory " + dir.string());
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

std::string fetch_with_cache(const std::string& url, const std::string& cache_dir,
                             const std::string& expected_sha256, const FetchFn& fetch) {
  std::string want = lower(expected_sha256);
  if (!is_hex64(want))
    fail(Err::InvalidArgument, "expected_sha256 must be 64 hex chars, got '" + expected_sha256 +
                                   "'");
  fs::path dir(cache_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Err::Io, "cannot create cache directory " + cache_dir + ": " + ec.message());

  DirLock lock(dir);
  fs::path target = dir / (want + ".bin");
  if (fs::exists(target)) {
    std::string got = sha256_file(target.string());
    if (got != want)
      fail(Err::Integrity, "cached file " + target.string() + " has digest " + got +
                               ", expected " + want);
    return target.string();
  }

  auto bytes = fetch ? fetch(url) : default_fetch(url);
  std::string got = sha256_hex(bytes);
  if (got != want)
    fail(Err::Integrity,
         "downloaded " + url + " has digest " + got + ", expected " + want);
  fs::path tmp = dir / (want + ".bin.tmp." + std::to_string(::getpid()));
  write_file_bytes(tmp.string(), bytes);
  fs::rename(tmp, target, ec);
  if (ec) fail(Err::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
  return target.string();
}

std::vector<unsigned char> maybe_gunzip(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b) return bytes;
  z_stream strm{};
  if (inflateInit2(&strm, 15 + 32) != Z_OK) fail(Err::Internal, "zlib init failed");
  std::vector<unsigned char> out;
  out.reserve(bytes.size() * 4);
  unsigned char buf[1 << 16];
  strm.next_in = const_cast<unsigned char*>(bytes.data());
  strm.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    strm.next_out = buf;
    strm.avail_out = sizeof(buf);
    rc = inflate(&strm, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&strm);
      fail(Err::Format, "gzip payload is corrupt (zlib code " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - strm.avail_out));
  }
  inflateEnd(&strm);
  return out;
}

}  // namespace bvo
