#pragma once

#include <functional>
#include <string>
#include <vector>

namespace bvo {

// Returns the raw bytes at `url` or throws Err::Fetch. Pluggable so tests can
// count hits and serve canned payloads.
using FetchFn = std::function<std::vector<unsigned char>(const std::string& url)>;

// Built-in transport: http://, https:// and file:// URLs plus bare paths.
std::vector<unsigned char> default_fetch(const std::string& url);

// Download-once cache. The cached copy lives at <cache_dir>/<sha256>.bin and
// is digest-verified on every call, including cache hits; a mismatch is an
// integrity error naming both digests. Concurrent callers serialize on a
// lock file inside cache_dir. Returns the cached path.
std::string fetch_with_cache(const std::string& url, const std::string& cache_dir,
                             const std::string& expected_sha256, const FetchFn& fetch = {});

// Transparent gzip: inflates when `bytes` carries the gzip magic, otherwise
// returns the input unchanged.
std::vector<unsigned char> maybe_gunzip(const std::vector<unsigned char>& bytes);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace bvo
