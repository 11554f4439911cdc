#include "geocause/common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace geocause {

std::string hash_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string hash_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_hex(ss.str());
}

}  // namespace geocause
