#include "owf/json_util.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace owf {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

nlohmann::json parse_json(std::string_view text, std::string_view what,
                          std::size_t line_base) {
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    auto offset = std::min<std::size_t>(e.byte, text.size());
    auto line = line_base + 1 +
                static_cast<std::size_t>(std::count(text.begin(),
                                                    text.begin() + static_cast<std::ptrdiff_t>(offset > 0 ? offset - 1 : 0),
                                                    '\n'));
    throw ParseError(std::string(what) + ": parse error at line " + std::to_string(line) +
                         ", offset " + std::to_string(offset) + ": " + e.what(),
                     line, offset);
  }
}

}  // namespace owf
