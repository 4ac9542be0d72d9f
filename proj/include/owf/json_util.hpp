#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

#include "owf/error.hpp"

namespace owf {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Parses JSON, turning syntax errors into ParseError with line/offset.
nlohmann::json parse_json(std::string_view text, std::string_view what,
                          std::size_t line_base = 0);

/// Runs `f`, converting nlohmann type/key errors into ValidationError.
template <typename F>
decltype(auto) json_schema_guard(std::string_view what, F&& f) {
  try {
    return std::forward<F>(f)();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(what) + ": " + e.what());
  }
}

}  // namespace owf
