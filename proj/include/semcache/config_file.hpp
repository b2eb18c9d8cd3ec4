#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace semcache {

/// Line-oriented `key = value` settings. Blank lines and lines starting with
/// '#' are skipped; keys may repeat (list-valued settings). Throws FormatError
/// on a line without '=' or with an empty key.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> load_config_file(
    const std::filesystem::path& path);

/// Command-line arguments with config settings merged in: every key not
/// already given as `--key` on the command line is appended as
/// `--key=value`, so flags always win over the file.
std::vector<std::string> merge_config_args(
    const std::vector<std::string>& args,
    const std::vector<std::pair<std::string, std::string>>& settings);

}  // namespace semcache
