#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace gaitrt {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
void append_double(std::string& out, double v);

/// Parses the whole of `text` as a double; false on any leftover character.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

// Without leading and trailing blanks.
std::string trim(std::string_view s);

/// key = value lines; '#' starts a comment, blank lines are skipped, a later
/// key replaces an earlier one. Throws FormatError "source:line: ..." on a
/// line without '='.
struct ConfigValue {
  std::string text;
  std::size_t line = 0;
};
using ConfigMap = std::map<std::string, ConfigValue>;
ConfigMap read_key_values(std::istream& is, const std::string& source);

}  // namespace gaitrt
