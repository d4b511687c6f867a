#pragma once

#include <string>

#include "json.hpp"

namespace mfnn {

/// Parses the TOML subset used by experiment configs: [table] and
/// [a.b] headers, `key = value` with basic strings, integers, floats,
/// booleans, single-line arrays and inline tables of those, and # comments.
nlohmann::json parse_toml(const std::string& text);

/// JSON or TOML, chosen by extension (.json / .toml); other extensions are
/// tried as JSON first. Throws config-invalid on syntax errors.
nlohmann::json load_config_file(const std::string& path);

} // namespace mfnn
