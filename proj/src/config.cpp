#include "mfnn/config.hpp"

#include <cctype>
#include <sstream>

#include "mfnn/error.hpp"
#include "mfnn/io.hpp"

namespace mfnn {

namespace {

class TomlLine {
public:
    TomlLine(const std::string& text, std::size_t line) : s_(text), line_(line) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::config_invalid, "TOML line " + std::to_string(line_) + ": " + what);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    bool at_end() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }

    char peek() {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string key() {
        skip_ws();
        if (peek() == '"') return string();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-')) {
            ++pos_;
        }
        if (start == pos_) fail("expected a key");
        return s_.substr(start, pos_ - start);
    }

    std::vector<std::string> dotted_key() {
        std::vector<std::string> parts{key()};
        while (peek() == '.') {
            ++pos_;
            parts.push_back(key());
        }
        return parts;
    }

    std::string string() {
        expect('"');
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                default: fail(std::string("unsupported escape \\") + e);
                }
            }
            out += c;
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    nlohmann::json value() {
        const char c = peek();
        if (c == '"') return string();
        if (c == '{') {
            ++pos_;
            nlohmann::json table = nlohmann::json::object();
            if (peek() == '}') {
                ++pos_;
                return table;
            }
            for (;;) {
                const std::string k = key();
                expect('=');
                if (table.contains(k)) fail("duplicate key '" + k + "'");
                table[k] = value();
                if (peek() == ',') {
                    ++pos_;
                    continue;
                }
                expect('}');
                return table;
            }
        }
        if (c == '[') {
            ++pos_;
            nlohmann::json arr = nlohmann::json::array();
            if (peek() == ']') {
                ++pos_;
                return arr;
            }
            for (;;) {
                arr.push_back(value());
                if (peek() == ',') {
                    ++pos_;
                    if (peek() == ']') {
                        ++pos_;
                        return arr;
                    }
                    continue;
                }
                expect(']');
                return arr;
            }
        }
        const std::size_t start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '}' && s_[pos_] != '#' && s_[pos_] != ' ' &&
               s_[pos_] != '\t') {
            ++pos_;
        }
        std::string tok = s_.substr(start, pos_ - start);
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::erase(tok, '_');
        if (tok.empty()) fail("expected a value");
        const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
        try {
            std::size_t used = 0;
            if (is_float) {
                const double d = std::stod(tok, &used);
                if (used == tok.size()) return d;
            } else if (tok[0] == '-') {
                const long long v = std::stoll(tok, &used);
                if (used == tok.size()) return v;
            } else {
                const unsigned long long v = std::stoull(tok, &used);
                if (used == tok.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail("bad value '" + tok + "'");
    }

private:
    const std::string& s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

nlohmann::json& descend(nlohmann::json& root, const std::vector<std::string>& path, const TomlLine& where) {
    nlohmann::json* node = &root;
    for (const auto& p : path) {
        nlohmann::json& next = (*node)[p];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) where.fail("'" + p + "' is not a table");
        node = &next;
    }
    return *node;
}

} // namespace

nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::istringstream in(text);
    std::string raw;
    std::size_t number = 0;
    while (std::getline(in, raw)) {
        ++number;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        TomlLine line(raw, number);
        if (line.at_end()) continue;
        if (line.peek() == '[') {
            line.expect('[');
            const auto path = line.dotted_key();
            line.expect(']');
            if (!line.at_end()) line.fail("trailing characters after table header");
            table = &descend(root, path, line);
            continue;
        }
        auto path = line.dotted_key();
        line.expect('=');
        nlohmann::json v = line.value();
        if (!line.at_end()) line.fail("trailing characters after value");
        const std::string leaf = path.back();
        path.pop_back();
        nlohmann::json& target = descend(*table, path, line);
        if (target.contains(leaf)) line.fail("duplicate key '" + leaf + "'");
        target[leaf] = std::move(v);
    }
    return root;
}

nlohmann::json load_config_file(const std::string& path) {
    const std::string text = read_file(path);
    const auto ends_with = [&path](const std::string& ext) {
        return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
    };
    if (ends_with(".toml")) return parse_toml(text);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        if (ends_with(".json")) throw Error(ErrorKind::config_invalid, std::string("JSON: ") + e.what());
    }
    return parse_toml(text);
}

} // namespace mfnn
