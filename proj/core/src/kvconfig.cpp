#include "olab/kvconfig.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace olab {

namespace {

[[noreturn]] void parse_error(const std::string &name, std::size_t line, std::size_t col,
                              const std::string &what) {
    throw std::invalid_argument(name + ":" + std::to_string(line) + ":" + std::to_string(col) +
                             ": " + what);
}

std::string trim(const std::string &s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_quotes(const std::string &s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

} // namespace

KvConfig KvConfig::parse_file(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str(), path);
}

KvConfig KvConfig::parse_string(const std::string &text, const std::string &name) {
    KvConfig cfg;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        // strip comments outside quotes
        std::string line;
        bool in_quote = false;
        char quote = 0;
        for (char ch : raw) {
            if (in_quote) {
                if (ch == quote) in_quote = false;
            } else if (ch == '"' || ch == '\'') {
                in_quote = true;
                quote = ch;
            } else if (ch == '#') {
                break;
            }
            line += ch;
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                parse_error(name, lineno, line.size(), "unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) parse_error(name, lineno, 2, "empty section name");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            parse_error(name, lineno, 1, "expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = strip_quotes(trim(line.substr(eq + 1)));
        if (key.empty()) parse_error(name, lineno, 1, "empty key");
        cfg.set(section.empty() ? key : section + "." + key, value);
    }
    return cfg;
}

void KvConfig::set(const std::string &dotted_key, const std::string &value) {
    values_[dotted_key] = value;
}

void KvConfig::set_override(const std::string &assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("override must look like dotted.key=value: " + assignment);
    }
    set(trim(assignment.substr(0, eq)), strip_quotes(trim(assignment.substr(eq + 1))));
}

bool KvConfig::has(const std::string &key) const { return values_.count(key) != 0; }

std::string KvConfig::get_string(const std::string &key, const std::string &fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long KvConfig::get_long(const std::string &key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char *end = nullptr;
    const long v = std::strtol(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0') {
        throw std::invalid_argument("config key '" + key + "' is not an integer: " + it->second);
    }
    return v;
}

double KvConfig::get_double(const std::string &key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char *end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0') {
        throw std::invalid_argument("config key '" + key + "' is not a number: " + it->second);
    }
    return v;
}

bool KvConfig::get_bool(const std::string &key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument("config key '" + key + "' is not a boolean: " + it->second);
}

} // namespace olab
