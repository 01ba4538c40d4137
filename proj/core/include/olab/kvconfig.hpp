#pragma once

#include <map>
#include <string>

namespace olab {

/// Flat TOML-style key/value configuration. Supports [section] headers,
/// `key = value` lines, `#` comments, and dotted-path overrides. All values
/// are stored as strings and converted on access. Parse errors carry
/// line and column numbers.
class KvConfig {
  public:
    static KvConfig parse_file(const std::string &path);
    static KvConfig parse_string(const std::string &text, const std::string &name = "<string>");

    void set(const std::string &dotted_key, const std::string &value);
    /// Applies a "dotted.key=value" override string.
    void set_override(const std::string &assignment);

    bool has(const std::string &key) const;
    std::string get_string(const std::string &key, const std::string &fallback) const;
    long get_long(const std::string &key, long fallback) const;
    double get_double(const std::string &key, double fallback) const;
    bool get_bool(const std::string &key, bool fallback) const;

    const std::map<std::string, std::string> &entries() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace olab
