#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace buzz {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Line-oriented `key = value` text with `[section]` headers. Keys before the
// first header live in the unnamed section "". '#' and ';' start comments at
// the beginning of a line. Order is kept so a document re-serializes
// byte-identically.
class ConfigDoc {
public:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };

    static ConfigDoc parse(const std::string& text, const std::string& origin = "config");
    static ConfigDoc load(const std::filesystem::path& path);

    std::string serialize() const;
    void save(const std::filesystem::path& path) const;

    bool has_section(const std::string& section) const;
    bool has(const std::string& section, const std::string& key) const;
    std::optional<std::string> find(const std::string& section, const std::string& key) const;

    // Missing keys throw ConfigError naming "section.key".
    std::string get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key) const;
    double get_double_or(const std::string& section, const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& section, const std::string& key) const;
    std::size_t get_size_or(const std::string& section, const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64_or(const std::string& section, const std::string& key, std::uint64_t fallback) const;
    bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const;
    // Comma or whitespace separated.
    std::vector<std::string> get_list_or(const std::string& section, const std::string& key,
                                         const std::vector<std::string>& fallback) const;

    // Replaces an existing value or appends.
    void set(const std::string& section, const std::string& key, const std::string& value);

    const std::vector<Section>& sections() const { return sections_; }
    std::vector<std::string> keys(const std::string& section) const;

private:
    Section* section_ptr(const std::string& name);
    const Section* section_ptr(const std::string& name) const;

    std::vector<Section> sections_;
    std::string origin_ = "config";
};

std::string format_double(double v);
std::vector<std::string> split_list(const std::string& text);

} // namespace buzz
