#include "buzz/config.hpp"

#include "buzz/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace buzz {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string qualified(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::vector<std::string> split_list(const std::string& text) {
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream is(cleaned);
    std::vector<std::string> out;
    std::string item;
    while (is >> item) out.push_back(item);
    return out;
}

ConfigDoc ConfigDoc::parse(const std::string& text, const std::string& origin) {
    ConfigDoc doc;
    doc.origin_ = origin;
    doc.sections_.push_back({"", {}});
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) throw ConfigError(where + "empty section name");
            if (doc.has_section(name)) throw ConfigError(where + "duplicate section [" + name + "]");
            doc.sections_.push_back({name, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + "empty key");
        auto& section = doc.sections_.back();
        for (const auto& [k, v] : section.entries) {
            if (k == key) throw ConfigError(where + "duplicate key '" + qualified(section.name, key) + "'");
        }
        section.entries.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return doc;
}

ConfigDoc ConfigDoc::load(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file_bytes(path);
    } catch (const DataError&) {
        throw ConfigError("cannot read config file " + path.string());
    }
    return parse(text, path.string());
}

std::string ConfigDoc::serialize() const {
    std::ostringstream os;
    bool first = true;
    // Unnamed entries go first; after a header they would change section.
    if (const auto* top = section_ptr("")) {
        for (const auto& [k, v] : top->entries) os << k << " = " << v << '\n';
        first = top->entries.empty();
    }
    for (const auto& s : sections_) {
        if (s.name.empty()) continue;
        if (!first) os << '\n';
        first = false;
        os << '[' << s.name << "]\n";
        for (const auto& [k, v] : s.entries) os << k << " = " << v << '\n';
    }
    return os.str();
}

void ConfigDoc::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << serialize();
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

ConfigDoc::Section* ConfigDoc::section_ptr(const std::string& name) {
    for (auto& s : sections_)
        if (s.name == name) return &s;
    return nullptr;
}

const ConfigDoc::Section* ConfigDoc::section_ptr(const std::string& name) const {
    for (const auto& s : sections_)
        if (s.name == name) return &s;
    return nullptr;
}

bool ConfigDoc::has_section(const std::string& section) const { return section_ptr(section) != nullptr; }

bool ConfigDoc::has(const std::string& section, const std::string& key) const { return find(section, key).has_value(); }

std::optional<std::string> ConfigDoc::find(const std::string& section, const std::string& key) const {
    const auto* s = section_ptr(section);
    if (!s) return std::nullopt;
    for (const auto& [k, v] : s->entries)
        if (k == key) return v;
    return std::nullopt;
}

std::string ConfigDoc::get(const std::string& section, const std::string& key) const {
    auto v = find(section, key);
    if (!v) throw ConfigError(origin_ + ": missing key '" + qualified(section, key) + "'");
    return *v;
}

std::string ConfigDoc::get_or(const std::string& section, const std::string& key, const std::string& fallback) const {
    return find(section, key).value_or(fallback);
}

double ConfigDoc::get_double(const std::string& section, const std::string& key) const {
    const std::string text = get(section, key);
    double v = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw ConfigError(origin_ + ": key '" + qualified(section, key) + "' is not a number: '" + text + "'");
    }
    return v;
}

double ConfigDoc::get_double_or(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
}

std::size_t ConfigDoc::get_size(const std::string& section, const std::string& key) const {
    get(section, key); // missing-key diagnostic
    return static_cast<std::size_t>(get_u64_or(section, key, 0));
}

std::size_t ConfigDoc::get_size_or(const std::string& section, const std::string& key, std::size_t fallback) const {
    return has(section, key) ? get_size(section, key) : fallback;
}

std::uint64_t ConfigDoc::get_u64_or(const std::string& section, const std::string& key, std::uint64_t fallback) const {
    auto text = find(section, key);
    if (!text) return fallback;
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(text->data(), text->data() + text->size(), v);
    if (ec != std::errc() || end != text->data() + text->size()) {
        throw ConfigError(origin_ + ": key '" + qualified(section, key) + "' is not a non-negative integer: '" +
                          *text + "'");
    }
    return v;
}

bool ConfigDoc::get_bool_or(const std::string& section, const std::string& key, bool fallback) const {
    auto text = find(section, key);
    if (!text) return fallback;
    if (*text == "true" || *text == "yes" || *text == "1") return true;
    if (*text == "false" || *text == "no" || *text == "0") return false;
    throw ConfigError(origin_ + ": key '" + qualified(section, key) + "' is not a boolean: '" + *text + "'");
}

std::vector<std::string> ConfigDoc::get_list_or(const std::string& section, const std::string& key,
                                                const std::vector<std::string>& fallback) const {
    auto text = find(section, key);
    return text ? split_list(*text) : fallback;
}

void ConfigDoc::set(const std::string& section, const std::string& key, const std::string& value) {
    auto* s = section_ptr(section);
    if (!s) {
        sections_.push_back({section, {}});
        s = &sections_.back();
    }
    for (auto& [k, v] : s->entries) {
        if (k == key) {
            v = value;
            return;
        }
    }
    s->entries.emplace_back(key, value);
}

std::vector<std::string> ConfigDoc::keys(const std::string& section) const {
    std::vector<std::string> out;
    if (const auto* s = section_ptr(section))
        for (const auto& [k, v] : s->entries) out.push_back(k);
    return out;
}

} // namespace buzz
