#include "config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace gxr::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool to_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return errno == 0 && end && *end == '\0' && std::isfinite(out);
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    c.text_ = text;
    c.origin_ = origin;
    std::istringstream is(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const std::string s = trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("unterminated section header", line);
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty()) throw ConfigError("empty section name", line);
            if (c.sections_.count(section)) throw ConfigError("duplicate section [" + section + "]", line);
            c.sections_[section];
            c.section_lines_[section] = line;
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value", line);
        if (section.empty()) throw ConfigError("key outside any section", line);
        const std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        const auto hash = value.find(" #");
        if (hash != std::string::npos) value = trim(value.substr(0, hash));
        if (key.empty()) throw ConfigError("empty key", line);
        auto& sec = c.sections_[section];
        if (sec.count(key)) throw ConfigError("duplicate key '" + key + "' in [" + section + "]", line);
        sec[key] = Entry{value, line};
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
}

const Entry* Config::find(const std::string& s, const std::string& k) const {
    const auto sec = sections_.find(s);
    if (sec == sections_.end()) return nullptr;
    const auto it = sec->second.find(k);
    if (it == sec->second.end()) return nullptr;
    used_.insert({s, k});
    return &it->second;
}

bool Config::has(const std::string& s, const std::string& k) const {
    const auto sec = sections_.find(s);
    return sec != sections_.end() && sec->second.count(k) > 0;
}

void Config::require_section(const std::string& s) const {
    if (!has_section(s)) throw ConfigError("missing section [" + s + "]");
}

int Config::line_of(const std::string& s, const std::string& k) const {
    const auto sec = sections_.find(s);
    if (sec == sections_.end()) return 0;
    const auto it = sec->second.find(k);
    return it == sec->second.end() ? 0 : it->second.line;
}

int Config::section_line(const std::string& s) const {
    const auto it = section_lines_.find(s);
    return it == section_lines_.end() ? 0 : it->second;
}

std::string Config::str(const std::string& s, const std::string& k) const {
    if (!has_section(s)) throw ConfigError("missing section [" + s + "]");
    const Entry* e = find(s, k);
    if (!e) throw ConfigError("missing key '" + k + "' in [" + s + "]", section_line(s));
    return e->value;
}

std::string Config::str(const std::string& s, const std::string& k, const std::string& fallback) const {
    const Entry* e = find(s, k);
    return e ? e->value : fallback;
}

double Config::num(const std::string& s, const std::string& k) const {
    const std::string v = str(s, k);
    double out;
    if (!to_double(v, out)) throw ConfigError("'" + k + "' must be a number, got '" + v + "'", line_of(s, k));
    return out;
}

double Config::num(const std::string& s, const std::string& k, double fallback) const {
    return has(s, k) ? num(s, k) : fallback;
}

double Config::positive(const std::string& s, const std::string& k, double fallback) const {
    const double v = num(s, k, fallback);
    if (!(v > 0)) throw ConfigError("'" + k + "' must be positive", line_of(s, k));
    return v;
}

long Config::integer(const std::string& s, const std::string& k, long fallback) const {
    if (!has(s, k)) return fallback;
    const double v = num(s, k);
    if (v != std::floor(v) || std::abs(v) > 1e15)
        throw ConfigError("'" + k + "' must be an integer", line_of(s, k));
    return static_cast<long>(v);
}

std::vector<double> Config::list(const std::string& s, const std::string& k) const {
    std::string v = str(s, k);
    for (char& ch : v)
        if (ch == ',') ch = ' ';
    std::istringstream is(v);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) {
        double x;
        if (!to_double(tok, x)) throw ConfigError("'" + k + "' has a non-numeric entry '" + tok + "'", line_of(s, k));
        out.push_back(x);
    }
    if (out.empty()) throw ConfigError("'" + k + "' is empty", line_of(s, k));
    return out;
}

std::vector<double> Config::list(const std::string& s, const std::string& k, const std::vector<double>& fallback) const {
    return has(s, k) ? list(s, k) : fallback;
}

std::string Config::choice(const std::string& s, const std::string& k, const std::vector<std::string>& allowed,
                           const std::string& fallback) const {
    const std::string v = fallback.empty() ? str(s, k) : str(s, k, fallback);
    for (const auto& a : allowed)
        if (a == v) return v;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("'" + k + "' must be one of: " + list + " (got '" + v + "')", line_of(s, k));
}

std::vector<std::pair<std::string, int>> Config::unused() const {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& [s, keys] : sections_)
        for (const auto& [k, e] : keys)
            if (!used_.count({s, k})) out.emplace_back("[" + s + "] " + k, e.line);
    return out;
}

}  // namespace gxr::cli
