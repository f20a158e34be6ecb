#pragma once

#include <gxr/core.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

namespace gxr::cli {

struct Entry {
    std::string value;
    int line = 0;
};

/// Flat sectioned key = value text. Lines starting with '#' or ';' are comments.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "config");
    static Config load(const std::string& path);

    const std::string& text() const { return text_; }
    const std::string& origin() const { return origin_; }

    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
    bool has(const std::string& s, const std::string& k) const;
    void require_section(const std::string& s) const;

    std::string str(const std::string& s, const std::string& k) const;
    std::string str(const std::string& s, const std::string& k, const std::string& fallback) const;
    double num(const std::string& s, const std::string& k) const;
    double num(const std::string& s, const std::string& k, double fallback) const;
    double positive(const std::string& s, const std::string& k, double fallback) const;
    long integer(const std::string& s, const std::string& k, long fallback) const;
    std::vector<double> list(const std::string& s, const std::string& k) const;
    std::vector<double> list(const std::string& s, const std::string& k, const std::vector<double>& fallback) const;
    std::string choice(const std::string& s, const std::string& k, const std::vector<std::string>& allowed,
                       const std::string& fallback = "") const;

    int line_of(const std::string& s, const std::string& k) const;
    int section_line(const std::string& s) const;

    /// Keys that were never read; used to reject typos after a plan is built.
    std::vector<std::pair<std::string, int>> unused() const;

    const std::map<std::string, std::map<std::string, Entry>>& sections() const { return sections_; }

private:
    const Entry* find(const std::string& s, const std::string& k) const;

    std::string text_, origin_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::map<std::string, int> section_lines_;
    mutable std::set<std::pair<std::string, std::string>> used_;
};

}  // namespace gxr::cli
