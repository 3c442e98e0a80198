#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace handy::cli {

// Flat "section.key" -> value store over a fixed schema. Unknown keys are
// configuration errors so that typos never pass silently.
class Config {
public:
    Config();

    void set(const std::string& key, const std::string& value);
    void load_ini(const std::filesystem::path& file);
    // "section.key=value"
    void apply_override(const std::string& assignment);

    bool known(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& str(const std::string& key) const;
    double num(const std::string& key) const;
    long long integer(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;
    std::vector<double> numbers(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    void write_ini(std::ostream& os) const;

private:
    std::map<std::string, std::string> values_;
};

std::string sha256_file(const std::filesystem::path& p);

// Entry point shared by the executable, the tests and the acceptance binary.
// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace handy::cli
