#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace difflab {

inline constexpr const char* kToolVersion = "difflab 1.0.0";
inline constexpr int kCsvFormat = 1;

// configuration problem with enough context to point at the offending
// file, line and key
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key = value document with [section] headers; a key inside [train]
// is addressed as "train.batch". '#' and ';' start comments. Values are
// untyped strings until a getter asks for a number or a comma list, at
// which point a bad value raises ConfigError naming the file, line and key.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& name);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;

    // keys nobody asked for are almost always typos; reports the first
    // few with their line numbers
    void check_consumed() const;

    // FNV-1a over the raw document text, for the run manifest
    std::uint64_t content_hash() const;
    const std::string& name() const { return name_; }

private:
    struct Entry {
        std::string value;
        int line = 0;
        mutable bool used = false;
    };

    const Entry& at(const std::string& key) const;
    [[noreturn]] void fail(const std::string& key, const std::string& what) const;

    std::string name_;
    std::string raw_;
    std::map<std::string, Entry> entries_;
};

// full 17-significant-digit decimal rendering, '.' decimal point
std::string csv_double(double v);

// Runs fn(0..n-1) on up to `workers` threads. Work items must write only
// to their own index so the result is independent of scheduling; the first
// exception thrown by any item is rethrown after all threads join.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

// Entry point behind the binary: args excludes the program name. Returns
// 0 on success, 1 on config or runtime failures, 2 on command-line errors
// (which also print usage to err).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace difflab
