#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("vizrisk_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string source_path(const std::string& rel) { return std::string(VIZRISK_SOURCE_DIR) + "/" + rel; }

/// Published per-image probabilities in builtin schema column order; a
/// negative entry marks a query whose cluster does not apply.
inline const std::vector<std::vector<double>>& table2_probabilities() {
    static const std::vector<std::vector<double>> p = {
        {.67, .21, .01, .01, .10, .79, .21, .96, .04, .25, .75, .99, .01, .60, .11, .29,
         -1, -1, -1, -1, -1, -1, -1, -1},
        {.68, .15, .08, .04, .05, .10, .90, .02, .98, .30, .70, .05, .95, 1.00, 0.00, 0.00,
         -1, -1, -1, -1, -1, -1, -1, -1},
        {.06, .92, .01, .01, .01, .03, .97, .02, .98, -1, -1, -1, -1, -1, -1, -1,
         .92, .08, .97, .03, .96, 0.00, 0.00, .04},
    };
    return p;
}

}  // namespace testing_support
