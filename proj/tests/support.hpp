#pragma once

// Fixture builders shared by the unit tests and the acceptance binary.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "namebias/common.hpp"
#include "namebias/templates.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("namebias-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// n names N00..N(n-1) with strictly decreasing totals, split across two
// census years and both genders.
inline void write_ranked_census(const fs::path& dir, std::size_t n) {
  fs::create_directories(dir);
  std::string y1, y2;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "N%02zu", i);
    const auto total = 10 * (n - i) + 1;
    const auto female = total / 2 + (i % 2);
    y1 += std::string(name) + ",F," + std::to_string(female) + "\n";
    y2 += std::string(name) + ",M," + std::to_string(total - female) + "\n";
  }
  namebias::write_file_atomic(dir / "yob1990.txt", y1);
  namebias::write_file_atomic(dir / "yob2000.txt", y2);
}

// Templates with distinct questions so that the hash stub answers them
// independently.
inline nlohmann::json generated_templates(std::size_t n) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "g%03zu", i);
    arr.push_back({{"id", id},
                   {"question", "On day " + std::to_string(i) + " [n] said [np1] would help. What does [n] do?"},
                   {"candidates",
                    {"call [np2] friend " + std::to_string(i), "wait for [np2] turn", "ask [np3] boss " + std::to_string(i % 7)}},
                   {"label", static_cast<int>(i % 3)}});
  }
  return arr;
}

inline void write_templates(const fs::path& file, std::size_t n) {
  namebias::write_file_atomic(file, generated_templates(n).dump(2) + "\n");
}

inline namebias::Template checkup_template() {
  namebias::Template t;
  t.id = "checkup";
  t.question =
      "Typically every four months, [n] went to the doctor for a routine checkup and was told [np1] needs rest. "
      "What will [n] want to do next?";
  t.candidates = {"call the doctor", "finish all [np2] projects and postpone the rest", "take time off from work"};
  t.gold_label = 2;
  return t;
}

}  // namespace testing_support
