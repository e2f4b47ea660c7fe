#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace wm::core {

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double v);

/// Line-buffered CSV file. Every row is flushed so an aborted run keeps the
/// rows written so far. Optional leading columns (e.g. a config hash) are
/// prepended to every row.
class CsvWriter {
 public:
  CsvWriter() = default;
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns,
            std::vector<std::pair<std::string, std::string>> constant_columns = {});

  bool is_open() const noexcept { return out_.is_open(); }
  void row(const std::vector<std::string>& cells);
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
  std::string prefix_;
  std::size_t width_ = 0;
};

}  // namespace wm::core
