#include "gccvit/dataset.hpp"

#include "gccvit/errors.hpp"

namespace gccvit {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& item : items) {
    if (item.label >= counts.size()) {
      throw DatasetError("item label " + std::to_string(item.label) + " exceeds class count " +
                         std::to_string(counts.size()));
    }
    ++counts[item.label];
  }
  return counts;
}

void Dataset::validate() const {
  const auto counts = class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DatasetError("class '" + class_names[c] + "' has no items");
  }
}

}  // namespace gccvit
