#pragma once

#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

namespace gccvit {

/// Calls f(name, src_slot, dst_slot, role) for every parameter slot of two parameter sets of the
/// same template `S` but different slot types. The destination's layer list is resized to match.
/// Slots pair up positionally, so matrix slots of `src` meet matrix slots of `dst`.
template <template <class, class> class S, class SW, class ST, class DW, class DT, class F>
void zip_visit(const S<SW, ST>& src, S<DW, DT>& dst, F&& f) {
  match_layout(dst, src);
  struct Entry {
    const void* ptr;
    bool matrix;
  };
  std::vector<Entry> entries;
  S<SW, ST>::visit(src, std::string{}, [&](const std::string&, const auto& slot, auto) {
    using Slot = std::decay_t<decltype(slot)>;
    entries.push_back({&slot, std::is_same_v<Slot, SW>});
  });
  std::size_t i = 0;
  S<DW, DT>::visit(dst, std::string{}, [&](const std::string& name, auto& slot, auto role) {
    using Slot = std::decay_t<decltype(slot)>;
    const bool matrix = std::is_same_v<SW, ST> ? std::is_same_v<Slot, DW> : entries[i].matrix;
    if (matrix) {
      f(name, *static_cast<const SW*>(entries[i].ptr), slot, role);
    } else {
      f(name, *static_cast<const ST*>(entries[i].ptr), slot, role);
    }
    ++i;
  });
}

}  // namespace gccvit
