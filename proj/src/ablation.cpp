#include "ctl/ablation.hpp"

#include <algorithm>

#include "ctl/error.hpp"

namespace ctl {

std::array<AblationRow, 5> component_rows() {
  AblationFlags f{true, false, false, false, false};
  std::array<AblationRow, 5> rows;
  rows[0] = {"none", f};
  f.use_gcn = true;
  rows[1] = {"+gcn", f};
  f.use_importance = true;
  rows[2] = {"+importance", f};
  f.use_xattn = true;
  rows[3] = {"+xattn", f};
  f.use_memory = true;
  rows[4] = {"+memory", f};
  return rows;
}

AblationRow no_text_row() {
  AblationFlags f;
  f.use_text = false;
  return {"no_text", f};
}

AblationFlags parse_ablation(std::string_view list) {
  AblationFlags f;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t end = std::min(list.find(',', pos), list.size());
    const std::string_view item = list.substr(pos, end - pos);
    if (item == "no-text") {
      f.use_text = false;
    } else if (item == "no-gcn") {
      f.use_gcn = false;
    } else if (item == "no-importance") {
      f.use_importance = false;
    } else if (item == "no-xattn") {
      f.use_xattn = false;
    } else if (item == "no-memory") {
      f.use_memory = false;
    } else if (item == "none") {
      f.use_gcn = f.use_importance = f.use_xattn = f.use_memory = false;
    } else if (item == "full" || item.empty()) {
    } else {
      throw ConfigError("unknown ablation flag '" + std::string(item) + "'");
    }
    pos = end + 1;
  }
  return f;
}

std::string describe(const AblationFlags& f) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!s.empty()) s += ' ';
    s += on ? "+" : "-";
    s += name;
  };
  add(f.use_text, "text");
  add(f.use_gcn, "gcn");
  add(f.use_importance, "importance");
  add(f.use_xattn, "xattn");
  add(f.use_memory, "memory");
  return s;
}

}  // namespace ctl
