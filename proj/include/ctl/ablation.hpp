#pragma once

#include <array>
#include <string>
#include <string_view>

namespace ctl {

// Wiring switches. Text only touches the forecaster; the other four are the
// generation components, enabled cumulatively in the ablation table.
struct AblationFlags {
  bool use_text = true;
  bool use_gcn = true;
  bool use_importance = true;
  bool use_xattn = true;
  bool use_memory = true;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct AblationRow {
  std::string name;
  AblationFlags flags;
};

// none, +gcn, +importance, +xattn, +memory
std::array<AblationRow, 5> component_rows();
AblationRow no_text_row();

// Comma separated: no-text, no-gcn, no-importance, no-xattn, no-memory,
// none (all generation components off), full.
AblationFlags parse_ablation(std::string_view list);
std::string describe(const AblationFlags& flags);

}  // namespace ctl
