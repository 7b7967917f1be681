#pragma once

#include <string>
#include <string_view>

namespace omni {

enum class TaskLabel { kGui, kRobot };

inline const char* label_name(TaskLabel l) { return l == TaskLabel::kGui ? "gui" : "robot"; }

/// Accepts "gui" or "robot"; throws InvalidArgument otherwise.
TaskLabel parse_label(std::string_view s);

}  // namespace omni
