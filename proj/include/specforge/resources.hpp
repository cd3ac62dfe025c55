#pragma once

#include <string_view>

namespace specforge {

/// Data files compiled into the library ("prompts/direct.v1.txt", ...). Empty if unknown.
std::string_view embedded_resource(std::string_view name);

}  // namespace specforge
