#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace specforge {

struct TextEdit {
    std::size_t begin = 0;  // byte offset
    std::size_t end = 0;    // exclusive
    std::string replacement;
};

/// Applies non-overlapping edits (any order) to text.
std::string apply_edits(const std::string& text, std::vector<TextEdit> edits);

/// Leading spaces and tabs of the line containing offset.
std::string indentation_at(const std::string& text, std::size_t offset);

/// Offset of the first byte of the line containing offset.
std::size_t line_start(const std::string& text, std::size_t offset);

/// Offset one past the '\n' ending the line containing offset (or text size).
std::size_t next_line_start(const std::string& text, std::size_t offset);

/// Whitespace-collapsed, trimmed copy of text.
std::string collapse_whitespace(const std::string& text);

}  // namespace specforge
