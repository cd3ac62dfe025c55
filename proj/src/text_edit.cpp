#include "specforge/text_edit.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace specforge {

std::string apply_edits(const std::string& text, std::vector<TextEdit> edits) {
    std::sort(edits.begin(), edits.end(), [](const TextEdit& a, const TextEdit& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    for (const auto& e : edits) {
        if (e.begin < pos || e.end < e.begin || e.end > text.size()) {
            throw std::invalid_argument("overlapping or out-of-range text edit");
        }
        out.append(text, pos, e.begin - pos);
        out += e.replacement;
        pos = e.end;
    }
    out.append(text, pos, std::string::npos);
    return out;
}

std::size_t line_start(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    while (offset > 0 && text[offset - 1] != '\n') --offset;
    return offset;
}

std::size_t next_line_start(const std::string& text, std::size_t offset) {
    std::size_t nl = text.find('\n', offset);
    return nl == std::string::npos ? text.size() : nl + 1;
}

std::string indentation_at(const std::string& text, std::size_t offset) {
    std::size_t b = line_start(text, offset);
    std::size_t e = b;
    while (e < text.size() && (text[e] == ' ' || text[e] == '\t')) ++e;
    return text.substr(b, e - b);
}

std::string collapse_whitespace(const std::string& text) {
    std::string out;
    bool space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
        } else {
            if (space) out += ' ';
            space = false;
            out += c;
        }
    }
    return out;
}

}  // namespace specforge
