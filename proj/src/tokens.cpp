#include "capsules/tokens.hpp"

namespace capsules {

std::size_t estimate_line_tokens(std::string_view line) {
    return (line.size() + 3) / 4;
}

std::size_t estimate_tokens(std::string_view text) {
    std::size_t total = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            total += estimate_line_tokens(text.substr(pos));
            break;
        }
        total += estimate_line_tokens(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return total;
}

std::size_t words_from_tokens(std::size_t tokens) {
    return (tokens * 3) / 4;
}

}  // namespace capsules
