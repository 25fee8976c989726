#pragma once

#include <cstddef>
#include <string_view>

namespace capsules {

// Internal token estimator: ceil(chars / 4) per line, summed over lines.
// Line-based so that token counts compose additively under newline joins.
// Provider-reported usage takes precedence wherever it is available; this
// estimator only feeds ratios and thresholds.
std::size_t estimate_line_tokens(std::string_view line);
std::size_t estimate_tokens(std::string_view text);

// Word-count convention for output budgets: 3 words per 4 estimated tokens.
std::size_t words_from_tokens(std::size_t tokens);

}  // namespace capsules
