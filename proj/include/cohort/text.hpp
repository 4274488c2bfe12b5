#pragma once

#include <string>
#include <string_view>

namespace cohort::text {

// Decodes UTF-8 into Unicode scalar values. Invalid bytes are mapped to
// U+FFFD one byte at a time so offsets stay well defined.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view chars);
void append_utf8(std::string& out, char32_t c);

// Letters and digits. Covers ASCII plus the Latin-1 and Latin Extended-A
// letters that appear in German clinical text.
bool is_word_char(char32_t c);
bool is_space(char32_t c);

// Lowercases and folds one character: umlauts expand to two letters
// (ä -> ae), ß -> ss. Appends the folded form to `out`.
void fold_char(char32_t c, std::u32string& out);

// fold_char applied to a whole string.
std::u32string fold(std::u32string_view s);
std::string fold(std::string_view utf8);

}  // namespace cohort::text
