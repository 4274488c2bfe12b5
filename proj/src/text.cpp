#include "cohort/text.hpp"

namespace cohort::text {

std::u32string decode_utf8(std::string_view bytes) {
    std::u32string out;
    out.reserve(bytes.size());
    std::size_t i = 0;
    const std::size_t n = bytes.size();
    while (i < n) {
        const auto b0 = static_cast<unsigned char>(bytes[i]);
        if (b0 < 0x80) {
            out.push_back(b0);
            ++i;
            continue;
        }
        int len = 0;
        char32_t cp = 0;
        char32_t min = 0;
        if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
            min = 0x80;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
            min = 0x800;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
            min = 0x10000;
        }
        bool ok = len > 0 && i + len <= n;
        for (int k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(bytes[i + k]);
            if ((b & 0xC0) != 0x80) {
                ok = false;
            } else {
                cp = (cp << 6) | (b & 0x3F);
            }
        }
        if (ok && (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) {
            ok = false;
        }
        if (!ok) {
            out.push_back(U'�');
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

void append_utf8(std::string& out, char32_t c) {
    if (c < 0x80) {
        out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (c >> 6)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (c >> 12)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (c >> 18)));
        out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
}

std::string encode_utf8(std::u32string_view chars) {
    std::string out;
    out.reserve(chars.size());
    for (char32_t c : chars) {
        append_utf8(out, c);
    }
    return out;
}

bool is_word_char(char32_t c) {
    if (c < 0x80) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
    }
    if (c >= 0xC0 && c <= 0x24F) {
        return c != 0xD7 && c != 0xF7;
    }
    return false;
}

bool is_space(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' ||
           c == 0xA0;
}

void fold_char(char32_t c, std::u32string& out) {
    if (c >= 'A' && c <= 'Z') {
        out.push_back(c + 32);
        return;
    }
    switch (c) {
        case U'ä':
        case U'Ä':
            out += U"ae";
            return;
        case U'ö':
        case U'Ö':
            out += U"oe";
            return;
        case U'ü':
        case U'Ü':
            out += U"ue";
            return;
        case U'ß':
        case U'ẞ':
            out += U"ss";
            return;
        default:
            break;
    }
    // Latin-1 uppercase block (except the multiplication sign).
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) {
        out.push_back(c + 0x20);
        return;
    }
    if (c == 0x178) {
        out.push_back(0xFF);
        return;
    }
    // Latin Extended-A alternates upper/lower on even/odd code points.
    if (c >= 0x100 && c <= 0x17F && c != 0x130 && c != 0x131 && c != 0x138 && c != 0x149 &&
        c != 0x17F) {
        const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
        if (odd_upper) {
            out.push_back((c % 2 == 1) ? c + 1 : c);
        } else {
            out.push_back((c % 2 == 0) ? c + 1 : c);
        }
        return;
    }
    out.push_back(c);
}

std::u32string fold(std::u32string_view s) {
    std::u32string out;
    out.reserve(s.size() + 4);
    for (char32_t c : s) {
        fold_char(c, out);
    }
    return out;
}

std::string fold(std::string_view utf8) {
    return encode_utf8(fold(decode_utf8(utf8)));
}

}  // namespace cohort::text
