#include "tokweight/tokenizer.hpp"

#include <array>
#include <climits>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tokweight/error.hpp"

namespace tokweight {

namespace {

struct ByteTables {
    std::array<std::string, 256> byte_to_symbol;
    std::unordered_map<char32_t, unsigned char> symbol_to_byte;
};

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// GPT-2 style reversible mapping of raw bytes onto printable code points.
const ByteTables& byte_tables() {
    static const ByteTables tables = [] {
        ByteTables t;
        std::array<bool, 256> printable{};
        for (int b = '!'; b <= '~'; ++b) printable[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
        int extra = 0;
        for (int b = 0; b < 256; ++b) {
            char32_t cp = printable[b] ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + extra++);
            std::string s;
            append_utf8(s, cp);
            t.byte_to_symbol[b] = s;
            t.symbol_to_byte[cp] = static_cast<unsigned char>(b);
        }
        return t;
    }();
    return tables;
}

struct CodePoint {
    char32_t cp;
    std::size_t begin;  // source byte range
    std::size_t end;
};

std::vector<CodePoint> decode_utf8(const std::string& text) {
    std::vector<CodePoint> out;
    std::size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        if (len == 0 || i + len > text.size()) {
            throw Error(ErrorKind::InvalidArgument, "invalid UTF-8 at byte " + std::to_string(i));
        }
        char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
        for (int k = 1; k < len; ++k) {
            unsigned char cc = static_cast<unsigned char>(text[i + k]);
            if ((cc >> 6) != 0x2) throw Error(ErrorKind::InvalidArgument, "invalid UTF-8 at byte " + std::to_string(i));
            cp = (cp << 6) | (cc & 0x3F);
        }
        out.push_back({cp, i, i + len});
        i += len;
    }
    return out;
}

bool starts_with_ascii(const std::vector<CodePoint>& cps, std::size_t pos, const char* lit) {
    for (std::size_t k = 0; lit[k] != '\0'; ++k) {
        if (pos + k >= cps.size() || cps[pos + k].cp != static_cast<char32_t>(lit[k])) return false;
    }
    return true;
}

// Length (in code points) of the pre-token starting at pos. Mirrors the CLIP
// pattern: contractions | letters+ | single digit | other+.
std::size_t match_pretoken(const std::vector<CodePoint>& cps, std::size_t pos) {
    static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
    for (const char* c : contractions) {
        if (starts_with_ascii(cps, pos, c)) return std::char_traits<char>::length(c);
    }
    char32_t cp = cps[pos].cp;
    if (unicode::is_letter(cp)) {
        std::size_t e = pos + 1;
        while (e < cps.size() && unicode::is_letter(cps[e].cp)) ++e;
        return e - pos;
    }
    if (unicode::is_number(cp)) return 1;
    std::size_t e = pos + 1;
    while (e < cps.size() && !unicode::is_letter(cps[e].cp) && !unicode::is_number(cps[e].cp) &&
           !unicode::is_space(cps[e].cp)) {
        ++e;
    }
    return e - pos;
}

struct Symbol {
    std::string text;
    std::size_t nbytes;
};

std::vector<Symbol> bpe_symbols(const std::string& word_bytes, const Vocabulary& vocab) {
    const auto& tables = byte_tables();
    std::vector<Symbol> syms;
    syms.reserve(word_bytes.size());
    for (unsigned char b : word_bytes) syms.push_back({tables.byte_to_symbol[b], 1});
    if (syms.empty()) return syms;
    syms.back().text += vocab.end_of_word;

    std::string key;
    while (syms.size() > 1) {
        int best = INT_MAX;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            key.assign(syms[i].text).append(" ").append(syms[i + 1].text);
            auto it = vocab.merge_rank.find(key);
            if (it != vocab.merge_rank.end() && it->second < best) {
                best = it->second;
                best_i = i;
            }
        }
        if (best == INT_MAX) break;
        const std::string left = syms[best_i].text;
        const std::string right = syms[best_i + 1].text;
        std::vector<Symbol> merged;
        merged.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size();) {
            if (i + 1 < syms.size() && syms[i].text == left && syms[i + 1].text == right) {
                merged.push_back({left + right, syms[i].nbytes + syms[i + 1].nbytes});
                i += 2;
            } else {
                merged.push_back(syms[i]);
                ++i;
            }
        }
        syms.swap(merged);
    }
    return syms;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

namespace unicode {

bool is_space(char32_t cp) {
    return cp == ' ' || (cp >= 0x09 && cp <= 0x0D) || (cp >= 0x1C && cp <= 0x1F) || cp == 0x85 || cp == 0xA0 ||
           cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
           cp == 0x205F || cp == 0x3000;
}

bool is_number(char32_t cp) {
    if (cp >= '0' && cp <= '9') return true;
    if (cp == 0xB2 || cp == 0xB3 || cp == 0xB9 || (cp >= 0xBC && cp <= 0xBE)) return true;
    if (cp >= 0x660 && cp <= 0x669) return true;   // Arabic-Indic
    if (cp >= 0x966 && cp <= 0x96F) return true;   // Devanagari
    if (cp >= 0x2070 && cp <= 0x2079 && cp != 0x2071 && cp != 0x2072 && cp != 0x2073) return true;
    if (cp >= 0x2080 && cp <= 0x2089) return true;
    if (cp >= 0x2150 && cp <= 0x2189) return true;  // number forms
    if (cp >= 0x2460 && cp <= 0x249B) return true;  // enclosed numerals
    if (cp >= 0xFF10 && cp <= 0xFF19) return true;
    return false;
}

// Approximation of \p{L}: ASCII and Latin-1 letters exactly, and for the rest of
// the BMP anything outside the punctuation, symbol and emoji blocks.
bool is_letter(char32_t cp) {
    if (cp < 0x80) return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    if (cp < 0x100) return cp == 0xAA || cp == 0xB5 || cp == 0xBA || (cp >= 0xC0 && cp != 0xD7 && cp != 0xF7);
    if (is_space(cp) || is_number(cp)) return false;
    if (cp >= 0x2000 && cp <= 0x2BFF) return cp >= 0x2C00;  // punctuation, symbols, arrows, shapes
    if (cp >= 0x3000 && cp <= 0x303F) return cp == 0x3005 || cp == 0x3006;
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
    if (cp >= 0xFF00 && cp <= 0xFF20) return false;
    if (cp >= 0xFF3B && cp <= 0xFF40) return false;
    if (cp >= 0xFF5B && cp <= 0xFF65) return false;
    if (cp >= 0x1F000) return false;  // emoji and pictographs
    if (cp >= 0xE000 && cp <= 0xF8FF) return false;  // private use
    if (cp >= 0x0300 && cp <= 0x036F) return false;  // combining marks
    return true;
}

char32_t to_lower(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp < 0x80) return cp;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    if (cp >= 0x100 && cp <= 0x17F && cp != 0x130 && cp != 0x131 && cp != 0x138 && cp != 0x149 && cp != 0x178 &&
        cp != 0x17F) {
        bool odd_is_upper = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
        if (odd_is_upper) return (cp % 2 == 1) ? cp + 1 : cp;
        return (cp % 2 == 0) ? cp + 1 : cp;
    }
    if (cp == 0x178) return 0xFF;
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;  // Greek
    if (cp >= 0x410 && cp <= 0x42F) return cp + 32;                 // Cyrillic
    if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
    if (cp >= 0xFF21 && cp <= 0xFF3A) return cp + 32;  // full-width Latin
    return cp;
}

}  // namespace unicode

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    if (it == token_to_id.end()) throw Error(ErrorKind::UnknownSymbol, "token not in vocabulary: " + token);
    return it->second;
}

Vocabulary make_vocabulary(std::unordered_map<std::string, int> token_to_id,
                           std::vector<std::pair<std::string, std::string>> merges, int context_length,
                           const std::string& sos_token, const std::string& eos_token) {
    if (context_length < 2) throw Error(ErrorKind::InvalidArgument, "context_length must be >= 2");
    Vocabulary v;
    v.context_length = context_length;
    int max_id = -1;
    for (const auto& [tok, id] : token_to_id) {
        if (id < 0) throw Error(ErrorKind::InvalidArgument, "negative token id for " + tok);
        max_id = std::max(max_id, id);
    }
    v.id_to_token.assign(static_cast<std::size_t>(max_id + 1), std::string());
    std::vector<bool> seen(v.id_to_token.size(), false);
    for (const auto& [tok, id] : token_to_id) {
        if (seen[id]) throw Error(ErrorKind::InvalidArgument, "duplicate token id " + std::to_string(id));
        seen[id] = true;
        v.id_to_token[id] = tok;
    }
    const std::string eow = "</w>";
    for (const auto& [tok, id] : token_to_id) {
        if (tok.size() > eow.size() && tok.compare(tok.size() - eow.size(), eow.size(), eow) == 0) {
            v.end_of_word = eow;
            break;
        }
    }
    auto sos = token_to_id.find(sos_token);
    auto eos = token_to_id.find(eos_token);
    if (sos == token_to_id.end() || eos == token_to_id.end()) {
        throw Error(ErrorKind::InvalidArgument, "vocabulary lacks start/end tokens");
    }
    v.sos_id = sos->second;
    v.eos_id = eos->second;
    if (v.sos_id == v.eos_id) throw Error(ErrorKind::InvalidArgument, "sos_id equals eos_id");
    for (std::size_t r = 0; r < merges.size(); ++r) {
        const auto& [a, b] = merges[r];
        if (!token_to_id.count(a) || !token_to_id.count(b) || !token_to_id.count(a + b)) {
            throw Error(ErrorKind::InvalidArgument, "merge references unknown symbol: " + a + " " + b);
        }
        v.merge_rank.emplace(a + " " + b, static_cast<int>(r));
    }
    v.token_to_id = std::move(token_to_id);
    v.merges = std::move(merges);
    return v;
}

Vocabulary load_vocabulary(const std::string& vocab_json_path, const std::string& merges_path, int context_length) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(vocab_json_path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, vocab_json_path + ": " + e.what());
    }
    std::unordered_map<std::string, int> map;
    map.reserve(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) map.emplace(it.key(), it.value().get<int>());

    std::vector<std::pair<std::string, std::string>> merges;
    std::istringstream in(read_file(merges_path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw Error(ErrorKind::Parse, merges_path + ": malformed merge line: " + line);
        merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return make_vocabulary(std::move(map), std::move(merges), context_length);
}

void save_vocabulary(const Vocabulary& vocab, const std::string& vocab_json_path, const std::string& merges_path) {
    nlohmann::ordered_json j;
    for (std::size_t id = 0; id < vocab.id_to_token.size(); ++id) {
        if (!vocab.id_to_token[id].empty()) j[vocab.id_to_token[id]] = id;
    }
    std::ofstream v(vocab_json_path, std::ios::binary | std::ios::trunc);
    if (!v) throw Error(ErrorKind::IO, "cannot write " + vocab_json_path);
    v << j.dump() << '\n';
    std::ofstream m(merges_path, std::ios::binary | std::ios::trunc);
    if (!m) throw Error(ErrorKind::IO, "cannot write " + merges_path);
    m << "#version: 0.2\n";
    for (const auto& [a, b] : vocab.merges) m << a << ' ' << b << '\n';
    if (!v || !m) throw Error(ErrorKind::IO, "write failed for vocabulary files");
}

std::string normalize_text(const std::string& text) {
    std::string out;
    bool pending_space = false;
    for (const auto& c : decode_utf8(text)) {
        if (unicode::is_space(c.cp)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        append_utf8(out, unicode::to_lower(c.cp));
    }
    return out;
}

std::vector<std::string> bpe(const std::string& word, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (auto& s : bpe_symbols(word, vocab)) out.push_back(std::move(s.text));
    return out;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.source = text;
    seq.ids.push_back(vocab.sos_id);

    const auto cps = decode_utf8(text);
    std::size_t pos = 0;
    while (pos < cps.size()) {
        if (unicode::is_space(cps[pos].cp)) {
            ++pos;
            continue;
        }
        std::vector<CodePoint> piece;
        std::size_t len = 0;
        {
            // Pre-tokenization runs on lowercased code points.
            std::vector<CodePoint> lowered;
            std::size_t e = pos;
            while (e < cps.size() && !unicode::is_space(cps[e].cp)) ++e;
            for (std::size_t k = pos; k < e; ++k) lowered.push_back({unicode::to_lower(cps[k].cp), cps[k].begin, cps[k].end});
            len = match_pretoken(lowered, 0);
            piece.assign(lowered.begin(), lowered.begin() + static_cast<std::ptrdiff_t>(len));
        }
        std::string bytes;
        std::vector<std::size_t> byte_src;  // source offset for each normalized byte
        for (const auto& c : piece) {
            std::size_t before = bytes.size();
            append_utf8(bytes, c.cp);
            std::size_t nb = bytes.size() - before;
            for (std::size_t k = 0; k < nb; ++k) {
                std::size_t src = (nb == c.end - c.begin) ? c.begin + k : c.begin;
                byte_src.push_back(src);
            }
        }
        const std::size_t piece_end = piece.back().end;
        std::size_t off = 0;
        for (const auto& sym : bpe_symbols(bytes, vocab)) {
            auto it = vocab.token_to_id.find(sym.text);
            if (it == vocab.token_to_id.end()) {
                throw Error(ErrorKind::UnknownSymbol, "symbol not representable in vocabulary: " + sym.text);
            }
            seq.ids.push_back(it->second);
            std::size_t b = byte_src[off];
            std::size_t e = off + sym.nbytes < byte_src.size() ? byte_src[off + sym.nbytes] : piece_end;
            seq.char_spans.emplace_back(b, e);
            off += sym.nbytes;
        }
        pos += len;
    }
    seq.ids.push_back(vocab.eos_id);
    seq.n = seq.ids.size() - 2;
    if (static_cast<int>(seq.ids.size()) > vocab.context_length) {
        throw Error(ErrorKind::OverLength, std::to_string(seq.ids.size()) + " tokens exceed context length " +
                                               std::to_string(vocab.context_length));
    }
    return seq;
}

std::string token_text(int id, const Vocabulary& vocab) {
    if (id < 0 || id >= vocab.size()) throw Error(ErrorKind::UnknownSymbol, "id out of range: " + std::to_string(id));
    if (id == vocab.sos_id || id == vocab.eos_id) return vocab.id_to_token[id];
    std::string tok = vocab.id_to_token[id];
    if (!vocab.end_of_word.empty() && tok.size() >= vocab.end_of_word.size() &&
        tok.compare(tok.size() - vocab.end_of_word.size(), vocab.end_of_word.size(), vocab.end_of_word) == 0) {
        tok.resize(tok.size() - vocab.end_of_word.size());
    }
    const auto& tables = byte_tables();
    std::string out;
    for (const auto& c : decode_utf8(tok)) {
        auto it = tables.symbol_to_byte.find(c.cp);
        if (it == tables.symbol_to_byte.end()) {
            append_utf8(out, c.cp);
        } else {
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == vocab.sos_id || id == vocab.eos_id) continue;
        const std::string& raw = vocab.id_to_token.at(id);
        out += token_text(id, vocab);
        if (!vocab.end_of_word.empty() && raw.size() >= vocab.end_of_word.size() &&
            raw.compare(raw.size() - vocab.end_of_word.size(), vocab.end_of_word.size(), vocab.end_of_word) == 0) {
            out.push_back(' ');
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

}  // namespace tokweight
