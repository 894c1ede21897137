#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tokweight {

// Byte-level BPE vocabulary in the CLIP distribution format.
struct Vocabulary {
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;
    std::vector<std::pair<std::string, std::string>> merges;
    std::unordered_map<std::string, int> merge_rank;  // key: left + ' ' + right
    int sos_id = -1;
    int eos_id = -1;
    int context_length = 77;
    // Suffix marking the last symbol of a word ("</w>" for CLIP, empty for plain BPE).
    std::string end_of_word;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& token) const;
};

// Builds and validates a vocabulary. The end-of-word suffix is "</w>" when any
// token carries it, otherwise empty.
Vocabulary make_vocabulary(std::unordered_map<std::string, int> token_to_id,
                           std::vector<std::pair<std::string, std::string>> merges,
                           int context_length = 77,
                           const std::string& sos_token = "<|startoftext|>",
                           const std::string& eos_token = "<|endoftext|>");

Vocabulary load_vocabulary(const std::string& vocab_json_path, const std::string& merges_path,
                           int context_length = 77);

// Writes the token map as JSON and the merges one per line, in rank order.
void save_vocabulary(const Vocabulary& vocab, const std::string& vocab_json_path, const std::string& merges_path);

using ByteSpan = std::pair<std::size_t, std::size_t>;  // half-open [begin, end)

struct TokenSequence {
    std::vector<int> ids;              // N + 2 ids, SOS first and EOS last
    std::vector<ByteSpan> char_spans;  // one per content token, in source bytes
    std::size_t n = 0;                 // content token count
    std::string source;

    std::size_t size() const { return ids.size(); }
};

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

// Lowercase + whitespace cleanup applied before pre-tokenization.
std::string normalize_text(const std::string& text);

// Subword string of a token with the end-of-word marker stripped and byte
// symbols mapped back to raw bytes.
std::string token_text(int id, const Vocabulary& vocab);
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

// BPE of one pre-token (already normalized), returned as symbol strings.
std::vector<std::string> bpe(const std::string& word, const Vocabulary& vocab);

// User-facing span weighting.

struct SpanEntry {
    std::optional<std::string> text;
    std::optional<ByteSpan> range;
    double weight = 1.0;
};

struct SpanWeightSpec {
    double default_weight = 1.0;
    std::vector<SpanEntry> entries;
};

struct TokenWeights {
    std::vector<double> values;

    static TokenWeights ones(std::size_t n) { return TokenWeights{std::vector<double>(n, 1.0)}; }
    std::size_t size() const { return values.size(); }
};

TokenWeights map_span_weights(const TokenSequence& seq, const SpanWeightSpec& spec);

SpanWeightSpec parse_span_spec(const std::string& json_text);
SpanWeightSpec load_span_spec(const std::string& path);

// Helpers for the UTF-8 handling used by the tokenizer.
namespace unicode {
bool is_letter(char32_t cp);
bool is_number(char32_t cp);
bool is_space(char32_t cp);
char32_t to_lower(char32_t cp);
}  // namespace unicode

}  // namespace tokweight
