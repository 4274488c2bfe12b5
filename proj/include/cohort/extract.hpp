#pragma once

// Annotation pipeline: sentence split + tokenization, dictionary lookup with
// longest match, regex rules, and trigger-based negation with a token window.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cohort/datamodel.hpp"

namespace cohort::extract {

enum class Tier : std::uint8_t { system, user };

struct DictionaryEntry {
    std::string term;
    std::optional<std::string> code;
    std::optional<std::string> definition;

    bool operator==(const DictionaryEntry&) const = default;
};

struct Dictionary {
    AnnotationType annotation_type = AnnotationType::diagnosis;
    Tier tier = Tier::system;
    std::vector<DictionaryEntry> entries;

    bool operator==(const Dictionary&) const = default;
};

// `canonical` is a template over capture groups ("$1$2"); empty means the
// matched surface. BIRADS annotations are further normalized to "4b" form.
struct RuleSpec {
    std::string name;
    AnnotationType annotation_type = AnnotationType::birads;
    std::string pattern;
    std::string canonical;

    bool operator==(const RuleSpec&) const = default;
};

enum class ScopeDirection : std::uint8_t { forward, backward };

struct NegationTrigger {
    std::string trigger;
    ScopeDirection direction = ScopeDirection::forward;
    int window = 6;

    bool operator==(const NegationTrigger&) const = default;
};

struct PipelineConfig {
    std::vector<Dictionary> dictionaries;
    std::vector<RuleSpec> rules;
    std::vector<NegationTrigger> negation_triggers;
    std::uint64_t version = 1;

    bool operator==(const PipelineConfig&) const = default;
};

inline constexpr int kDefaultNegationWindow = 6;

std::vector<NegationTrigger> default_negation_triggers();
RuleSpec birads_rule();
// No dictionary entries; default triggers and the BIRADS rule.
PipelineConfig default_config();

// Returns a new config with the entry in the user tier and version + 1.
// Throws DuplicateError when (type, normalized term) is already a user entry.
PipelineConfig add_user_entry(const PipelineConfig& config, AnnotationType type,
                              std::string term, std::optional<std::string> code = std::nullopt,
                              std::optional<std::string> definition = std::nullopt);

struct Token {
    std::size_t begin = 0;  // scalar-value offsets
    std::size_t end = 0;
    std::u32string norm;
    std::size_t sentence = 0;
};

// Word tokens with sentence numbers. Sentences end at . ! ? and newlines;
// periods inside abbreviations (z.B., ca., Dr., bzgl.) and decimals do not.
std::vector<Token> tokenize(std::u32string_view text);

// Half-open token index range.
struct TokenRange {
    std::size_t first = 0;
    std::size_t last = 0;

    bool empty() const { return first >= last; }
    bool contains(std::size_t i) const { return i >= first && i < last; }
    bool operator==(const TokenRange&) const = default;
};

// Up to `window` tokens after (forward) or before (backward) the trigger,
// stopping at the sentence boundary or a contrastive conjunction
// (aber, jedoch, sondern).
TokenRange negation_scope(std::span<const Token> tokens, std::size_t trigger_index,
                          ScopeDirection direction, int window);

// A compiled, immutable pipeline. Safe for concurrent annotate calls.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig config);
    // Compiled entries point into config_; a move keeps those buffers, a copy would not.
    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;
    Pipeline(Pipeline&&) = default;
    Pipeline& operator=(Pipeline&&) = default;

    const PipelineConfig& config() const { return config_; }
    std::uint64_t version() const { return config_.version; }

    // Sorted by (begin, end, type). Deterministic.
    std::vector<Annotation> annotate(std::string_view text) const;

private:
    struct CompiledEntry {
        std::vector<std::u32string> tokens;
        AnnotationType type;
        Tier tier;
        std::size_t order;
        const DictionaryEntry* entry;
    };
    struct CompiledTrigger {
        std::vector<std::u32string> tokens;
        const NegationTrigger* trigger;
    };
    struct CompiledRule;

    PipelineConfig config_;
    std::unordered_map<std::u32string, std::vector<CompiledEntry>> entries_by_first_;
    std::unordered_map<std::u32string, std::vector<CompiledTrigger>> triggers_by_first_;
    std::vector<std::shared_ptr<const CompiledRule>> rules_;
};

std::vector<Annotation> annotate(std::string_view text, const PipelineConfig& config);

nlohmann::json annotations_to_json(const std::vector<Annotation>& annotations);

// Dictionary directory layout: <dir>/system/<type>.tsv and <dir>/user/<type>.tsv,
// each line `term<TAB>code<TAB>definition`.
std::vector<DictionaryEntry> load_dictionary_file(const std::filesystem::path& path);
// Rules file: one rule per line `name<TAB>type<TAB>regex[<TAB>canonical]`.
std::vector<RuleSpec> load_rules(const std::filesystem::path& path);
// Loads both tiers from `dict_dir` (missing directories are empty) and the
// rules file when given (otherwise the built-in BIRADS rule).
PipelineConfig load_config(const std::filesystem::path& dict_dir,
                           const std::optional<std::filesystem::path>& rules_path = {});
void append_user_entry_file(const std::filesystem::path& dict_dir, AnnotationType type,
                            const DictionaryEntry& entry);

enum class Verdict : std::uint8_t { incorrect };

struct FeedbackEntry {
    std::string timestamp;  // ISO-8601 UTC
    std::string annotation_id;
    Verdict verdict = Verdict::incorrect;
    std::string doc_ref;

    bool operator==(const FeedbackEntry&) const = default;
};

nlohmann::json to_json(const FeedbackEntry& entry);
FeedbackEntry feedback_from_json(const nlohmann::json& j);

// Append-only JSON-lines log; a single writer at a time.
class FeedbackLog {
public:
    explicit FeedbackLog(std::filesystem::path path);

    FeedbackEntry record(std::string annotation_id, Verdict verdict, std::string doc_ref);
    std::vector<FeedbackEntry> read_all() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
};

}  // namespace cohort::extract
