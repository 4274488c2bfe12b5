#include "cohort/extract.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <tuple>

#include "cohort/errors.hpp"
#include "cohort/text.hpp"

namespace cohort::extract {

namespace {

constexpr std::u32string_view kAbbreviations[] = {U"z.b.", U"ca.", U"dr.", U"bzgl."};
constexpr std::u32string_view kConjunctions[] = {U"aber", U"jedoch", U"sondern"};

char32_t lower_ascii(char32_t c) { return (c >= 'A' && c <= 'Z') ? c + 32 : c; }

// True when the period at `pos` belongs to one of the guarded abbreviations.
bool is_abbreviation_period(std::u32string_view text, std::size_t pos) {
    for (auto abbr : kAbbreviations) {
        for (std::size_t k = 0; k < abbr.size(); ++k) {
            if (abbr[k] != '.' || k > pos) {
                continue;
            }
            const std::size_t start = pos - k;
            if (start + abbr.size() > text.size()) {
                continue;
            }
            if (start > 0 && text::is_word_char(text[start - 1])) {
                continue;
            }
            bool match = true;
            for (std::size_t m = 0; m < abbr.size() && match; ++m) {
                match = lower_ascii(text[start + m]) == abbr[m];
            }
            if (match) {
                return true;
            }
        }
    }
    return false;
}

bool is_sentence_end(std::u32string_view text, std::size_t pos) {
    const char32_t c = text[pos];
    if (c == '!' || c == '?' || c == '\n') {
        return true;
    }
    if (c != '.') {
        return false;
    }
    const bool decimal = pos > 0 && pos + 1 < text.size() && text[pos - 1] >= '0' &&
                         text[pos - 1] <= '9' && text[pos + 1] >= '0' && text[pos + 1] <= '9';
    return !decimal && !is_abbreviation_period(text, pos);
}

bool is_conjunction(const Token& t) {
    return std::find(std::begin(kConjunctions), std::end(kConjunctions), t.norm) !=
           std::end(kConjunctions);
}

std::vector<std::u32string> term_tokens(std::string_view term) {
    std::vector<std::u32string> out;
    for (auto& t : tokenize(text::decode_utf8(term))) {
        out.push_back(std::move(t.norm));
    }
    return out;
}

// Roman numerals I..VI to digits; anything else is returned unchanged.
std::string roman_to_digit(const std::string& s) {
    static const std::map<std::string, std::string> numerals{
        {"I", "1"}, {"II", "2"}, {"III", "3"}, {"IV", "4"}, {"V", "5"}, {"VI", "6"}};
    std::string upper = s;
    for (auto& c : upper) {
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    auto it = numerals.find(upper);
    return it == numerals.end() ? s : it->second;
}

std::string canonical_birads(const std::smatch& m) {
    std::string category = m.size() > 1 ? roman_to_digit(m[1].str()) : m[0].str();
    std::string suffix = m.size() > 2 ? m[2].str() : std::string{};
    for (auto& c : suffix) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return category + suffix;
}

std::string expand_template(const std::string& tmpl, const std::smatch& m) {
    if (tmpl.empty()) {
        return m[0].str();
    }
    std::string out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '$' && i + 1 < tmpl.size() && std::isdigit(static_cast<unsigned char>(tmpl[i + 1]))) {
            const auto group = static_cast<std::size_t>(tmpl[i + 1] - '0');
            if (group < m.size()) {
                out += m[group].str();
            }
            ++i;
        } else {
            out.push_back(tmpl[i]);
        }
    }
    return out;
}

std::string slice(std::u32string_view text, std::size_t begin, std::size_t end) {
    return text::encode_utf8(text.substr(begin, end - begin));
}

std::optional<std::string> optional_field(const std::vector<std::string>& cols, std::size_t i) {
    if (i < cols.size() && !cols[i].empty()) {
        return cols[i];
    }
    return std::nullopt;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) {
            break;
        }
        start = tab + 1;
    }
    return cols;
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    return line;
}

}  // namespace

std::vector<NegationTrigger> default_negation_triggers() {
    using D = ScopeDirection;
    const int w = kDefaultNegationWindow;
    return {
        {"kein", D::forward, w},         {"keine", D::forward, w},
        {"keinen", D::forward, w},       {"nicht", D::forward, w},
        {"ohne", D::forward, w},         {"ausgeschlossen", D::backward, w},
        {"Ausschluss von", D::forward, w}, {"verneint", D::forward, w},
        {"negativ", D::forward, w},      {"abgelehnt", D::backward, w},
        {"verweigert", D::backward, w},
    };
}

RuleSpec birads_rule() {
    return RuleSpec{"birads", AnnotationType::birads,
                    R"(\b(?:BI[- ]?)?RADS(?:\s*:\s*|\s+)?(VI|IV|V|III|II|I|[0-6])([a-c])?\b)",
                    "$1$2"};
}

PipelineConfig default_config() {
    PipelineConfig config;
    config.rules.push_back(birads_rule());
    config.negation_triggers = default_negation_triggers();
    return config;
}

PipelineConfig add_user_entry(const PipelineConfig& config, AnnotationType type,
                              std::string term, std::optional<std::string> code,
                              std::optional<std::string> definition) {
    if (normalize_term(term).empty()) {
        throw InputError("dictionary term must be non-empty");
    }
    PipelineConfig next = config;
    Dictionary* target = nullptr;
    for (auto& d : next.dictionaries) {
        if (d.tier == Tier::user && d.annotation_type == type) {
            target = &d;
            break;
        }
    }
    if (target == nullptr) {
        next.dictionaries.push_back(Dictionary{type, Tier::user, {}});
        target = &next.dictionaries.back();
    }
    const std::string norm = normalize_term(term);
    for (const auto& e : target->entries) {
        if (normalize_term(e.term) == norm) {
            throw DuplicateError("user dictionary already contains " +
                                 std::string(to_string(type)) + " '" + term + "'");
        }
    }
    target->entries.push_back(DictionaryEntry{std::move(term), std::move(code), std::move(definition)});
    ++next.version;
    return next;
}

std::vector<Token> tokenize(std::u32string_view text) {
    std::vector<Token> tokens;
    std::size_t sentence = 0;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (text::is_word_char(text[i])) {
            const std::size_t begin = i;
            while (i < n && text::is_word_char(text[i])) {
                ++i;
            }
            tokens.push_back(Token{begin, i, text::fold(text.substr(begin, i - begin)), sentence});
            continue;
        }
        if (is_sentence_end(text, i)) {
            ++sentence;
        }
        ++i;
    }
    return tokens;
}

TokenRange negation_scope(std::span<const Token> tokens, std::size_t trigger_index,
                          ScopeDirection direction, int window) {
    if (trigger_index >= tokens.size() || window <= 0) {
        return TokenRange{trigger_index + 1, trigger_index + 1};
    }
    const std::size_t sentence = tokens[trigger_index].sentence;
    const auto limit = static_cast<std::size_t>(window);
    if (direction == ScopeDirection::forward) {
        std::size_t last = trigger_index + 1;
        while (last < tokens.size() && last - trigger_index - 1 < limit &&
               tokens[last].sentence == sentence && !is_conjunction(tokens[last])) {
            ++last;
        }
        return TokenRange{trigger_index + 1, last};
    }
    std::size_t first = trigger_index;
    while (first > 0 && trigger_index - first < limit && tokens[first - 1].sentence == sentence &&
           !is_conjunction(tokens[first - 1])) {
        --first;
    }
    return TokenRange{first, trigger_index};
}

struct Pipeline::CompiledRule {
    const RuleSpec* spec;
    std::regex regex;
};

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
    std::size_t order = 0;
    for (const auto& dict : config_.dictionaries) {
        for (const auto& entry : dict.entries) {
            auto toks = term_tokens(entry.term);
            if (toks.empty()) {
                continue;
            }
            auto& bucket = entries_by_first_[toks.front()];
            bucket.push_back(CompiledEntry{std::move(toks), dict.annotation_type, dict.tier, order++, &entry});
        }
    }
    for (const auto& trig : config_.negation_triggers) {
        auto toks = term_tokens(trig.trigger);
        if (toks.empty()) {
            continue;
        }
        triggers_by_first_[toks.front()].push_back(CompiledTrigger{std::move(toks), &trig});
    }
    for (auto& [first, list] : triggers_by_first_) {
        std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
            return a.tokens.size() > b.tokens.size();
        });
    }
    for (const auto& rule : config_.rules) {
        try {
            rules_.push_back(std::make_shared<const CompiledRule>(CompiledRule{
                &rule, std::regex(rule.pattern, std::regex::ECMAScript | std::regex::icase)}));
        } catch (const std::regex_error& e) {
            throw InputError("rule '" + rule.name + "' does not compile: " + e.what());
        }
    }
}

std::vector<Annotation> Pipeline::annotate(std::string_view text_utf8) const {
    const std::u32string text = text::decode_utf8(text_utf8);
    const std::vector<Token> tokens = tokenize(text);
    std::vector<Annotation> out;

    auto matches_at = [&](const std::vector<std::u32string>& seq, std::size_t start) {
        if (start + seq.size() > tokens.size()) {
            return false;
        }
        const std::size_t sentence = tokens[start].sentence;
        for (std::size_t k = 0; k < seq.size(); ++k) {
            const Token& t = tokens[start + k];
            if (t.sentence != sentence || t.norm != seq[k]) {
                return false;
            }
        }
        return true;
    };

    // Dictionary pass: greedy left-to-right, longest match per start token.
    for (std::size_t i = 0; i < tokens.size();) {
        auto it = entries_by_first_.find(tokens[i].norm);
        std::size_t best_len = 0;
        std::map<AnnotationType, const CompiledEntry*> winners;
        if (it != entries_by_first_.end()) {
            for (const auto& cand : it->second) {
                if (cand.tokens.size() < best_len || !matches_at(cand.tokens, i)) {
                    continue;
                }
                if (cand.tokens.size() > best_len) {
                    best_len = cand.tokens.size();
                    winners.clear();
                }
                auto& slot = winners[cand.type];
                if (slot == nullptr || std::tie(cand.tier, cand.order) < std::tie(slot->tier, slot->order)) {
                    slot = &cand;
                }
            }
        }
        if (best_len == 0) {
            ++i;
            continue;
        }
        const std::size_t begin = tokens[i].begin;
        const std::size_t end = tokens[i + best_len - 1].end;
        for (const auto& [type, cand] : winners) {
            Annotation a;
            a.annotation_type = type;
            a.begin = begin;
            a.end = end;
            a.surface = slice(text, begin, end);
            a.canonical_term = cand->entry->term;
            a.code = cand->entry->code;
            a.provenance = cand->tier == Tier::system ? AnnotationSource::system_dictionary
                                                      : AnnotationSource::user_dictionary;
            out.push_back(std::move(a));
        }
        i += best_len;
    }

    // Rule pass over the raw bytes; byte offsets are mapped back to scalar offsets.
    if (!rules_.empty()) {
        const std::string bytes(text_utf8);
        std::vector<std::size_t> byte_to_char(bytes.size() + 1, 0);
        std::size_t ci = 0;
        for (std::size_t b = 0; b < bytes.size(); ++b) {
            if ((static_cast<unsigned char>(bytes[b]) & 0xC0) != 0x80 && b > 0) {
                ++ci;
            }
            byte_to_char[b] = ci;
        }
        byte_to_char[bytes.size()] = text.size();
        for (const auto& rule : rules_) {
            for (auto m = std::sregex_iterator(bytes.begin(), bytes.end(), rule->regex);
                 m != std::sregex_iterator(); ++m) {
                if (m->length(0) == 0) {
                    continue;
                }
                const auto b = static_cast<std::size_t>(m->position(0));
                const auto e = b + static_cast<std::size_t>(m->length(0));
                Annotation a;
                a.annotation_type = rule->spec->annotation_type;
                a.begin = byte_to_char[b];
                a.end = e == bytes.size() ? text.size() : byte_to_char[e];
                a.surface = slice(text, a.begin, a.end);
                a.canonical_term = a.annotation_type == AnnotationType::birads
                                       ? canonical_birads(*m)
                                       : expand_template(rule->spec->canonical, *m);
                a.provenance = AnnotationSource::rule;
                out.push_back(std::move(a));
            }
        }
    }

    // Negation pass.
    struct Scope {
        TokenRange range;
        std::size_t first_token;
        std::size_t last_token;
        std::string surface;
    };
    std::vector<Scope> scopes;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto it = triggers_by_first_.find(tokens[i].norm);
        if (it == triggers_by_first_.end()) {
            continue;
        }
        for (const auto& cand : it->second) {
            if (!matches_at(cand.tokens, i)) {
                continue;
            }
            const std::size_t last = i + cand.tokens.size() - 1;
            const auto& trig = *cand.trigger;
            const std::size_t anchor = trig.direction == ScopeDirection::forward ? last : i;
            scopes.push_back(Scope{negation_scope(tokens, anchor, trig.direction, trig.window), i,
                                   last, slice(text, tokens[i].begin, tokens[last].end)});
            break;
        }
    }
    if (!scopes.empty()) {
        for (auto& a : out) {
            // First token overlapping the annotation.
            auto tok = std::lower_bound(tokens.begin(), tokens.end(), a.begin,
                                        [](const Token& t, std::size_t pos) { return t.end <= pos; });
            if (tok == tokens.end() || tok->begin >= a.end) {
                continue;
            }
            const auto idx = static_cast<std::size_t>(tok - tokens.begin());
            const Scope* best = nullptr;
            std::size_t best_dist = 0;
            for (const auto& s : scopes) {
                if (!s.range.contains(idx)) {
                    continue;
                }
                const std::size_t dist = idx > s.last_token ? idx - s.last_token : s.first_token - idx;
                if (best == nullptr || dist < best_dist) {
                    best = &s;
                    best_dist = dist;
                }
            }
            if (best != nullptr) {
                a.negated = true;
                a.negation_trigger = best->surface;
            }
        }
    }

    std::stable_sort(out.begin(), out.end(), [](const Annotation& x, const Annotation& y) {
        return std::tie(x.begin, x.end, x.annotation_type, x.provenance) <
               std::tie(y.begin, y.end, y.annotation_type, y.provenance);
    });
    return out;
}

std::vector<Annotation> annotate(std::string_view text, const PipelineConfig& config) {
    return Pipeline(config).annotate(text);
}

nlohmann::json annotations_to_json(const std::vector<Annotation>& annotations) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : annotations) {
        nlohmann::json j = {{"annotation_type", to_string(a.annotation_type)},
                            {"begin", a.begin},
                            {"end", a.end},
                            {"surface", a.surface},
                            {"canonical_term", a.canonical_term},
                            {"negated", a.negated},
                            {"provenance", to_string(a.provenance)},
                            {"confidence", a.confidence}};
        if (a.code) {
            j["code"] = *a.code;
        }
        if (a.negation_trigger) {
            j["negation_trigger"] = *a.negation_trigger;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<DictionaryEntry> load_dictionary_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot read dictionary " + path.string());
    }
    std::vector<DictionaryEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        auto cols = split_tabs(line);
        if (normalize_term(cols[0]).empty()) {
            continue;
        }
        entries.push_back(DictionaryEntry{cols[0], optional_field(cols, 1), optional_field(cols, 2)});
    }
    return entries;
}

std::vector<RuleSpec> load_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot read rules file " + path.string());
    }
    std::vector<RuleSpec> rules;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        auto cols = split_tabs(line);
        if (cols.size() < 3) {
            throw InputError(path.string() + ":" + std::to_string(line_no) +
                             ": expected name<TAB>type<TAB>regex");
        }
        rules.push_back(RuleSpec{cols[0], parse_annotation_type(cols[1]), cols[2],
                                 cols.size() > 3 ? cols[3] : std::string{}});
    }
    return rules;
}

PipelineConfig load_config(const std::filesystem::path& dict_dir,
                           const std::optional<std::filesystem::path>& rules_path) {
    PipelineConfig config;
    for (auto [tier, sub] : {std::pair{Tier::system, "system"}, std::pair{Tier::user, "user"}}) {
        for (AnnotationType type : kAllAnnotationTypes) {
            const auto file = dict_dir / sub / (std::string(to_string(type)) + ".tsv");
            if (std::filesystem::exists(file)) {
                config.dictionaries.push_back(Dictionary{type, tier, load_dictionary_file(file)});
            }
        }
    }
    config.rules = rules_path ? load_rules(*rules_path) : std::vector<RuleSpec>{birads_rule()};
    config.negation_triggers = default_negation_triggers();
    return config;
}

void append_user_entry_file(const std::filesystem::path& dict_dir, AnnotationType type,
                            const DictionaryEntry& entry) {
    const auto dir = dict_dir / "user";
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / (std::string(to_string(type)) + ".tsv"), std::ios::app);
    if (!out) {
        throw Error("cannot write user dictionary in " + dir.string());
    }
    out << entry.term << '\t' << entry.code.value_or("") << '\t' << entry.definition.value_or("")
        << '\n';
}

nlohmann::json to_json(const FeedbackEntry& e) {
    return nlohmann::json{{"timestamp", e.timestamp},
                          {"annotation_id", e.annotation_id},
                          {"verdict", "incorrect"},
                          {"doc_ref", e.doc_ref}};
}

FeedbackEntry feedback_from_json(const nlohmann::json& j) {
    if (j.value("verdict", "") != "incorrect") {
        throw InputError("unknown feedback verdict");
    }
    return FeedbackEntry{j.at("timestamp").get<std::string>(),
                         j.at("annotation_id").get<std::string>(), Verdict::incorrect,
                         j.value("doc_ref", "")};
}

FeedbackLog::FeedbackLog(std::filesystem::path path) : path_(std::move(path)) {}

FeedbackEntry FeedbackLog::record(std::string annotation_id, Verdict verdict, std::string doc_ref) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    FeedbackEntry entry{buf, std::move(annotation_id), verdict, std::move(doc_ref)};

    std::lock_guard lock(mutex_);
    if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path());
    }
    std::ofstream out(path_, std::ios::app);
    if (!out) {
        throw Error("cannot append to feedback log " + path_.string());
    }
    out << to_json(entry).dump() << '\n';
    return entry;
}

std::vector<FeedbackEntry> FeedbackLog::read_all() const {
    std::lock_guard lock(mutex_);
    std::vector<FeedbackEntry> entries;
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            entries.push_back(feedback_from_json(nlohmann::json::parse(line)));
        }
    }
    return entries;
}

}  // namespace cohort::extract
