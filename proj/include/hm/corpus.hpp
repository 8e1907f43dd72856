#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hm/model.hpp"

namespace hm {

// ---------- labels / framings ----------

enum class DecisionLabel { primary, secondary, neither };

std::string to_string(DecisionLabel l);
DecisionLabel parse_decision_label(const std::string& s);

enum class Framing {
    system_user,
    authority_ceo_intern,
    expertise_nature_blog,
    consensus_majority_minority,
};

inline constexpr Framing kAllFramings[] = {
    Framing::system_user,
    Framing::authority_ceo_intern,
    Framing::expertise_nature_blog,
    Framing::consensus_majority_minority,
};

std::string to_string(Framing f);
Framing parse_framing(const std::string& s);

// ---------- constraints ----------

enum class ConstraintKind { language, word_count, sentence_count, keyword_usage, keyword_frequency };

std::string to_string(ConstraintKind k);
ConstraintKind parse_constraint_kind(const std::string& s);

enum class BoundDir { at_least, less_than, at_most };

struct ConstraintSpec {
    ConstraintKind kind;
    // kind-specific parameters (only the relevant ones are meaningful)
    std::string language;       // language
    int threshold = 0;          // word_count / sentence_count / keyword_frequency bound
    BoundDir direction = BoundDir::at_least;
    std::string keyword;        // keyword_usage / keyword_frequency
    bool must_include = true;   // keyword_usage: include vs exclude

    std::string render() const;  // the constraint sentence as prompt text
    // whether a response satisfies this constraint; throws DataError for
    // kinds/languages the text checkers do not support
    bool satisfied_by(const std::string& response) const;
};

struct ConflictPair {
    ConstraintSpec primary;
    ConstraintSpec secondary;
    bool mutually_exclusive = true;
};

// bound-arithmetic / disjointness proof used by the invariant tests
bool provably_exclusive(const ConflictPair& pair);

std::vector<ConflictPair> generate_conflict_pairs(ConstraintKind kind, int n_variations,
                                                  std::uint64_t seed);

// ---------- text prompts ----------

// Reversible byte-level tokenizer: token ids are the UTF-8 bytes of the
// text, so span <-> substring round-trips are exact by construction.
struct ByteTokenizer {
    static constexpr const char* kId = "byte-v1";
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;  // throws DataError on non-byte ids
};

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;  // half-open

    std::size_t size() const { return end - begin; }
    bool overlaps(const TokenSpan& other) const {
        return begin < other.end && other.begin < end;
    }
};

struct PromptRecord {
    std::uint64_t id = 0;
    Framing framing = Framing::system_user;
    ConflictPair pair;
    std::string task_text;
    std::optional<std::string> system_text;
    std::string user_text;
    TokenSpan span_a;  // primary constraint incl. fixed markers, in full_text() tokens
    TokenSpan span_b;  // secondary constraint incl. fixed markers
    std::string tokenizer_id = ByteTokenizer::kId;
    int variation = 0;
    int task_id = 0;
    std::uint64_t seed = 0;

    // the tokenized surface: system_text + "\n" + user_text when a system
    // role exists, else user_text alone
    std::string full_text() const;
    std::vector<int> tokens() const;
    std::string span_text(const TokenSpan& span) const;
};

PromptRecord render_prompt(const ConflictPair& pair, Framing framing, const std::string& task_text,
                           const ByteTokenizer& tokenizer);

std::vector<PromptRecord> generate_corpus(const std::vector<ConstraintKind>& kinds,
                                          int n_variations, const std::vector<Framing>& framings,
                                          const std::vector<std::string>& tasks,
                                          std::uint64_t seed, int jobs = 1);

// deterministic synthetic task texts (the corpus count's free factor)
std::vector<std::string> make_task_bank(int count);

DecisionLabel label_response(const PromptRecord& record, const std::string& response_text);

// response checkers (documented counting rules; shared with compliance metrics)
int count_words(const std::string& text);
int count_sentences(const std::string& text);
int count_keyword(const std::string& text, const std::string& keyword);
bool language_supported(const std::string& language);
// hits against the language's stop-word list; throws DataError when unsupported
int count_language_stopwords(const std::string& text, const std::string& language);

// JSON-lines round trip for the corpus file
std::string prompt_record_to_jsonl(const PromptRecord& record);
PromptRecord prompt_record_from_jsonl(const std::string& line);

// ---------- toy task ----------

// Symbolic vocabulary of the desk-scale analog. The answer the model must
// emit at the ANS slot is the winning constraint symbol (or NEI).
namespace toyvocab {
inline constexpr int TASK = 0;
inline constexpr int ANS = 1;
inline constexpr int NEI = 2;
inline constexpr int EOS = 3;
inline constexpr int ROLE_SYS = 4;
inline constexpr int ROLE_USR = 5;
inline constexpr int ROLE_CEO = 6;
inline constexpr int ROLE_INT = 7;
inline constexpr int ROLE_NAT = 8;
inline constexpr int ROLE_BLG = 9;
inline constexpr int ROLE_MAJ = 10;
inline constexpr int ROLE_MIN = 11;
inline constexpr int CON_BASE = 12;  // CON_A .. CON_Z
inline constexpr int N_CONSTRAINT_SYMBOLS = 26;
inline constexpr int SIZE = CON_BASE + N_CONSTRAINT_SYMBOLS;

std::string token_name(int id);
// (primary, secondary) role marker tokens for a framing
std::pair<int, int> role_tokens(Framing f);
} // namespace toyvocab

struct ToyTaskExample {
    TokenSequence ids;  // [role_a, sym_a, role_b, sym_b, TASK, ANS]
    DecisionLabel winner = DecisionLabel::primary;
    TokenSpan span_a{0, 2};
    TokenSpan span_b{2, 4};
    Framing framing = Framing::system_user;
    std::uint64_t id = 0;

    int primary_symbol() const { return ids.ids[1]; }
    int secondary_symbol() const { return ids.ids[3]; }
    // the token the model should emit at the ANS position
    int answer_token() const;
};

// Per-framing priority probabilities, materialized as a deterministic
// winner table over ordered symbol pairs (seeded shuffle + exact quota),
// so the corpus marginal matches q while the winner stays a learnable
// function of the prompt.
struct ToyPriorityRule {
    struct Probs {
        double q_primary = 0.5;
        double q_neither = 0.0;
    };
    std::map<Framing, Probs> probs;
    int n_symbols = 10;  // symbols drawn from CON_A .. (clamped to 26)

    static ToyPriorityRule uniform(double q_primary, double q_neither = 0.0);
};

std::vector<ToyTaskExample> generate_toy_corpus(int n_examples, const ToyPriorityRule& rule,
                                                const std::vector<std::pair<Framing, double>>& framing_mix,
                                                std::uint64_t seed);

std::string toy_example_to_jsonl(const ToyTaskExample& ex);
ToyTaskExample toy_example_from_jsonl(const std::string& line);

} // namespace hm
