#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hm/tensor.hpp"

namespace hm {

enum class NormKind { rms, layer };
enum class PositionalKind { rotary, learned };

std::string to_string(NormKind k);
std::string to_string(PositionalKind k);
NormKind parse_norm_kind(const std::string& s);
PositionalKind parse_positional_kind(const std::string& s);

// Normalization epsilon and the gated-MLP width ratio are implementation
// constants (recorded in every run manifest alongside the nonlinearity).
inline constexpr double kNormEps = 1e-6;
inline constexpr int kMlpHiddenRatio = 4;
inline constexpr const char* kMlpNonlinearity = "silu";
inline constexpr double kRopeBase = 10000.0;

struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    NormKind norm_kind = NormKind::rms;
    PositionalKind positional_kind = PositionalKind::rotary;

    int mlp_hidden() const { return kMlpHiddenRatio * d_model; }
    void validate() const;  // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Mat w_q, w_k, w_v;  // d_model x d_model
    Mat w_o;            // d_model x d_model; rows [h*d_head, (h+1)*d_head) are head h's output projection
    Mat w_gate, w_up;   // d_model x mlp_hidden
    Mat w_down;         // mlp_hidden x d_model
    Vec attn_norm_gain, mlp_norm_gain;  // d_model
};

// Immutable after construction; safe to share across threads.
struct WeightSet {
    ModelConfig config;
    Mat token_embedding;  // vocab x d_model
    Mat pos_embedding;    // max_seq_len x d_model (learned positions only, else empty)
    std::vector<LayerWeights> layers;
    Vec final_norm_gain;  // d_model
    Mat unembedding;      // d_model x vocab

    void validate() const;  // shape + finiteness, throws ConfigError
};

struct TokenSequence {
    std::vector<int> ids;

    std::size_t length() const { return ids.size(); }
    void validate(const ModelConfig& config) const;  // throws DataError
};

enum class HookKind { attn_out, mlp_out, resid_post, attn_internals };

std::string to_string(HookKind k);
HookKind parse_hook_kind(const std::string& s);

struct HookSelector {
    bool all_layers = true;
    std::set<int> layers;
    bool all_kinds = true;
    std::set<HookKind> kinds;

    static HookSelector all() { return HookSelector{}; }
    static HookSelector probing();  // attn_out + mlp_out + resid_post, all layers
    static HookSelector none();

    bool wants(int layer, HookKind kind) const;
    void validate(const ModelConfig& config) const;  // throws ConfigError
};

// Additive edit applied to one hook activation during the forward pass
// (the steering module's injection mechanism). x <- x + alpha * direction
// at position == at_pos (single_position) or every position >= at_pos.
struct ActivationEdit {
    int layer = 0;
    HookKind kind = HookKind::mlp_out;  // attn_out | mlp_out | resid_post
    double alpha = 0.0;
    Vec direction;
    std::size_t at_pos = 0;
    bool single_position = false;
};

struct ForwardTrace {
    ModelConfig config;
    std::size_t n_tokens = 0;

    // per layer; empty Mat when the hook was not requested
    std::vector<Mat> attn_out;    // N x d_model
    std::vector<Mat> mlp_out;     // N x d_model
    std::vector<Mat> resid_post;  // N x d_model
    // attn_internals: per (layer, head)
    std::vector<std::vector<Mat>> attn_patterns;  // N x N, post-softmax, causal
    std::vector<std::vector<Mat>> values;         // N x d_head

    Vec final_norm_scale;  // per position: the normalization denominator used by the final norm
    Mat logits;            // N x vocab_size

    std::size_t t_star() const { return n_tokens - 1; }

    bool has(int layer, HookKind kind) const;
    // throw DataError naming (layer, position) when the hook was not captured
    const Mat& hook(int layer, HookKind kind) const;
    const Mat& pattern(int layer, int head) const;
    const Mat& value_mat(int layer, int head) const;
};

// Deterministic random initialization; norm gains start at 1.
WeightSet init_model(const ModelConfig& config, std::uint64_t seed);

ForwardTrace forward_with_hooks(const WeightSet& weights, const TokenSequence& tokens,
                                const HookSelector& hooks,
                                const std::vector<ActivationEdit>& edits = {});

// argmax of the logits at the final prompt position; ties break to the lowest id
int predict_first_token(const ForwardTrace& trace);

struct GenerateOptions {
    int max_new_tokens = 8;
    std::optional<int> eos_id;
    double time_limit_seconds = 30.0;
};

struct GenerateOutput {
    std::vector<int> generated;
    bool truncated_by_time_limit = false;
    double seconds = 0.0;
};

// Greedy decoding with optional activation edits. Edit positions are
// interpreted against the original prompt's t*; the prompt is re-forwarded
// each step (no KV cache), so edits stay in effect for the whole decode.
GenerateOutput generate_greedy(const WeightSet& weights, const TokenSequence& prompt,
                               const std::vector<ActivationEdit>& edits,
                               const GenerateOptions& options);

// internal helpers shared with the trainer (exposed for tests)
namespace modeldetail {
// writes out = normalized(x) * gain, returns the normalization denominator
double norm_row(NormKind kind, const double* x, const double* gain, double* out, std::size_t n);
// rotary rotation applied in place to one head slice; inverse undoes it
void rope_rotate(double* head_vec, std::size_t pos, std::size_t d_head, bool inverse);
} // namespace modeldetail

} // namespace hm
