#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace plab {

struct ModelConfig {
    int num_layers = 12;
    int hidden_dim = 64;
    int num_heads = 4;
    int vocab_size = 64;
    int max_seq_len = 64;
    int vision_feature_dim = 32;
    int ffn_dim = 256;

    int head_dim() const { return hidden_dim / num_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Index partition of a token sequence: [pre | vis | ins | res...).
// Spans are contiguous and ordered; res covers [res_start, N) and may be
// empty for a prompt that has not generated anything yet.
struct SequenceLayout {
    int pre_end = 0;   // pre  = [0, pre_end)
    int vis_end = 0;   // vis  = [pre_end, vis_end)
    int ins_end = 0;   // ins  = [vis_end, ins_end)
    int res_start = 0; // res  = [res_start, N), res_start == ins_end

    int vis_begin() const { return pre_end; }
    int n_vis() const { return vis_end - pre_end; }
    int n_prompt() const { return res_start; }
    bool in_vis(int i) const { return i >= pre_end && i < vis_end; }
    void validate(int n_total) const;
};

enum class CkptKind { base_lm = 0, mllm = 1, merged = 2 };

const char* to_string(CkptKind k);
CkptKind ckpt_kind_from_string(const std::string& s);

// Canonical parameter names, layers numbered 1..L:
//   layers.<l>.attn.{q,k,v,o}   hidden x hidden
//   layers.<l>.ffn.{up,down}    hidden x ffn, ffn x hidden
//   layers.<l>.norm.{attn,ffn}  hidden
//   embed.tok                   vocab x hidden
//   embed.pos                   max_seq x hidden
//   unembed                     hidden x vocab
//   projector (mllm/merged)     vision_feature_dim x hidden
struct Checkpoint {
    ModelConfig config;
    CkptKind kind = CkptKind::base_lm;
    std::map<std::string, Tensor> tensors;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    // checks the tensor set is exactly the canonical slots with consistent shapes
    void validate() const;

    // fresh randomly initialized checkpoint (projector included unless base_lm)
    static Checkpoint init_random(const ModelConfig& cfg, CkptKind kind, uint64_t seed,
                                  float init_std = 0.06f);
};

std::string layer_param_name(int layer, const std::string& slot);
// canonical slot suffixes of one decoder layer
const std::vector<std::string>& layer_slots();
// the four attention projection slots
const std::vector<std::string>& attn_slots();

// Vision K/V exclusion: cut layer k in [1, L+1]; layers l >= k ban all
// vision-span keys. k = L+1 means no masking.
struct MaskSpec {
    int cut_layer = 0;

    static std::optional<MaskSpec> none() { return std::nullopt; }
    void validate(int num_layers) const;
    bool active_at(int layer) const { return layer >= cut_layer; }
};

struct ForwardTrace {
    Tensor logits;  // N x vocab
    // attn[l][h] is an N x N post-softmax grid; captured only on request
    std::vector<std::vector<Tensor>> attn;
    // hidden_norms[l][i] = L2 norm of position i after layer l+1
    std::vector<std::vector<float>> hidden_norms;
    bool attention_captured = false;
};

// Embeds a multimodal prompt. Vision rows are projector(vision_features),
// text rows are token-embedding lookups; every row receives its absolute
// position embedding. `n_pre`/`n_ins` split the text tokens around the
// vision span; remaining text tokens form the res span.
std::pair<Tensor, SequenceLayout> embed_multimodal(const Checkpoint& ckpt,
                                                   const Tensor& vision_features,
                                                   const std::vector<int>& text_tokens,
                                                   int n_pre, int n_ins);

// Full-sequence forward pass with causal attention; mask_spec (if present)
// bans vision keys from its cut layer on.
ForwardTrace forward(const Checkpoint& ckpt, const Tensor& x0, const SequenceLayout& layout,
                     const std::optional<MaskSpec>& mask_spec = std::nullopt,
                     bool capture_attention = false, bool capture_hidden_norms = false);

// Runs layers [l_begin, l_end] only, returning the transformed rows (no
// unembedding). Empty range returns x0 unchanged.
Tensor forward_layer_range(const Checkpoint& ckpt, const Tensor& x0, const SequenceLayout& layout,
                           const std::optional<MaskSpec>& mask_spec, int l_begin, int l_end);

struct DecodeResult {
    std::vector<int> tokens;
    // per generated token: its attention rows when that token's position was
    // processed; step_attn[s][l][h] is a 1 x n_keys(s) grid
    std::vector<std::vector<std::vector<Tensor>>> step_attn;
    SequenceLayout layout;  // layout extended over generated positions
    bool attention_captured = false;
};

// Greedy decoding with a per-call KV cache. When capture_attention is set,
// the attention rows of every generated token are recorded (the final token
// gets one extra capture-only step so all generated positions are covered).
DecodeResult decode_greedy(const Checkpoint& ckpt, const Tensor& vision_features,
                           const std::vector<int>& text_tokens, int n_pre, int n_ins,
                           const std::optional<MaskSpec>& mask_spec, int max_new,
                           bool capture_attention = false);

}  // namespace plab
