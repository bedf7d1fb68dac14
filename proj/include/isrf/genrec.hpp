#pragma once

#include "isrf/common.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace isrf::genrec {

enum class Task { SR, DR };

// --------------------------------------------------------------------------
// Tokenization. Entity ids like "item_7" expand to character-level pieces
// ["item", "_", "7"] that all share one whole-word Z slot; every other token
// gets the shared slot 0. Slot layout: SR -> items at 1..|V|; DR -> users at
// 1..|U|, items at |U|+1..|U|+|V|.
// --------------------------------------------------------------------------

struct TokenizedInput {
    std::vector<int> tokens;   // X
    std::vector<int> indices;  // Z, aligned 1:1 with tokens
    std::vector<int> target;   // Y
};

class Tokenizer {
  public:
    Tokenizer(int n_users, int n_items);

    // Registers every whitespace-separated word of a template. Entity ids
    // are expanded; call for all templates before tokenizing.
    void register_template(const std::string& text);

    TokenizedInput tokenize(const std::string& text, Task task) const;
    std::string detokenize(const std::vector<int>& tokens) const;

    // Token pieces of an entity id, without EOS.
    std::vector<int> item_token_sequence(int item) const;
    std::vector<int> user_token_sequence(int user) const;

    // Concatenates piece strings and resolves to an item index; -1 if the
    // sequence does not spell a known item id.
    int decode_item(const std::vector<int>& tokens) const;

    int slot_for_item(Task task, int item) const;
    int slot_for_user(Task task, int user) const;
    int num_slots(Task task) const;

    int vocab_size() const { return static_cast<int>(tokens_.size()); }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int token_id(const std::string& piece) const;
    const std::string& token_string(int id) const { return tokens_.at(id); }
    int n_users() const { return n_users_; }
    int n_items() const { return n_items_; }

  private:
    int add(const std::string& piece);
    std::vector<std::string> expand_word(const std::string& word, Task task,
                                         std::vector<int>* slots) const;

    int n_users_, n_items_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int bos_, eos_;
};

// --------------------------------------------------------------------------
// Whole-word tables and soft prompts.
// --------------------------------------------------------------------------

struct WholeWordTables {
    Vec omega0;   // shared non-ID embedding, d
    Mat omega_s;  // (|V|+1) x d trainable SR table; items at rows 1..|V|
    Mat omega_t;  // (|U|+|V|) x d DR table, overlaid with propagated rows

    Vec lookup(Task task, int z) const;
};

struct PromptBank {
    Mat prompts;       // |P| x d trainable soft prompts
    double beta = 0.1;  // injection scale
};

// X_tilde = [token embeddings; prompt rows] + beta * lookup(Z ++ 0-padding).
Mat inject_inputs(const Mat& token_embeddings, const Mat& prompts, const std::vector<int>& z,
                  const WholeWordTables& tables, double beta, Task task);

// Routes d(X_tilde) back: returns the gradient of the token-embedding block,
// accumulates into d_prompts and the beta-scaled whole-word gradients.
struct InjectGrads {
    Mat d_token_embeddings;
    Mat d_prompts;
    Vec d_omega0;
    Mat d_table;  // omega_s or omega_t depending on task
};
InjectGrads inject_backward(const Mat& d_xtilde, const std::vector<int>& z,
                            const WholeWordTables& tables, double beta, Task task);

// --------------------------------------------------------------------------
// Minimal backbone: 1-layer encoder and 1-layer decoder, single-head
// attention with residuals, sinusoidal positions, no layer norm.
// --------------------------------------------------------------------------

struct BackboneParams {
    Mat tok_emb;                             // vocab x d
    Mat wq_enc, wk_enc, wv_enc, wo_enc;      // d x d
    Mat wq_dec, wk_dec, wv_dec, wo_dec;
    Mat wq_x, wk_x, wv_x, wo_x;              // cross attention
    Mat w_out;                               // d x vocab
    Vec b_out;                               // vocab

    int d() const { return static_cast<int>(tok_emb.cols()); }
    int vocab() const { return static_cast<int>(tok_emb.rows()); }
};

BackboneParams backbone_init(int vocab, int d, std::uint64_t seed);
BackboneParams backbone_zeros(int vocab, int d);

struct AttnCache {
    Mat x, ctx, q, k, v, a, h;
    bool causal = false;
};

struct ForwardCache {
    Mat enc_in;          // X_tilde + positions
    AttnCache enc;
    Mat henc;
    std::vector<int> dec_tokens;
    Mat dec_emb;
    AttnCache dec_self;
    Mat d1;
    AttnCache cross;
    Mat d2;
};

Mat positional_encoding(int length, int d);

// Encoder half only; returns H_enc for repeated decoding against one input.
Mat encode_input(const BackboneParams& p, const Mat& xtilde);
Mat decode_logits(const BackboneParams& p, const Mat& henc, const std::vector<int>& dec_tokens,
                  ForwardCache* cache);

// dec_tokens is the shifted-right decoder input (BOS first). Returns
// per-position vocabulary logits, |dec_tokens| x vocab.
Mat seq_model_forward(const BackboneParams& p, const Mat& xtilde,
                      const std::vector<int>& dec_tokens, ForwardCache* cache = nullptr);

struct BackboneGrads {
    Mat tok_emb;
    Mat wq_enc, wk_enc, wv_enc, wo_enc;
    Mat wq_dec, wk_dec, wv_dec, wo_dec;
    Mat wq_x, wk_x, wv_x, wo_x;
    Mat w_out;
    Vec b_out;
};
BackboneGrads backbone_grads_zero(const BackboneParams& p);

// Accumulates parameter gradients and returns d(X_tilde). Decoder token
// embedding gradients go into grads.tok_emb.
Mat seq_model_backward(const BackboneParams& p, const ForwardCache& cache, const Mat& d_logits,
                       BackboneGrads& grads);

// Mean over sequences of the per-sequence mean token cross-entropy.
struct GenerationLoss {
    double loss = 0.0;
    std::vector<Mat> d_logits;  // one per sequence
};
GenerationLoss generation_loss(const std::vector<Mat>& logits,
                               const std::vector<std::vector<int>>& targets);

// --------------------------------------------------------------------------
// Beam search.
// --------------------------------------------------------------------------

class TokenTrie {
  public:
    void insert(const std::vector<int>& seq);
    const TokenTrie* child(int token) const;
    std::vector<int> allowed_tokens() const;
    bool empty() const { return children_.empty(); }

  private:
    std::map<int, TokenTrie> children_;
};

struct BeamResult {
    std::vector<int> tokens;  // without BOS; includes EOS when emitted
    double log_prob = 0.0;
};

// Pure summed log-probability, no length normalization. A beam completes at
// EOS or at max_len. With a constraint trie, expansion is restricted to trie
// continuations. Results sorted by score descending, ties lexicographic.
std::vector<BeamResult> beam_search(const BackboneParams& p, const Mat& xtilde, int width,
                                    int max_len, int bos, int eos,
                                    const TokenTrie* constraint = nullptr);

}  // namespace isrf::genrec
