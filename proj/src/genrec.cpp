#include "isrf/genrec.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace isrf::genrec {

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

Tokenizer::Tokenizer(int n_users, int n_items) : n_users_(n_users), n_items_(n_items) {
    bos_ = add("<bos>");
    eos_ = add("<eos>");
    add("user");
    add("item");
    add("_");
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
}

int Tokenizer::add(const std::string& piece) {
    auto it = ids_.find(piece);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(piece);
    ids_.emplace(piece, id);
    return id;
}

int Tokenizer::token_id(const std::string& piece) const {
    auto it = ids_.find(piece);
    if (it == ids_.end()) throw Error("unknown token: " + piece);
    return it->second;
}

namespace {

bool parse_entity(const std::string& word, std::string* prefix, int* index) {
    const auto us = word.find('_');
    if (us == std::string::npos) return false;
    const std::string head = word.substr(0, us);
    if (head != "user" && head != "item") return false;
    const std::string digits = word.substr(us + 1);
    if (digits.empty()) return false;
    for (char c : digits)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    *prefix = head;
    *index = std::stoi(digits);
    return true;
}

}  // namespace

void Tokenizer::register_template(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        std::string prefix;
        int index;
        if (parse_entity(word, &prefix, &index)) continue;  // pieces already present
        add(word);
    }
}

std::vector<std::string> Tokenizer::expand_word(const std::string& word, Task task,
                                                std::vector<int>* slots) const {
    std::string prefix;
    int index;
    std::vector<std::string> pieces;
    if (parse_entity(word, &prefix, &index)) {
        int slot;
        if (prefix == "item") {
            if (index < 0 || index >= n_items_)
                throw Error("unknown entity: " + word + " (items: " + std::to_string(n_items_) +
                            ")");
            slot = slot_for_item(task, index);
        } else {
            if (index < 0 || index >= n_users_)
                throw Error("unknown entity: " + word + " (users: " + std::to_string(n_users_) +
                            ")");
            slot = slot_for_user(task, index);
        }
        pieces.push_back(prefix);
        pieces.push_back("_");
        const std::string digits = word.substr(word.find('_') + 1);
        for (char c : digits) pieces.push_back(std::string(1, c));
        slots->assign(pieces.size(), slot);
    } else {
        pieces.push_back(word);
        slots->assign(1, 0);
    }
    return pieces;
}

TokenizedInput Tokenizer::tokenize(const std::string& text, Task task) const {
    TokenizedInput out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        std::vector<int> slots;
        const auto pieces = expand_word(word, task, &slots);
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            auto it = ids_.find(pieces[i]);
            if (it == ids_.end()) throw Error("unknown token: " + pieces[i]);
            out.tokens.push_back(it->second);
            out.indices.push_back(slots[i]);
        }
    }
    return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += " ";
        out += tokens_.at(tokens[i]);
    }
    return out;
}

std::vector<int> Tokenizer::item_token_sequence(int item) const {
    if (item < 0 || item >= n_items_) throw Error("item index out of range");
    std::vector<int> seq = {token_id("item"), token_id("_")};
    for (char c : std::to_string(item)) seq.push_back(token_id(std::string(1, c)));
    return seq;
}

std::vector<int> Tokenizer::user_token_sequence(int user) const {
    if (user < 0 || user >= n_users_) throw Error("user index out of range");
    std::vector<int> seq = {token_id("user"), token_id("_")};
    for (char c : std::to_string(user)) seq.push_back(token_id(std::string(1, c)));
    return seq;
}

int Tokenizer::decode_item(const std::vector<int>& tokens) const {
    std::string joined;
    for (int t : tokens) {
        if (t == eos_ || t == bos_) continue;
        joined += tokens_.at(t);
    }
    std::string prefix;
    int index;
    if (!parse_entity(joined, &prefix, &index)) return -1;
    if (prefix != "item" || index >= n_items_) return -1;
    return index;
}

int Tokenizer::slot_for_item(Task task, int item) const {
    return task == Task::SR ? 1 + item : 1 + n_users_ + item;
}

int Tokenizer::slot_for_user(Task task, int user) const {
    // SR has no user slots; user tokens share the non-ID embedding.
    return task == Task::SR ? 0 : 1 + user;
}

int Tokenizer::num_slots(Task task) const {
    return task == Task::SR ? 1 + n_items_ : 1 + n_users_ + n_items_;
}

// ---------------------------------------------------------------------------
// Whole-word tables and injection
// ---------------------------------------------------------------------------

Vec WholeWordTables::lookup(Task task, int z) const {
    if (z == 0) return omega0;
    if (task == Task::SR) {
        if (z < 0 || z >= omega_s.rows())
            throw Error("whole-word index out of range for SR table: " + std::to_string(z));
        return omega_s.row(z).transpose();
    }
    if (z < 1 || z > omega_t.rows())
        throw Error("whole-word index out of range for DR table: " + std::to_string(z));
    return omega_t.row(z - 1).transpose();
}

Mat inject_inputs(const Mat& token_embeddings, const Mat& prompts, const std::vector<int>& z,
                  const WholeWordTables& tables, double beta, Task task) {
    const auto n = token_embeddings.rows();
    const auto p = prompts.rows();
    if (static_cast<Eigen::Index>(z.size()) != n)
        throw Error("inject_inputs: Z length must match token count");
    if (prompts.cols() != token_embeddings.cols())
        throw Error("inject_inputs: prompt width mismatch");
    Mat xtilde(n + p, token_embeddings.cols());
    xtilde.topRows(n) = token_embeddings;
    xtilde.bottomRows(p) = prompts;
    if (beta != 0.0) {
        for (Eigen::Index i = 0; i < n; ++i)
            xtilde.row(i) += beta * tables.lookup(task, z[i]).transpose();
        for (Eigen::Index i = 0; i < p; ++i)
            xtilde.row(n + i) += beta * tables.omega0.transpose();  // prompt positions use slot 0
    }
    return xtilde;
}

InjectGrads inject_backward(const Mat& d_xtilde, const std::vector<int>& z,
                            const WholeWordTables& tables, double beta, Task task) {
    const auto n = static_cast<Eigen::Index>(z.size());
    const auto p = d_xtilde.rows() - n;
    InjectGrads g;
    g.d_token_embeddings = d_xtilde.topRows(n);
    g.d_prompts = d_xtilde.bottomRows(p);
    g.d_omega0 = Vec::Zero(d_xtilde.cols());
    g.d_table = task == Task::SR ? Mat::Zero(tables.omega_s.rows(), tables.omega_s.cols())
                                 : Mat::Zero(tables.omega_t.rows(), tables.omega_t.cols());
    if (beta == 0.0) return g;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (z[i] == 0) {
            g.d_omega0 += beta * d_xtilde.row(i).transpose();
        } else if (task == Task::SR) {
            g.d_table.row(z[i]) += beta * d_xtilde.row(i);
        } else {
            g.d_table.row(z[i] - 1) += beta * d_xtilde.row(i);
        }
    }
    for (Eigen::Index i = 0; i < p; ++i) g.d_omega0 += beta * d_xtilde.row(n + i).transpose();
    return g;
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

namespace {

Mat uniform_matrix(Eigen::Index r, Eigen::Index c, double bound, Rng& rng) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = (2.0 * rng.unit() - 1.0) * bound;
    return m;
}

Mat row_softmax(const Mat& scores) {
    Mat probs(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        Eigen::ArrayXd e = (scores.row(i).array() - m).exp();
        probs.row(i) = (e / e.sum()).matrix();
    }
    return probs;
}

constexpr double kMasked = -1e30;

AttnCache attn_forward(const Mat& x, const Mat& ctx, const Mat& wq, const Mat& wk, const Mat& wv,
                       bool causal) {
    AttnCache c;
    c.x = x;
    c.ctx = ctx;
    c.causal = causal;
    c.q = x * wq;
    c.k = ctx * wk;
    c.v = ctx * wv;
    Mat scores = c.q * c.k.transpose() / std::sqrt(static_cast<double>(x.cols()));
    if (causal) {
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = kMasked;
    }
    c.a = row_softmax(scores);
    c.h = c.a * c.v;
    return c;
}

// Output of the block is x + h * wo; accumulates weight grads, returns dx and
// adds the k/v path gradient into d_ctx.
Mat attn_backward(const AttnCache& c, const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo,
                  const Mat& d_out, Mat& d_wq, Mat& d_wk, Mat& d_wv, Mat& d_wo, Mat& d_ctx) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.x.cols()));
    Mat dx = d_out;  // residual
    const Mat dh = d_out * wo.transpose();
    d_wo += c.h.transpose() * d_out;
    const Mat da = dh * c.v.transpose();
    const Mat dv = c.a.transpose() * dh;
    Mat ds(da.rows(), da.cols());
    for (Eigen::Index i = 0; i < da.rows(); ++i) {
        const double dot = da.row(i).dot(c.a.row(i));
        ds.row(i) = c.a.row(i).cwiseProduct((da.row(i).array() - dot).matrix());
    }
    const Mat dq = ds * c.k * inv_sqrt_d;
    const Mat dk = ds.transpose() * c.q * inv_sqrt_d;
    d_wq += c.x.transpose() * dq;
    dx += dq * wq.transpose();
    d_wk += c.ctx.transpose() * dk;
    d_ctx += dk * wk.transpose();
    d_wv += c.ctx.transpose() * dv;
    d_ctx += dv * wv.transpose();
    return dx;
}

}  // namespace

BackboneParams backbone_init(int vocab, int d, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    BackboneParams p;
    p.tok_emb = uniform_matrix(vocab, d, bound, rng);
    for (Mat* w : {&p.wq_enc, &p.wk_enc, &p.wv_enc, &p.wo_enc, &p.wq_dec, &p.wk_dec, &p.wv_dec,
                   &p.wo_dec, &p.wq_x, &p.wk_x, &p.wv_x, &p.wo_x})
        *w = uniform_matrix(d, d, bound, rng);
    p.w_out = uniform_matrix(d, vocab, bound, rng);
    p.b_out = Vec::Zero(vocab);
    return p;
}

BackboneParams backbone_zeros(int vocab, int d) {
    BackboneParams p;
    p.tok_emb = Mat::Zero(vocab, d);
    for (Mat* w : {&p.wq_enc, &p.wk_enc, &p.wv_enc, &p.wo_enc, &p.wq_dec, &p.wk_dec, &p.wv_dec,
                   &p.wo_dec, &p.wq_x, &p.wk_x, &p.wv_x, &p.wo_x})
        *w = Mat::Zero(d, d);
    p.w_out = Mat::Zero(d, vocab);
    p.b_out = Vec::Zero(vocab);
    return p;
}

BackboneGrads backbone_grads_zero(const BackboneParams& p) {
    BackboneGrads g;
    g.tok_emb = Mat::Zero(p.tok_emb.rows(), p.tok_emb.cols());
    const int d = p.d();
    for (Mat* w : {&g.wq_enc, &g.wk_enc, &g.wv_enc, &g.wo_enc, &g.wq_dec, &g.wk_dec, &g.wv_dec,
                   &g.wo_dec, &g.wq_x, &g.wk_x, &g.wv_x, &g.wo_x})
        *w = Mat::Zero(d, d);
    g.w_out = Mat::Zero(p.w_out.rows(), p.w_out.cols());
    g.b_out = Vec::Zero(p.b_out.size());
    return g;
}

Mat positional_encoding(int length, int d) {
    Mat pos(length, d);
    for (int i = 0; i < length; ++i) {
        for (int j = 0; j < d; ++j) {
            const double angle = i / std::pow(10000.0, 2.0 * (j / 2) / d);
            pos(i, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pos;
}

Mat encode_input(const BackboneParams& p, const Mat& xtilde) {
    if (xtilde.cols() != p.d())
        throw Error("encode_input: input width " + std::to_string(xtilde.cols()) +
                    " != model width " + std::to_string(p.d()));
    const Mat enc_in = xtilde + positional_encoding(static_cast<int>(xtilde.rows()), p.d());
    const AttnCache enc = attn_forward(enc_in, enc_in, p.wq_enc, p.wk_enc, p.wv_enc, false);
    return enc_in + enc.h * p.wo_enc;
}

Mat decode_logits(const BackboneParams& p, const Mat& henc, const std::vector<int>& dec_tokens,
                  ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.henc = henc;
    c.dec_tokens = dec_tokens;
    const int t = static_cast<int>(dec_tokens.size());
    c.dec_emb.resize(t, p.d());
    for (int i = 0; i < t; ++i) c.dec_emb.row(i) = p.tok_emb.row(dec_tokens[i]);
    c.dec_emb += positional_encoding(t, p.d());

    c.dec_self = attn_forward(c.dec_emb, c.dec_emb, p.wq_dec, p.wk_dec, p.wv_dec, true);
    c.d1 = c.dec_emb + c.dec_self.h * p.wo_dec;
    c.cross = attn_forward(c.d1, c.henc, p.wq_x, p.wk_x, p.wv_x, false);
    c.d2 = c.d1 + c.cross.h * p.wo_x;

    return (c.d2 * p.w_out).rowwise() + p.b_out.transpose();
}

Mat seq_model_forward(const BackboneParams& p, const Mat& xtilde,
                      const std::vector<int>& dec_tokens, ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.enc_in = xtilde + positional_encoding(static_cast<int>(xtilde.rows()), p.d());
    if (xtilde.cols() != p.d())
        throw Error("seq_model_forward: input width " + std::to_string(xtilde.cols()) +
                    " != model width " + std::to_string(p.d()));
    c.enc = attn_forward(c.enc_in, c.enc_in, p.wq_enc, p.wk_enc, p.wv_enc, false);
    const Mat henc = c.enc_in + c.enc.h * p.wo_enc;
    return decode_logits(p, henc, dec_tokens, &c);
}

Mat seq_model_backward(const BackboneParams& p, const ForwardCache& c, const Mat& d_logits,
                       BackboneGrads& g) {
    g.w_out += c.d2.transpose() * d_logits;
    g.b_out += d_logits.colwise().sum().transpose();
    const Mat dd2 = d_logits * p.w_out.transpose();

    Mat dhenc = Mat::Zero(c.henc.rows(), c.henc.cols());
    Mat dd1 = attn_backward(c.cross, p.wq_x, p.wk_x, p.wv_x, p.wo_x, dd2, g.wq_x, g.wk_x, g.wv_x,
                            g.wo_x, dhenc);

    Mat ddec_ctx = Mat::Zero(c.dec_emb.rows(), c.dec_emb.cols());
    Mat ddec_emb = attn_backward(c.dec_self, p.wq_dec, p.wk_dec, p.wv_dec, p.wo_dec, dd1, g.wq_dec,
                                 g.wk_dec, g.wv_dec, g.wo_dec, ddec_ctx);
    ddec_emb += ddec_ctx;
    for (std::size_t i = 0; i < c.dec_tokens.size(); ++i)
        g.tok_emb.row(c.dec_tokens[i]) += ddec_emb.row(static_cast<Eigen::Index>(i));

    Mat denc_ctx = Mat::Zero(c.enc_in.rows(), c.enc_in.cols());
    Mat denc_in = attn_backward(c.enc, p.wq_enc, p.wk_enc, p.wv_enc, p.wo_enc, dhenc, g.wq_enc,
                                g.wk_enc, g.wv_enc, g.wo_enc, denc_ctx);
    denc_in += denc_ctx;
    return denc_in;  // equals d(X_tilde): positions are constants
}

GenerationLoss generation_loss(const std::vector<Mat>& logits,
                               const std::vector<std::vector<int>>& targets) {
    if (logits.size() != targets.size())
        throw Error("generation_loss: logits/targets count mismatch");
    if (logits.empty()) throw Error("generation_loss: empty dataset");
    GenerationLoss out;
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    for (std::size_t s = 0; s < logits.size(); ++s) {
        const Mat& lg = logits[s];
        const auto& y = targets[s];
        if (y.empty()) throw Error("generation_loss: empty target sequence");
        if (lg.rows() != static_cast<Eigen::Index>(y.size()))
            throw Error("generation_loss: logits rows != target length");
        const double inv_t = 1.0 / static_cast<double>(y.size());
        Mat dl(lg.rows(), lg.cols());
        for (Eigen::Index t = 0; t < lg.rows(); ++t) {
            const double m = lg.row(t).maxCoeff();
            Eigen::ArrayXd e = (lg.row(t).array() - m).exp();
            const double z = e.sum();
            out.loss -= inv_n * inv_t * (lg(t, y[t]) - m - std::log(z));
            dl.row(t) = (e / z).matrix() * (inv_n * inv_t);
            dl(t, y[t]) -= inv_n * inv_t;
        }
        out.d_logits.push_back(std::move(dl));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Beam search
// ---------------------------------------------------------------------------

void TokenTrie::insert(const std::vector<int>& seq) {
    TokenTrie* node = this;
    for (int t : seq) node = &node->children_[t];
}

const TokenTrie* TokenTrie::child(int token) const {
    auto it = children_.find(token);
    return it == children_.end() ? nullptr : &it->second;
}

std::vector<int> TokenTrie::allowed_tokens() const {
    std::vector<int> out;
    out.reserve(children_.size());
    for (const auto& [t, _] : children_) out.push_back(t);
    return out;
}

namespace {

struct Beam {
    std::vector<int> tokens;
    double log_prob = 0.0;
    const TokenTrie* node = nullptr;
};

bool beam_less(const Beam& a, const Beam& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
}

}  // namespace

std::vector<BeamResult> beam_search(const BackboneParams& p, const Mat& xtilde, int width,
                                    int max_len, int bos, int eos, const TokenTrie* constraint) {
    if (width < 1) throw Error("beam_search: width must be >= 1");
    if (constraint && constraint->empty()) throw Error("beam_search: empty constraint set");

    // Encoder runs once; the decoder is re-run per prefix (no KV cache).
    const Mat henc = encode_input(p, xtilde);

    auto last_log_probs = [&](const std::vector<int>& prefix) {
        std::vector<int> dec = {bos};
        dec.insert(dec.end(), prefix.begin(), prefix.end());
        const Mat logits = decode_logits(p, henc, dec, nullptr);
        const Eigen::Index last = logits.rows() - 1;
        const double m = logits.row(last).maxCoeff();
        Eigen::ArrayXd e = (logits.row(last).array() - m).exp();
        return ((logits.row(last).array() - m) - std::log(e.sum())).eval();
    };

    std::vector<Beam> active = {{{}, 0.0, constraint}};
    std::vector<Beam> finished;

    for (int step = 0; step < max_len && !active.empty(); ++step) {
        std::vector<Beam> candidates;
        for (const auto& beam : active) {
            const auto lp = last_log_probs(beam.tokens);
            std::vector<int> allowed;
            if (constraint) {
                allowed = beam.node->allowed_tokens();
            } else {
                allowed.resize(p.vocab());
                for (int t = 0; t < p.vocab(); ++t) allowed[t] = t;
            }
            for (int t : allowed) {
                Beam next;
                next.tokens = beam.tokens;
                next.tokens.push_back(t);
                next.log_prob = beam.log_prob + lp(t);
                next.node = constraint ? beam.node->child(t) : nullptr;
                candidates.push_back(std::move(next));
            }
        }
        // EOS hypotheses compete for the same `width` slots before finishing;
        // this keeps width 1 identical to greedy decoding.
        std::sort(candidates.begin(), candidates.end(), beam_less);
        if (static_cast<int>(candidates.size()) > width) candidates.resize(width);
        active.clear();
        for (auto& c : candidates) {
            const bool done = c.tokens.back() == eos || (constraint && c.node && c.node->empty());
            if (done)
                finished.push_back(std::move(c));
            else
                active.push_back(std::move(c));
        }
    }
    // Beams that ran out of length count as complete.
    for (auto& b : active) finished.push_back(std::move(b));

    std::sort(finished.begin(), finished.end(), beam_less);
    if (static_cast<int>(finished.size()) > width) finished.resize(width);
    std::vector<BeamResult> out;
    out.reserve(finished.size());
    for (auto& b : finished) out.push_back({std::move(b.tokens), b.log_prob});
    return out;
}

}  // namespace isrf::genrec
