#pragma once

#include "isrf/common.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace isrf::reason {

enum class EntityType { Item, User };
enum class Stage { Forward, Backward, Fuse };

std::string entity_type_name(EntityType t);
std::string stage_name(Stage s);

struct SemanticRecord {
    EntityType type = EntityType::Item;
    int index = 0;
    std::string positive_text;
    std::string negative_text;
    std::string fused_text;
};

// Stage templates with {attributes} / {items} / {context} / {positive} /
// {negative} placeholders. Templates are text assets; the embedded defaults
// mirror assets/prompts/ and can be overridden from a directory.
struct Templates {
    std::string item_forward, item_backward, item_fuse;
    std::string user_forward, user_backward, user_fuse;
};

Templates default_templates();
Templates load_templates(const std::string& dir);

using Attributes = std::vector<std::pair<std::string, std::string>>;

std::string render_item_prompt(const Templates& t, const Attributes& attributes, Stage stage,
                               const std::string& positive = "",
                               const std::string& negative = "");

std::string render_user_prompt(const Templates& t, const std::vector<std::string>& sampled_items,
                               Stage stage, const std::string& positive = "",
                               const std::string& negative = "");

// Uniform without-replacement sample of a user's fused item texts for the
// user prompt; deterministic per seed.
std::vector<std::string> sample_user_items(const std::vector<std::string>& fused_item_texts,
                                           int sample_size, std::uint64_t seed);

struct ItemEntity {
    int index = 0;
    Attributes attributes;
};

struct UserEntity {
    int index = 0;
    std::vector<std::string> sampled_item_texts;
};

// Transient transport failure; generate_descriptions retries these.
class TransportError : public Error {
  public:
    using Error::Error;
};

// Missing entry in a file-backed store.
class GapError : public Error {
  public:
    using Error::Error;
};

class ReasonerClient {
  public:
    virtual ~ReasonerClient() = default;
    virtual std::string complete(EntityType type, int index, Stage stage,
                                 const std::string& prompt) = 0;
};

// Replays a pre-generated semantic store; ignores the prompt.
class FileBackedReasoner : public ReasonerClient {
  public:
    explicit FileBackedReasoner(std::vector<SemanticRecord> records);
    static FileBackedReasoner from_store(const std::string& path);
    std::string complete(EntityType type, int index, Stage stage,
                         const std::string& prompt) override;

  private:
    std::map<std::pair<int, int>, SemanticRecord> records_;
};

// OpenAI-style chat-completion endpoint. Base URL from REASONER_URL and
// bearer token from REASONER_TOKEN unless given explicitly.
class HttpReasoner : public ReasonerClient {
  public:
    HttpReasoner(std::string base_url, std::string model, std::string token);
    static HttpReasoner from_env(const std::string& model);
    std::string complete(EntityType type, int index, Stage stage,
                         const std::string& prompt) override;

  private:
    std::string base_url_, model_, token_;
};

struct GenerateOptions {
    int max_attempts = 3;
    int backoff_initial_ms = 100;  // doubles per retry
};

struct GenerateReport {
    std::vector<SemanticRecord> records;
    std::vector<std::string> failures;  // per-entity failure descriptions
    int skipped_existing = 0;
};

// Runs forward -> backward -> fuse per entity, threading stage outputs as
// context. Records are appended to the JSONL store as they complete, so an
// interrupted run resumes from the store.
GenerateReport generate_descriptions(ReasonerClient& client, const Templates& templates,
                                     const std::vector<ItemEntity>& items,
                                     const std::vector<UserEntity>& users,
                                     const std::string& store_path,
                                     const GenerateOptions& opts = {});

std::vector<SemanticRecord> load_store(const std::string& path);
void append_store(const std::string& path, const SemanticRecord& rec);

class EncoderClient {
  public:
    virtual ~EncoderClient() = default;
    virtual Vec encode(const std::string& text) = 0;
    virtual int dimension() const = 0;
};

// Keyed by text: the i-th distinct text maps to row i of the backing matrix.
class FileBackedEncoder : public EncoderClient {
  public:
    FileBackedEncoder(const std::vector<std::string>& texts, Mat rows);
    Vec encode(const std::string& text) override;
    int dimension() const override { return static_cast<int>(rows_.cols()); }

  private:
    std::map<std::string, int> index_;
    Mat rows_;
};

class HttpEncoder : public EncoderClient {
  public:
    HttpEncoder(std::string base_url, std::string model);
    static HttpEncoder from_env(const std::string& model);
    Vec encode(const std::string& text) override;
    int dimension() const override { return dim_; }

  private:
    std::string base_url_, model_;
    int dim_ = -1;  // fixed by the first response
};

// Row i of the result is the encoding of record i's fused text.
EmbeddingMatrix encode_texts(EncoderClient& client, const std::vector<SemanticRecord>& records);

}  // namespace isrf::reason
