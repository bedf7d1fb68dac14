#include "isrf/reason.hpp"

#include "isrf/io.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace isrf::reason {

std::string entity_type_name(EntityType t) { return t == EntityType::Item ? "item" : "user"; }

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Forward: return "forward";
        case Stage::Backward: return "backward";
        case Stage::Fuse: return "fuse";
    }
    throw Error("stage_name: invalid stage");
}

Templates default_templates() {
    Templates t;
    t.item_forward =
        "You are analyzing a product for a recommendation system.\n"
        "Item attributes:\n{attributes}\n"
        "Think step by step about what types of users might prefer this item.\n"
        "Then write a concise positive description of the interests this item serves.\n";
    t.item_backward =
        "You previously inferred the following positive description of an item:\n{context}\n"
        "Think step by step about what types of users might dislike this item.\n"
        "Then write a concise negative description of the interests this item does not serve.\n";
    t.item_fuse =
        "Positive description of the item:\n{positive}\n"
        "Negative description of the item:\n{negative}\n"
        "Combining both perspectives, summarize what key attributes this item may possess.\n"
        "Write one comprehensive description of the item.\n";
    t.user_forward =
        "You are analyzing a user of a recommendation system.\n"
        "Descriptions of items the user interacted with:\n{items}\n"
        "Think step by step about what this user is interested in.\n"
        "Then write a concise positive description of the user's interests.\n";
    t.user_backward =
        "You previously inferred the following positive description of a user's interests:\n"
        "{context}\n"
        "Think step by step about what this user is likely not interested in.\n"
        "Then write a concise negative description of the user's interests.\n";
    t.user_fuse =
        "Positive description of the user's interests:\n{positive}\n"
        "Negative description of the user's interests:\n{negative}\n"
        "Combining both perspectives, summarize the user's preferences.\n"
        "Write one comprehensive description of the user's interests.\n";
    return t;
}

Templates load_templates(const std::string& dir) {
    Templates t;
    t.item_forward = read_text_file(dir + "/item_forward.txt");
    t.item_backward = read_text_file(dir + "/item_backward.txt");
    t.item_fuse = read_text_file(dir + "/item_fuse.txt");
    t.user_forward = read_text_file(dir + "/user_forward.txt");
    t.user_backward = read_text_file(dir + "/user_backward.txt");
    t.user_fuse = read_text_file(dir + "/user_fuse.txt");
    return t;
}

namespace {

std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = tmpl.find(token, pos)) != std::string::npos) {
        tmpl.replace(pos, token.size(), value);
        pos += value.size();
    }
    return tmpl;
}

}  // namespace

std::string render_item_prompt(const Templates& t, const Attributes& attributes, Stage stage,
                               const std::string& positive, const std::string& negative) {
    switch (stage) {
        case Stage::Forward: {
            if (attributes.empty()) throw Error("render_item_prompt: forward stage needs attributes");
            std::ostringstream attrs;
            for (const auto& [k, v] : attributes) attrs << k << ": " << v << "\n";
            return substitute(t.item_forward, "attributes", attrs.str());
        }
        case Stage::Backward:
            if (positive.empty())
                throw Error("render_item_prompt: backward stage needs the forward output");
            return substitute(t.item_backward, "context", positive);
        case Stage::Fuse:
            if (positive.empty() || negative.empty())
                throw Error("render_item_prompt: fuse stage needs both prior stage outputs");
            return substitute(substitute(t.item_fuse, "positive", positive), "negative", negative);
    }
    throw Error("render_item_prompt: invalid stage");
}

std::string render_user_prompt(const Templates& t, const std::vector<std::string>& sampled_items,
                               Stage stage, const std::string& positive,
                               const std::string& negative) {
    switch (stage) {
        case Stage::Forward: {
            if (sampled_items.empty())
                throw Error("render_user_prompt: forward stage needs sampled item texts");
            std::ostringstream items;
            for (const auto& s : sampled_items) items << "- " << s << "\n";
            return substitute(t.user_forward, "items", items.str());
        }
        case Stage::Backward:
            if (positive.empty())
                throw Error("render_user_prompt: backward stage needs the forward output");
            return substitute(t.user_backward, "context", positive);
        case Stage::Fuse:
            if (positive.empty() || negative.empty())
                throw Error("render_user_prompt: fuse stage needs both prior stage outputs");
            return substitute(substitute(t.user_fuse, "positive", positive), "negative", negative);
    }
    throw Error("render_user_prompt: invalid stage");
}

std::vector<std::string> sample_user_items(const std::vector<std::string>& fused_item_texts,
                                           int sample_size, std::uint64_t seed) {
    if (fused_item_texts.empty()) throw Error("sample_user_items: empty history");
    Rng rng(seed);
    const std::size_t k =
        std::min<std::size_t>(static_cast<std::size_t>(sample_size), fused_item_texts.size());
    return rng.sample_without_replacement(fused_item_texts, k);
}

FileBackedReasoner::FileBackedReasoner(std::vector<SemanticRecord> records) {
    for (auto& r : records) records_.emplace(std::make_pair(static_cast<int>(r.type), r.index), r);
}

FileBackedReasoner FileBackedReasoner::from_store(const std::string& path) {
    return FileBackedReasoner(load_store(path));
}

std::string FileBackedReasoner::complete(EntityType type, int index, Stage stage,
                                         const std::string&) {
    auto it = records_.find(std::make_pair(static_cast<int>(type), index));
    if (it == records_.end()) {
        throw GapError("file-backed store has no record for " + entity_type_name(type) + " " +
                       std::to_string(index));
    }
    switch (stage) {
        case Stage::Forward: return it->second.positive_text;
        case Stage::Backward: return it->second.negative_text;
        case Stage::Fuse: return it->second.fused_text;
    }
    throw Error("FileBackedReasoner: invalid stage");
}

namespace {

std::string env_or_throw(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) throw Error(std::string("environment variable not set: ") + name);
    return v;
}

void configure_client(httplib::Client& cli) {
    cli.set_connection_timeout(10);
    cli.set_read_timeout(120);
}

}  // namespace

HttpReasoner::HttpReasoner(std::string base_url, std::string model, std::string token)
    : base_url_(std::move(base_url)), model_(std::move(model)), token_(std::move(token)) {}

HttpReasoner HttpReasoner::from_env(const std::string& model) {
    const char* token = std::getenv("REASONER_TOKEN");
    return HttpReasoner(env_or_throw("REASONER_URL"), model, token ? token : "");
}

std::string HttpReasoner::complete(EntityType, int, Stage, const std::string& prompt) {
    httplib::Client cli(base_url_);
    configure_client(cli);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    const json body = {{"model", model_},
                       {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw TransportError("reasoner request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("reasoner returned HTTP " + std::to_string(res->status));
    try {
        const json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(std::string("malformed reasoner response: ") + e.what());
    }
}

std::vector<SemanticRecord> load_store(const std::string& path) {
    std::ifstream in(path);
    std::vector<SemanticRecord> out;
    if (!in) return out;  // absent store = empty store
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            SemanticRecord r;
            r.type = rec.at("entity_type").get<std::string>() == "item" ? EntityType::Item
                                                                        : EntityType::User;
            r.index = rec.at("index").get<int>();
            r.positive_text = rec.at("positive").get<std::string>();
            r.negative_text = rec.at("negative").get<std::string>();
            r.fused_text = rec.at("fused").get<std::string>();
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": bad store record: " + e.what());
        }
    }
    return out;
}

void append_store(const std::string& path, const SemanticRecord& rec) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot append to store: " + path);
    const json j = {{"entity_type", entity_type_name(rec.type)},
                    {"index", rec.index},
                    {"positive", rec.positive_text},
                    {"negative", rec.negative_text},
                    {"fused", rec.fused_text}};
    out << j.dump() << "\n";
}

namespace {

std::string complete_with_retry(ReasonerClient& client, EntityType type, int index, Stage stage,
                                const std::string& prompt, const GenerateOptions& opts) {
    int backoff = opts.backoff_initial_ms;
    for (int attempt = 1;; ++attempt) {
        try {
            return client.complete(type, index, stage, prompt);
        } catch (const TransportError&) {
            if (attempt >= opts.max_attempts) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
    }
}

}  // namespace

GenerateReport generate_descriptions(ReasonerClient& client, const Templates& templates,
                                     const std::vector<ItemEntity>& items,
                                     const std::vector<UserEntity>& users,
                                     const std::string& store_path, const GenerateOptions& opts) {
    GenerateReport report;
    std::map<std::pair<int, int>, SemanticRecord> done;
    for (auto& r : load_store(store_path))
        done.emplace(std::make_pair(static_cast<int>(r.type), r.index), r);

    auto run_entity = [&](EntityType type, int index, auto render) {
        const auto key = std::make_pair(static_cast<int>(type), index);
        if (auto it = done.find(key); it != done.end()) {
            ++report.skipped_existing;
            report.records.push_back(it->second);
            return;
        }
        try {
            SemanticRecord rec;
            rec.type = type;
            rec.index = index;
            rec.positive_text = complete_with_retry(client, type, index, Stage::Forward,
                                                    render(Stage::Forward, "", ""), opts);
            rec.negative_text =
                complete_with_retry(client, type, index, Stage::Backward,
                                    render(Stage::Backward, rec.positive_text, ""), opts);
            rec.fused_text = complete_with_retry(
                client, type, index, Stage::Fuse,
                render(Stage::Fuse, rec.positive_text, rec.negative_text), opts);
            append_store(store_path, rec);
            report.records.push_back(std::move(rec));
        } catch (const Error& e) {
            report.failures.push_back(entity_type_name(type) + " " + std::to_string(index) + ": " +
                                      e.what());
        }
    };

    for (const auto& item : items) {
        run_entity(EntityType::Item, item.index,
                   [&](Stage s, const std::string& pos, const std::string& neg) {
                       return render_item_prompt(templates, item.attributes, s, pos, neg);
                   });
    }
    for (const auto& user : users) {
        run_entity(EntityType::User, user.index,
                   [&](Stage s, const std::string& pos, const std::string& neg) {
                       return render_user_prompt(templates, user.sampled_item_texts, s, pos, neg);
                   });
    }
    return report;
}

FileBackedEncoder::FileBackedEncoder(const std::vector<std::string>& texts, Mat rows)
    : rows_(std::move(rows)) {
    if (static_cast<Eigen::Index>(texts.size()) != rows_.rows())
        throw Error("FileBackedEncoder: texts/rows count mismatch");
    for (std::size_t i = 0; i < texts.size(); ++i)
        index_.emplace(texts[i], static_cast<int>(i));  // first occurrence wins
}

Vec FileBackedEncoder::encode(const std::string& text) {
    auto it = index_.find(text);
    if (it == index_.end()) throw GapError("file-backed encoder has no entry for text");
    return rows_.row(it->second).transpose();
}

HttpEncoder::HttpEncoder(std::string base_url, std::string model)
    : base_url_(std::move(base_url)), model_(std::move(model)) {}

HttpEncoder HttpEncoder::from_env(const std::string& model) {
    return HttpEncoder(env_or_throw("ENCODER_URL"), model);
}

Vec HttpEncoder::encode(const std::string& text) {
    httplib::Client cli(base_url_);
    configure_client(cli);
    const json body = {{"model", model_}, {"input", json::array({text})}};
    auto res = cli.Post("/v1/embeddings", body.dump(), "application/json");
    if (!res) throw TransportError("encoder request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("encoder returned HTTP " + std::to_string(res->status));
    try {
        const json reply = json::parse(res->body);
        const auto& emb = reply.at("data").at(0).at("embedding");
        Vec v(emb.size());
        for (std::size_t i = 0; i < emb.size(); ++i) v(static_cast<Eigen::Index>(i)) = emb[i];
        if (dim_ < 0) dim_ = static_cast<int>(v.size());
        if (v.size() != dim_)
            throw Error("encoder dimension changed across responses: " + std::to_string(v.size()) +
                        " vs " + std::to_string(dim_));
        return v;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed encoder response: ") + e.what());
    }
}

EmbeddingMatrix encode_texts(EncoderClient& client, const std::vector<SemanticRecord>& records) {
    if (records.empty()) throw Error("encode_texts: no records");
    for (const auto& r : records)
        if (r.fused_text.empty())
            throw Error("encode_texts: record " + std::to_string(r.index) + " has no fused text");

    EmbeddingMatrix out;
    out.space = Space::Raw;
    out.trainable = false;
    Vec first = client.encode(records[0].fused_text);
    out.data.resize(static_cast<Eigen::Index>(records.size()), first.size());
    out.data.row(0) = first.transpose();
    for (std::size_t i = 1; i < records.size(); ++i) {
        Vec v = client.encode(records[i].fused_text);
        if (v.size() != first.size())
            throw Error("encode_texts: dimension mismatch at record " + std::to_string(i));
        out.data.row(static_cast<Eigen::Index>(i)) = v.transpose();
    }
    return out;
}

}  // namespace isrf::reason
