#include "isrf/data.hpp"
#include "isrf/embed.hpp"
#include "isrf/eval.hpp"
#include "isrf/graphs.hpp"
#include "isrf/io.hpp"
#include "isrf/manifest.hpp"
#include "isrf/reason.hpp"
#include "isrf/synth.hpp"
#include "isrf/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace isrf;

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_interactions(const std::string& path, const data::InteractionDataset& ds) {
    std::ostringstream os;
    for (int u = 0; u < ds.num_users(); ++u) {
        os << ds.user_ids[u];
        for (int v : ds.sequences[u]) os << ' ' << ds.item_ids[v];
        os << '\n';
    }
    write_text_file(path, os.str());
}

train::TrainConfig load_config(const std::string& path) {
    return train::config_from_json(read_text_file(path));
}

// Shared manifest bookkeeping: returns true when the stage can be skipped.
bool stage_guard(manifest::RunManifest& m, const std::string& stage,
                 const std::vector<std::string>& inputs) {
    if (manifest::stage_up_to_date(m, stage, inputs)) {
        std::cout << stage << ": up to date, skipping\n";
        return true;
    }
    return false;
}

void finish_stage(manifest::RunManifest& m, const std::string& manifest_path,
                  const std::string& stage, const std::vector<std::string>& inputs,
                  const std::vector<std::string>& outputs) {
    manifest::record_stage(m, stage, inputs, outputs);
    manifest::save_manifest(manifest_path, m);
}

eval::EvalInputs load_eval_inputs(const std::string& interactions, const std::string& user_emb,
                                  const std::string& item_emb,
                                  const std::vector<std::string>& variant_specs) {
    eval::EvalInputs in;
    in.dataset = data::load_interactions(interactions);
    in.s_u = read_embedding(user_emb).data;
    in.s_v = read_embedding(item_emb).data;
    for (const auto& spec : variant_specs) {
        // name=user_path,item_path
        const auto eq = spec.find('=');
        const auto comma = spec.find(',', eq == std::string::npos ? 0 : eq);
        if (eq == std::string::npos || comma == std::string::npos) {
            throw Error("bad --variant-emb spec, expected name=user_path,item_path: " + spec);
        }
        const std::string name = spec.substr(0, eq);
        const std::string upath = spec.substr(eq + 1, comma - eq - 1);
        const std::string vpath = spec.substr(comma + 1);
        in.variant_embeddings[name] = {read_embedding(upath).data, read_embedding(vpath).data};
    }
    return in;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ISRF pipeline: prepare -> reason -> embed -> graph -> train -> eval"};
    app.require_subcommand(1);

    std::string stage_name;
    std::function<void()> run;

    // ---- synth -------------------------------------------------------------
    auto* synth_cmd = app.add_subcommand("synth", "Generate the planted-structure fixture");
    synth::SynthConfig scfg;
    std::string synth_out = "out";
    synth_cmd->add_option("--users", scfg.n_users);
    synth_cmd->add_option("--items", scfg.n_items);
    synth_cmd->add_option("--groups", scfg.n_groups);
    synth_cmd->add_option("--items-per-user", scfg.items_per_user);
    synth_cmd->add_option("--noise", scfg.noise);
    synth_cmd->add_option("--dim", scfg.embed_dim);
    synth_cmd->add_option("--seed", scfg.seed);
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->callback([&] {
        stage_name = "synth";
        run = [&] {
            ensure_dir(synth_out);
            const std::string mpath = join_path(synth_out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            const auto pd = synth::generate_planted(scfg);
            std::vector<std::string> outputs;
            const auto emit = [&](const std::string& name, const EmbeddingMatrix& e) {
                const std::string p = join_path(synth_out, name);
                write_embedding(p, e);
                outputs.push_back(p);
            };
            const std::string inter = join_path(synth_out, "interactions.txt");
            write_interactions(inter, pd.dataset);
            outputs.push_back(inter);
            emit("s_u.emb", pd.user_embeddings);
            emit("s_v.emb", pd.item_embeddings);
            emit("s_u_pos.emb", pd.user_pos);
            emit("s_u_neg.emb", pd.user_neg);
            emit("s_v_pos.emb", pd.item_pos);
            emit("s_v_neg.emb", pd.item_neg);
            json groups = {{"user_group", pd.user_group}, {"item_group", pd.item_group}};
            const std::string gpath = join_path(synth_out, "groups.json");
            write_text_file(gpath, groups.dump(2) + "\n");
            outputs.push_back(gpath);
            finish_stage(m, mpath, "synth", {}, outputs);
        };
    });

    // ---- prepare -----------------------------------------------------------
    auto* prep_cmd = app.add_subcommand("prepare", "Filter interactions and export splits");
    std::string prep_inter, prep_out;
    prep_cmd->add_option("--interactions", prep_inter)->required();
    prep_cmd->add_option("--out", prep_out)->required();
    prep_cmd->callback([&] {
        stage_name = "prepare";
        run = [&] {
            ensure_dir(prep_out);
            const std::string mpath = join_path(prep_out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            if (stage_guard(m, "prepare", {prep_inter})) return;
            const auto ds = data::load_interactions(prep_inter);
            const auto splits = data::split_leave_one_out(ds);
            const std::string spath = join_path(prep_out, "splits.jsonl");
            data::export_splits(spath, ds, splits);
            json stats = {{"users", ds.num_users()},
                          {"items", ds.num_items()},
                          {"rejected_users", ds.rejected_users}};
            const std::string stpath = join_path(prep_out, "stats.json");
            write_text_file(stpath, stats.dump(2) + "\n");
            finish_stage(m, mpath, "prepare", {prep_inter}, {spath, stpath});
        };
    });

    // ---- reason ------------------------------------------------------------
    auto* reason_cmd =
        app.add_subcommand("reason", "Generate semantic descriptions via REASONER_URL");
    std::string rs_inter, rs_store, rs_templates, rs_model = "default";
    int rs_sample = 5;
    std::uint64_t rs_seed = 1;
    reason_cmd->add_option("--interactions", rs_inter)->required();
    reason_cmd->add_option("--store", rs_store, "JSONL store (resumable)")->required();
    reason_cmd->add_option("--templates", rs_templates, "Prompt template directory");
    reason_cmd->add_option("--model", rs_model);
    reason_cmd->add_option("--sample-size", rs_sample, "Item texts sampled per user prompt");
    reason_cmd->add_option("--seed", rs_seed);
    reason_cmd->callback([&] {
        stage_name = "reason";
        run = [&] {
            const auto ds = data::load_interactions(rs_inter);
            const auto templates = rs_templates.empty() ? reason::default_templates()
                                                        : reason::load_templates(rs_templates);
            auto client = reason::HttpReasoner::from_env(rs_model);
            std::vector<reason::ItemEntity> items;
            for (int v = 0; v < ds.num_items(); ++v)
                items.push_back({v, {{"id", ds.item_ids[v]}}});
            // Items first; user prompts sample from the fused item texts.
            auto rep = reason::generate_descriptions(client, templates, items, {}, rs_store);
            std::vector<std::string> fused(ds.num_items());
            for (const auto& r : reason::load_store(rs_store))
                if (r.type == reason::EntityType::Item) fused[r.index] = r.fused_text;
            std::vector<reason::UserEntity> users;
            for (int u = 0; u < ds.num_users(); ++u) {
                std::vector<std::string> texts;
                for (int v : ds.sequences[u]) texts.push_back(fused[v]);
                users.push_back(
                    {u, reason::sample_user_items(texts, rs_sample,
                                                  rs_seed ^ static_cast<std::uint64_t>(u))});
            }
            auto rep2 = reason::generate_descriptions(client, templates, {}, users, rs_store);
            for (const auto& f : rep.failures) std::cerr << "reason: " << f << '\n';
            for (const auto& f : rep2.failures) std::cerr << "reason: " << f << '\n';
            if (!rep.failures.empty() || !rep2.failures.empty())
                throw Error("reason: " + std::to_string(rep.failures.size() +
                                                        rep2.failures.size()) +
                            " entities failed");
        };
    });

    // ---- embed -------------------------------------------------------------
    auto* embed_cmd = app.add_subcommand("embed", "Encode fused texts via ENCODER_URL");
    std::string em_store, em_out, em_model = "default";
    embed_cmd->add_option("--store", em_store)->required();
    embed_cmd->add_option("--out", em_out)->required();
    embed_cmd->add_option("--model", em_model);
    embed_cmd->callback([&] {
        stage_name = "embed";
        run = [&] {
            ensure_dir(em_out);
            const std::string mpath = join_path(em_out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            if (stage_guard(m, "embed", {em_store})) return;
            const auto records = reason::load_store(em_store);
            std::vector<reason::SemanticRecord> items, users;
            for (const auto& r : records)
                (r.type == reason::EntityType::Item ? items : users).push_back(r);
            auto client = reason::HttpEncoder::from_env(em_model);
            const std::string upath = join_path(em_out, "s_u.emb");
            const std::string vpath = join_path(em_out, "s_v.emb");
            write_embedding(upath, reason::encode_texts(client, users));
            write_embedding(vpath, reason::encode_texts(client, items));
            finish_stage(m, mpath, "embed", {em_store}, {upath, vpath});
        };
    });

    // ---- graph -------------------------------------------------------------
    auto* graph_cmd = app.add_subcommand("graph", "Build interaction and relation graphs");
    std::string gr_inter, gr_uemb, gr_out, gr_sym = "union";
    int gr_k = 10;
    graph_cmd->add_option("--interactions", gr_inter)->required();
    graph_cmd->add_option("--user-emb", gr_uemb)->required();
    graph_cmd->add_option("--k", gr_k);
    graph_cmd->add_option("--symmetrize", gr_sym)->check(CLI::IsMember({"union", "none"}));
    graph_cmd->add_option("--out", gr_out)->required();
    graph_cmd->callback([&] {
        stage_name = "graph";
        run = [&] {
            ensure_dir(gr_out);
            const std::string mpath = join_path(gr_out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            if (stage_guard(m, "graph", {gr_inter, gr_uemb})) return;
            const auto ds = data::load_interactions(gr_inter);
            const auto splits = data::split_leave_one_out(ds);
            const auto inter_g = graphs::build_interaction_graph(ds, splits);
            const auto mode = gr_sym == "union" ? graphs::RelationSymmetrize::Union
                                                : graphs::RelationSymmetrize::None;
            const auto rel_g =
                graphs::build_user_relation(read_embedding(gr_uemb).data, gr_k, mode);
            const std::string ipath = join_path(gr_out, "interaction.graph");
            const std::string rpath = join_path(gr_out, "relation.graph");
            graphs::write_graph(ipath, inter_g);
            graphs::write_graph(rpath, rel_g);
            finish_stage(m, mpath, "graph", {gr_inter, gr_uemb}, {ipath, rpath});
        };
    });

    // ---- shared train/eval inputs -------------------------------------------
    struct RunArgs {
        std::string config, interactions, user_emb, item_emb, out;
        std::vector<std::string> variant_specs;
        std::int64_t seed_override = -1;
    };
    const auto add_run_args = [](CLI::App* cmd, RunArgs& a, bool with_variants) {
        cmd->add_option("--config", a.config, "TrainConfig JSON")->required();
        cmd->add_option("--interactions", a.interactions)->required();
        cmd->add_option("--user-emb", a.user_emb)->required();
        cmd->add_option("--item-emb", a.item_emb)->required();
        cmd->add_option("--out", a.out)->required();
        cmd->add_option("--seed", a.seed_override, "Overrides the config seed");
        if (with_variants) {
            cmd->add_option("--variant-emb", a.variant_specs,
                            "name=user_path,item_path (repeatable)");
        }
    };
    const auto effective_config = [](const RunArgs& a) {
        train::TrainConfig cfg = load_config(a.config);
        if (a.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed_override);
        return cfg;
    };

    // ---- train ---------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Fit the model");
    RunArgs ta;
    add_run_args(train_cmd, ta, false);
    train_cmd->callback([&] {
        stage_name = "train";
        run = [&] {
            ensure_dir(ta.out);
            const std::string mpath = join_path(ta.out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            const std::vector<std::string> inputs = {ta.config, ta.interactions, ta.user_emb,
                                                     ta.item_emb};
            if (stage_guard(m, "train", inputs)) return;
            const auto cfg = effective_config(ta);
            const std::string canonical = train::config_to_json(cfg);
            m.config_hash = hash_hex(fnv1a(canonical));
            const auto data = train::prepare_train_data(
                data::load_interactions(ta.interactions), read_embedding(ta.user_emb).data,
                read_embedding(ta.item_emb).data, cfg);
            const auto fr = train::fit(cfg, data);
            const std::string cpath = join_path(ta.out, "checkpoint.bin");
            const std::string hpath = join_path(ta.out, "history.csv");
            const std::string cfgpath = join_path(ta.out, "config.json");
            train::save_checkpoint(cpath, fr.best);
            write_text_file(hpath, train::history_csv(fr.history));
            write_text_file(cfgpath, canonical + "\n");
            finish_stage(m, mpath, "train", inputs, {cpath, hpath, cfgpath});
        };
    });

    // ---- eval ----------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test targets");
    RunArgs ea;
    std::string ev_checkpoint;
    add_run_args(eval_cmd, ea, false);
    eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
    eval_cmd->callback([&] {
        stage_name = "eval";
        run = [&] {
            ensure_dir(ea.out);
            const std::string mpath = join_path(ea.out, "manifest.json");
            auto m = manifest::load_manifest(mpath);
            const std::vector<std::string> inputs = {ea.config, ea.interactions, ea.user_emb,
                                                     ea.item_emb, ev_checkpoint};
            if (stage_guard(m, "eval", inputs)) return;
            const auto cfg = effective_config(ea);
            const auto data = train::prepare_train_data(
                data::load_interactions(ea.interactions), read_embedding(ea.user_emb).data,
                read_embedding(ea.item_emb).data, cfg);
            const auto state = train::load_checkpoint(ev_checkpoint);
            const train::PromptSpace prompts(data.dataset.num_users(), data.dataset.num_items());
            eval::MetricRow row = eval::evaluate(state, data, cfg, prompts, eval::Phase::Test);
            row.label = "test";
            eval::MetricTable table;
            table.rows.push_back(row);
            const std::string cpath = join_path(ea.out, "metrics.csv");
            const std::string tpath = join_path(ea.out, "metrics.txt");
            write_text_file(cpath, table.to_csv());
            write_text_file(tpath, table.to_text());
            std::cout << table.to_text();
            finish_stage(m, mpath, "eval", inputs, {cpath, tpath});
        };
    });

    // ---- ablate ----------------------------------------------------------------
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation table");
    RunArgs aa;
    add_run_args(ablate_cmd, aa, false);
    ablate_cmd->callback([&] {
        stage_name = "ablate";
        run = [&] {
            ensure_dir(aa.out);
            const auto cfg = effective_config(aa);
            const auto in =
                load_eval_inputs(aa.interactions, aa.user_emb, aa.item_emb, {});
            const auto table = eval::run_ablations(cfg, in);
            write_text_file(join_path(aa.out, "ablations.csv"), table.to_csv());
            write_text_file(join_path(aa.out, "ablations.txt"), table.to_text());
            std::cout << table.to_text();
        };
    });

    // ---- variants ----------------------------------------------------------------
    auto* var_cmd = app.add_subcommand("variants", "Run the semantic-variant table");
    RunArgs va;
    add_run_args(var_cmd, va, true);
    var_cmd->callback([&] {
        stage_name = "variants";
        run = [&] {
            ensure_dir(va.out);
            const auto cfg = effective_config(va);
            const auto in =
                load_eval_inputs(va.interactions, va.user_emb, va.item_emb, va.variant_specs);
            const auto table = eval::run_variants(cfg, in);
            write_text_file(join_path(va.out, "variants.csv"), table.to_csv());
            write_text_file(join_path(va.out, "variants.txt"), table.to_text());
            std::cout << table.to_text();
        };
    });

    // ---- sweep ----------------------------------------------------------------
    auto* sweep_cmd = app.add_subcommand("sweep", "Hyperparameter sweep over Lprime or k");
    RunArgs sa;
    std::string sw_param;
    std::vector<int> sw_values;
    add_run_args(sweep_cmd, sa, false);
    sweep_cmd->add_option("--param", sw_param)->required()->check(CLI::IsMember({"Lprime", "k"}));
    sweep_cmd->add_option("--values", sw_values)->required();
    sweep_cmd->callback([&] {
        stage_name = "sweep";
        run = [&] {
            ensure_dir(sa.out);
            const auto cfg = effective_config(sa);
            const auto in = load_eval_inputs(sa.interactions, sa.user_emb, sa.item_emb, {});
            const auto table = eval::sweep(sw_param, sw_values, cfg, in);
            write_text_file(join_path(sa.out, "sweep.csv"), table.to_csv());
            write_text_file(join_path(sa.out, "sweep.txt"), table.to_text());
            std::cout << table.to_text();
        };
    });

    // ---- case-study ----------------------------------------------------------------
    auto* case_cmd = app.add_subcommand("case-study", "Neighbor case-study report for one user");
    RunArgs ca;
    std::string cs_checkpoint;
    int cs_user = 0, cs_top_m = 10;
    add_run_args(case_cmd, ca, false);
    case_cmd->add_option("--checkpoint", cs_checkpoint)->required();
    case_cmd->add_option("--user", cs_user)->required();
    case_cmd->add_option("--top-m", cs_top_m);
    case_cmd->callback([&] {
        stage_name = "case-study";
        run = [&] {
            ensure_dir(ca.out);
            const auto cfg = effective_config(ca);
            const auto data = train::prepare_train_data(
                data::load_interactions(ca.interactions), read_embedding(ca.user_emb).data,
                read_embedding(ca.item_emb).data, cfg);
            const auto state = train::load_checkpoint(cs_checkpoint);
            const train::PromptSpace prompts(data.dataset.num_users(), data.dataset.num_items());
            const std::string report =
                eval::case_study(state, data, cfg, prompts, cs_user, cs_top_m);
            write_text_file(join_path(ca.out, "case_study.json"), report + "\n");
            std::cout << report << '\n';
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        run();
    } catch (const std::exception& e) {
        std::cerr << "stage " << stage_name << " failed: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
