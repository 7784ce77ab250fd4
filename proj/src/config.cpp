#include "textseg/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>

namespace textseg {

using nlohmann::json;

namespace {

const std::set<std::string> kEmbeddingNames = {"output_token", "no_mask_bias",
                                               "dense_summary", "geometric_types"};
const std::set<std::string> kLoraTargets = {"q", "k", "v", "o"};

void require(bool ok, const std::string& msg) {
    if (!ok) throw Error("config: " + msg);
}

}  // namespace

ExperimentConfig validate(ExperimentConfig c) {
    require(c.image_size >= 32, "image_size below 32");
    require(c.patch_size >= 1, "patch_size below 1");
    require(c.image_size % c.patch_size == 0, "image_size not divisible by patch_size");
    require(c.patch_size % 4 == 0, "patch_size not divisible by 4");
    require(c.img_layers >= 1, "img_layers below 1");
    require(c.img_dim >= 1 && c.img_heads >= 1, "img_dim/img_heads below 1");
    require(c.img_dim % c.img_heads == 0, "img_dim not divisible by img_heads");

    require(c.txt_layers >= 1, "txt_layers below 1");
    require(c.txt_dim >= 1 && c.txt_heads >= 1, "txt_dim/txt_heads below 1");
    require(c.txt_dim % c.txt_heads == 0, "txt_dim not divisible by txt_heads");
    require(c.context_tokens >= 0, "context_tokens below 0");
    require(c.context_length >= 1, "context_length below 1");
    require(c.context_tokens < c.context_length, "context_tokens not below context_length");
    require(c.prompt_depth >= 1, "prompt_depth below 1");
    c.prompt_depth = std::min(c.prompt_depth, c.txt_layers);
    require(c.embed_dim >= 1, "embed_dim below 1");
    require(c.pooling == "eos" || c.pooling == "first", "pooling must be eos or first");

    require(c.adapter_hidden == c.embed_dim, "adapter_hidden not equal to embed_dim");
    require(c.prompt_dim >= 8, "prompt_dim below 8");
    require(c.prompt_dim % 2 == 0, "prompt_dim not even");
    require(c.dec_blocks >= 1, "dec_blocks below 1");
    require(c.dec_heads >= 1, "dec_heads below 1");
    require(c.prompt_dim % c.dec_heads == 0, "prompt_dim not divisible by dec_heads");
    require((c.prompt_dim / 2) % c.dec_heads == 0,
            "prompt_dim/2 not divisible by dec_heads");

    for (const auto& e : c.trainable_embeddings) {
        require(kEmbeddingNames.count(e) == 1, "unknown trainable embedding: " + e);
    }
    require(c.lora_rank >= 1, "lora_rank below 1");
    require(!c.lora_targets.empty(), "lora_targets empty");
    for (const auto& t : c.lora_targets) {
        require(kLoraTargets.count(t) == 1, "unknown lora target: " + t);
    }

    require(c.refinement_iters >= 0, "refinement_iters below 0");
    require(c.lr > 0.0, "lr not positive");
    require(c.weight_decay >= 0.0, "weight_decay negative");
    require(c.epochs >= 1, "epochs below 1");
    require(c.batch_size >= 1, "batch_size below 1");
    require(c.nsd_tolerance > 0.0, "nsd_tolerance not positive");
    require(!c.class_name.empty(), "class_name empty");
    require(c.prompt_template.find("{}") != std::string::npos,
            "prompt_template missing {} placeholder");

    c.grid_side = c.image_size / c.patch_size;
    c.fixed_slots = c.context_length - c.context_tokens;
    c.validated = true;
    return c;
}

namespace {

json to_json(const ExperimentConfig& c) {
    json j;
    j["image_size"] = c.image_size;
    j["patch_size"] = c.patch_size;
    j["img_layers"] = c.img_layers;
    j["img_heads"] = c.img_heads;
    j["img_dim"] = c.img_dim;
    j["txt_layers"] = c.txt_layers;
    j["txt_heads"] = c.txt_heads;
    j["txt_dim"] = c.txt_dim;
    j["context_length"] = c.context_length;
    j["context_tokens"] = c.context_tokens;
    j["prompt_depth"] = c.prompt_depth;
    j["embed_dim"] = c.embed_dim;
    j["prompt_template"] = c.prompt_template;
    j["class_name"] = c.class_name;
    j["pooling"] = c.pooling;
    j["per_layer_banks"] = c.per_layer_banks;
    j["text_proj_trainable"] = c.text_proj_trainable;
    j["adapter_hidden"] = c.adapter_hidden;
    j["prompt_dim"] = c.prompt_dim;
    j["dec_blocks"] = c.dec_blocks;
    j["dec_heads"] = c.dec_heads;
    j["dense_summary"] = c.dense_summary;
    j["no_mask_bias"] = c.no_mask_bias;
    j["trainable_embeddings"] = c.trainable_embeddings;
    j["lora_rank"] = c.lora_rank;
    j["lora_targets"] = c.lora_targets;
    j["refinement_iters"] = c.refinement_iters;
    j["accumulate_geometric"] = c.accumulate_geometric;
    j["train_through_refinement"] = c.train_through_refinement;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["nsd_tolerance"] = c.nsd_tolerance;
    j["seed"] = c.seed;
    return j;
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2); }

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("config: parse failure: ") + e.what());
    }
    ExperimentConfig c;
    const json defaults = to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw Error("config: unknown key: " + key);
        (void)value;
    }
    json merged = defaults;
    merged.update(j);
    try {
        c.image_size = merged.at("image_size").get<int>();
        c.patch_size = merged.at("patch_size").get<int>();
        c.img_layers = merged.at("img_layers").get<int>();
        c.img_heads = merged.at("img_heads").get<int>();
        c.img_dim = merged.at("img_dim").get<int>();
        c.txt_layers = merged.at("txt_layers").get<int>();
        c.txt_heads = merged.at("txt_heads").get<int>();
        c.txt_dim = merged.at("txt_dim").get<int>();
        c.context_length = merged.at("context_length").get<int>();
        c.context_tokens = merged.at("context_tokens").get<int>();
        c.prompt_depth = merged.at("prompt_depth").get<int>();
        c.embed_dim = merged.at("embed_dim").get<int>();
        c.prompt_template = merged.at("prompt_template").get<std::string>();
        c.class_name = merged.at("class_name").get<std::string>();
        c.pooling = merged.at("pooling").get<std::string>();
        c.per_layer_banks = merged.at("per_layer_banks").get<bool>();
        c.text_proj_trainable = merged.at("text_proj_trainable").get<bool>();
        c.adapter_hidden = merged.at("adapter_hidden").get<int>();
        c.prompt_dim = merged.at("prompt_dim").get<int>();
        c.dec_blocks = merged.at("dec_blocks").get<int>();
        c.dec_heads = merged.at("dec_heads").get<int>();
        c.dense_summary = merged.at("dense_summary").get<bool>();
        c.no_mask_bias = merged.at("no_mask_bias").get<bool>();
        c.trainable_embeddings =
            merged.at("trainable_embeddings").get<std::vector<std::string>>();
        c.lora_rank = merged.at("lora_rank").get<int>();
        c.lora_targets = merged.at("lora_targets").get<std::vector<std::string>>();
        c.refinement_iters = merged.at("refinement_iters").get<int>();
        c.accumulate_geometric = merged.at("accumulate_geometric").get<bool>();
        c.train_through_refinement = merged.at("train_through_refinement").get<bool>();
        c.lr = merged.at("lr").get<double>();
        c.weight_decay = merged.at("weight_decay").get<double>();
        c.epochs = merged.at("epochs").get<int>();
        c.batch_size = merged.at("batch_size").get<int>();
        c.nsd_tolerance = merged.at("nsd_tolerance").get<double>();
        c.seed = merged.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw Error(std::string("config: bad field value: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_config(text);
}

uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(serialize_config(c)); }

uint64_t training_hash(const ExperimentConfig& c) {
    ExperimentConfig t = c;
    t.refinement_iters = 0;
    t.accumulate_geometric = false;
    t.nsd_tolerance = 1.0;
    return fnv1a(serialize_config(t));
}

void apply_env_overrides(ExperimentConfig& config, std::string& out_dir) {
    if (const char* s = std::getenv("TEXTSEG_SEED")) {
        config.seed = std::strtoull(s, nullptr, 10);
    }
    if (const char* o = std::getenv("TEXTSEG_OUT")) {
        out_dir = o;
    }
}

Rng seed_all(uint64_t seed) { return Rng(seed); }

std::string RunManifest::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["command_line"] = command_line;
    j["code_version"] = code_version;
    return j.dump(2);
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("manifest: cannot write " + path);
    out << manifest.to_json() << "\n";
}

}  // namespace textseg
