#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

namespace textseg {

inline constexpr const char* kVersion = "0.1.0";

// Every architectural and training hyperparameter of an experiment. Modules
// never hard-code their own defaults, so ablations are pure config sweeps.
struct ExperimentConfig {
    // geometry
    int image_size = 128;  // square working resolution
    int patch_size = 16;
    int img_layers = 4;
    int img_heads = 4;
    int img_dim = 96;  // d

    // text encoder
    int txt_layers = 12;  // K
    int txt_heads = 4;
    int txt_dim = 64;          // d_t
    int context_length = 256;  // N
    int context_tokens = 4;    // b
    int prompt_depth = 12;     // t, clipped to txt_layers by validate()
    int embed_dim = 512;       // D
    std::string prompt_template = "an ultrasound image of a {}";
    std::string class_name = "tumor";
    std::string pooling = "eos";  // "eos" | "first"
    bool per_layer_banks = true;  // false: one bank re-injected at every depth
    bool text_proj_trainable = false;

    // prompt/decoder space
    int adapter_hidden = 512;  // h, pinned equal to embed_dim
    int prompt_dim = 256;      // m
    int dec_blocks = 2;
    int dec_heads = 4;
    bool dense_summary = true;  // pooled-feature prompt token
    bool no_mask_bias = true;   // learned bias added to decoder-side features
    // which prompt-type embeddings train: output_token, no_mask_bias,
    // dense_summary, geometric_types
    std::vector<std::string> trainable_embeddings = {"output_token", "no_mask_bias",
                                                     "dense_summary"};

    // adaptation
    int lora_rank = 16;                            // r
    std::vector<std::string> lora_targets = {"q", "v"};  // of {"q","k","v","o"}

    // refinement
    int refinement_iters = 2;
    bool accumulate_geometric = false;  // keep prompts from earlier iterations
    bool train_through_refinement = false;

    // optimization
    double lr = 0.001;
    double weight_decay = 0.01;
    int epochs = 5;
    int batch_size = 1;

    // evaluation
    double nsd_tolerance = 3.0;  // tau, pixels

    uint64_t seed = 0;

    // ---- derived; frozen by validate() ----
    int grid_side = 0;    // h = w = image_size / patch_size
    int fixed_slots = 0;  // S = N - b
    bool validated = false;
};

// Checks every invariant, freezes derived quantities, applies the
// prompt-depth clip. Throws Error naming the offending field.
ExperimentConfig validate(ExperimentConfig config);

// Exact-field-name JSON (de)serialization; unknown keys are rejected.
std::string serialize_config(const ExperimentConfig& config);
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// FNV-1a hash of the canonical serialization.
uint64_t config_hash(const ExperimentConfig& config);
// Hash with evaluation-only fields zeroed; two configs with the same training
// hash train to identical checkpoints under the same seed and data.
uint64_t training_hash(const ExperimentConfig& config);

// Applies the permitted environment overrides: TEXTSEG_SEED onto the config
// seed, TEXTSEG_OUT onto the given output directory. Nothing else.
void apply_env_overrides(ExperimentConfig& config, std::string& out_dir);

// Master random state for a run; all substreams derive from this.
Rng seed_all(uint64_t seed);

// Reproducibility record written next to every experiment output.
struct RunManifest {
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    std::string command_line;
    std::string code_version = kVersion;

    std::string to_json() const;
};

void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace textseg
