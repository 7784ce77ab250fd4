#pragma once

#include <memory>
#include <string>
#include <vector>

#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

namespace textseg {

enum class ParamGroup { kBase, kLora, kContextBank, kAdapter, kOther };

enum class InitKind { kZeros, kOnes, kNormal002, kNormalUnit, kXavier };

// Structural record of one parameter tensor. Model geometry is described
// before anything is allocated so parameter counts can be computed for
// configurations far too large to instantiate.
struct ParamDesc {
    std::string name;
    int rows = 0;
    int cols = 0;
    ParamGroup group = ParamGroup::kBase;
    bool trainable = false;
    InitKind init = InitKind::kZeros;

    long long count() const { return static_cast<long long>(rows) * cols; }
};

struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m;
    Mat adam_v;
    ParamGroup group = ParamGroup::kBase;
    bool trainable = false;

    void zero_grad() { grad.setZero(); }
};

class ParamStore {
  public:
    // Allocates and initializes a parameter; each tensor draws from an
    // independent substream keyed by its name, so init is order-free.
    Param& create(const ParamDesc& desc, const Rng& master);

    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    Param& at(const std::string& name);

    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::vector<Param*> trainable();

    size_t size() const { return items_.size(); }

  private:
    std::vector<std::unique_ptr<Param>> items_;
};

// Binds parameters onto a tape for one forward pass and routes gradients back
// after backward(). In inference mode nothing requires grad, so the tape
// records no backward closures.
class Binder {
  public:
    explicit Binder(Tape& tape, bool inference = false)
        : tape_(&tape), inference_(inference) {}

    Var operator()(Param& p) {
        const bool rg = !inference_ && p.trainable;
        Var v = tape_->leaf(p.value, rg);
        if (rg) bound_.emplace_back(&p, v);
        return v;
    }

    // Adds d(loss)/d(param) into each bound trainable parameter's grad.
    void pull_gradients() {
        for (auto& [p, v] : bound_) {
            if (p->grad.size() == 0) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
            p->grad += tape_->grad(v);
        }
    }

    Tape& tape() { return *tape_; }
    bool inference() const { return inference_; }

  private:
    Tape* tape_;
    bool inference_;
    std::vector<std::pair<Param*, Var>> bound_;
};

struct TrainableCounts {
    long long total = 0;       // every parameter, frozen included
    long long trainable = 0;   // sum of trainable groups
    long long lora = 0;
    long long context_bank = 0;
    long long adapter = 0;
    long long other = 0;
    long long text_encoder_total = 0;  // all parameters under the text encoder
};

TrainableCounts count_parameters(const std::vector<ParamDesc>& descs);

}  // namespace textseg
