#include "textseg/params.hpp"

namespace textseg {

Param& ParamStore::create(const ParamDesc& desc, const Rng& master) {
    if (find(desc.name) != nullptr) throw Error("parameter already exists: " + desc.name);
    auto p = std::make_unique<Param>();
    p->name = desc.name;
    p->group = desc.group;
    p->trainable = desc.trainable;
    p->value.resize(desc.rows, desc.cols);
    Rng rng = master.child(desc.name);
    switch (desc.init) {
        case InitKind::kZeros:
            p->value.setZero();
            break;
        case InitKind::kOnes:
            p->value.setOnes();
            break;
        case InitKind::kNormal002:
            for (int j = 0; j < desc.cols; ++j)
                for (int i = 0; i < desc.rows; ++i) p->value(i, j) = rng.normal(0.0, 0.02);
            break;
        case InitKind::kNormalUnit:
            for (int j = 0; j < desc.cols; ++j)
                for (int i = 0; i < desc.rows; ++i) p->value(i, j) = rng.normal(0.0, 1.0);
            break;
        case InitKind::kXavier: {
            const double sd = std::sqrt(2.0 / (desc.rows + desc.cols));
            for (int j = 0; j < desc.cols; ++j)
                for (int i = 0; i < desc.rows; ++i) p->value(i, j) = rng.normal(0.0, sd);
            break;
        }
    }
    p->grad = Mat::Zero(desc.rows, desc.cols);
    p->adam_m = Mat::Zero(desc.rows, desc.cols);
    p->adam_v = Mat::Zero(desc.rows, desc.cols);
    items_.push_back(std::move(p));
    return *items_.back();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : items_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (auto& p : items_)
        if (p->name == name) return p.get();
    return nullptr;
}

Param& ParamStore::at(const std::string& name) {
    Param* p = find(name);
    if (!p) throw Error("unknown parameter: " + name);
    return *p;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
}

std::vector<Param*> ParamStore::trainable() {
    std::vector<Param*> out;
    for (auto& p : items_)
        if (p->trainable) out.push_back(p.get());
    return out;
}

TrainableCounts count_parameters(const std::vector<ParamDesc>& descs) {
    TrainableCounts c;
    for (const auto& d : descs) {
        const long long n = d.count();
        c.total += n;
        if (d.name.rfind("txt.", 0) == 0) c.text_encoder_total += n;
        if (!d.trainable) continue;
        c.trainable += n;
        switch (d.group) {
            case ParamGroup::kLora: c.lora += n; break;
            case ParamGroup::kContextBank: c.context_bank += n; break;
            case ParamGroup::kAdapter: c.adapter += n; break;
            default: c.other += n; break;
        }
    }
    return c;
}

}  // namespace textseg
