#include "cohort/backbones.hpp"

#include <algorithm>

#include "cohort/errors.hpp"
#include "cohort/nn.hpp"

namespace cohort {

Backbone::Backbone(const BackboneSpec& spec) : spec_(spec) {
    if (spec.dim < 1) throw ConfigError("backbone: dim must be >= 1");
    if (spec.native_dim < 0) throw ConfigError("backbone: native_dim must be >= 0");
    has_adapter_ = spec.width() != spec.dim;
    if (has_adapter_) {
        Rng rng = Rng::derive(spec.seed, "backbone-adapter");
        adapter_W_ = ad::Param("backbone.adapter.W", nn::glorot(spec.dim, spec.width(), rng));
        adapter_b_ = ad::Param("backbone.adapter.b", nn::zeros(spec.dim, 1));
    }
}

ad::Var Backbone::encode(ad::Tape& tape, const std::vector<SampleRef>& batch) const {
    for (const auto& s : batch) {
        if (s.patient == nullptr) throw ValidationError("backbone: null patient");
        if (s.visit >= s.patient->visits.size()) {
            throw ValidationError("backbone: visit index " + std::to_string(s.visit) +
                                  " out of range for patient '" + s.patient->patient_id + "'");
        }
    }
    ad::Var out = encode_native(tape, batch);
    if (!has_adapter_) return out;
    return ad::add(ad::matmul(tape.param(adapter_W_), out), tape.param(adapter_b_));
}

std::vector<ad::Param*> Backbone::parameters() {
    auto out = native_parameters();
    if (has_adapter_) {
        out.push_back(&adapter_W_);
        out.push_back(&adapter_b_);
    }
    return out;
}

std::size_t Backbone::total_vocab() const {
    std::size_t n = 0;
    for (auto v : spec_.vocab_sizes) n += v;
    return n;
}

ad::Mat Backbone::multihot(const std::vector<const Visit*>& visits) const {
    ad::Mat out = ad::Mat::Zero(static_cast<Eigen::Index>(total_vocab()),
                                static_cast<Eigen::Index>(visits.size()));
    for (std::size_t c = 0; c < visits.size(); ++c) {
        if (visits[c] == nullptr) continue;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < kNumCodeKinds; ++k) {
            for (auto idx : visits[c]->codes(static_cast<CodeKind>(k))) {
                if (idx >= spec_.vocab_sizes[k]) {
                    throw ValidationError("backbone: code index beyond vocabulary");
                }
                out(static_cast<Eigen::Index>(offset + idx), static_cast<Eigen::Index>(c)) = 1.0;
            }
            offset += spec_.vocab_sizes[k];
        }
    }
    return out;
}

Vec backbone_encode(const Backbone& backbone, const Patient& patient, std::size_t visit_index) {
    if (visit_index >= patient.visits.size()) {
        throw ValidationError("backbone_encode: visit index " + std::to_string(visit_index) +
                              " out of range");
    }
    ad::Tape tape;
    return backbone.encode(tape, {{&patient, visit_index}}).value().col(0);
}

CodeMLPBackbone::CodeMLPBackbone(const BackboneSpec& spec) : Backbone(spec) {
    Rng rng = Rng::derive(spec.seed, "backbone-code_mlp");
    const int h = spec.width();
    E = ad::Param("backbone.code_mlp.E", nn::glorot(h, static_cast<Eigen::Index>(total_vocab()), rng));
    W1 = ad::Param("backbone.code_mlp.W1", nn::glorot(h, h, rng));
    b1 = ad::Param("backbone.code_mlp.b1", nn::zeros(h, 1));
    W2 = ad::Param("backbone.code_mlp.W2", nn::glorot(h, h, rng));
    b2 = ad::Param("backbone.code_mlp.b2", nn::zeros(h, 1));
}

ad::Var CodeMLPBackbone::encode_native(ad::Tape& tape, const std::vector<SampleRef>& batch) const {
    using namespace ad;
    std::vector<const Visit*> visits;
    visits.reserve(batch.size());
    for (const auto& s : batch) visits.push_back(&s.patient->visits[s.visit]);
    Var x = matmul(tape.param(E), tape.constant(multihot(visits)));
    Var h = ad::tanh(add(matmul(tape.param(W1), x), tape.param(b1)));
    return add(matmul(tape.param(W2), h), tape.param(b2));
}

std::vector<ad::Param*> CodeMLPBackbone::native_parameters() { return {&E, &W1, &b1, &W2, &b2}; }

SeqGRUBackbone::SeqGRUBackbone(const BackboneSpec& spec) : Backbone(spec) {
    Rng rng = Rng::derive(spec.seed, "backbone-seq_gru");
    const int h = spec.width();
    P = ad::Param("backbone.seq_gru.P", nn::glorot(h, static_cast<Eigen::Index>(total_vocab()), rng));
    b_p = ad::Param("backbone.seq_gru.b_p", nn::zeros(h, 1));
    W_z = ad::Param("backbone.seq_gru.W_z", nn::glorot(h, h, rng));
    U_z = ad::Param("backbone.seq_gru.U_z", nn::glorot(h, h, rng));
    b_z = ad::Param("backbone.seq_gru.b_z", nn::zeros(h, 1));
    W_r = ad::Param("backbone.seq_gru.W_r", nn::glorot(h, h, rng));
    U_r = ad::Param("backbone.seq_gru.U_r", nn::glorot(h, h, rng));
    b_r = ad::Param("backbone.seq_gru.b_r", nn::zeros(h, 1));
    W_n = ad::Param("backbone.seq_gru.W_n", nn::glorot(h, h, rng));
    U_n = ad::Param("backbone.seq_gru.U_n", nn::glorot(h, h, rng));
    b_n = ad::Param("backbone.seq_gru.b_n", nn::zeros(h, 1));
}

ad::Var SeqGRUBackbone::encode_native(ad::Tape& tape, const std::vector<SampleRef>& batch) const {
    using namespace ad;
    const int h = spec_.width();
    const auto b = static_cast<Eigen::Index>(batch.size());
    std::size_t steps = 0;
    for (const auto& s : batch) steps = std::max(steps, s.visit + 1);

    Var Pv = tape.param(P), bp = tape.param(b_p);
    Var Wz = tape.param(W_z), Uz = tape.param(U_z), bz = tape.param(b_z);
    Var Wr = tape.param(W_r), Ur = tape.param(U_r), br = tape.param(b_r);
    Var Wn = tape.param(W_n), Un = tape.param(U_n), bn = tape.param(b_n);

    // Left-padded: sample j starts at step steps - (visit + 1), so every
    // sequence ends on its own target visit.
    Var state = tape.constant(Mat::Zero(h, b));
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<const Visit*> visits(batch.size(), nullptr);
        Mat keep = Mat::Zero(h, b);
        for (std::size_t j = 0; j < batch.size(); ++j) {
            const std::size_t start = steps - (batch[j].visit + 1);
            if (t >= start) {
                visits[j] = &batch[j].patient->visits[t - start];
                keep.col(static_cast<Eigen::Index>(j)).setOnes();
            }
        }
        Var x = ad::tanh(add(matmul(Pv, tape.constant(multihot(visits))), bp));
        Var z = sigmoid(add(add(matmul(Wz, x), matmul(Uz, state)), bz));
        Var r = sigmoid(add(add(matmul(Wr, x), matmul(Ur, state)), br));
        Var n = ad::tanh(add(add(matmul(Wn, x), cmul(r, matmul(Un, state))), bn));
        Var next = add(cmul(affine(z, -1.0, 1.0), n), cmul(z, state));
        if (keep.minCoeff() == 1.0) {
            state = next;
        } else {
            state = add(cmul(tape.constant(keep), next),
                        cmul(tape.constant((1.0 - keep.array()).matrix()), state));
        }
    }
    return state;
}

std::vector<ad::Param*> SeqGRUBackbone::native_parameters() {
    return {&P, &b_p, &W_z, &U_z, &b_z, &W_r, &U_r, &b_r, &W_n, &U_n, &b_n};
}

BackboneRegistry BackboneRegistry::with_builtins() {
    BackboneRegistry reg;
    reg.add("code_mlp", [](const BackboneSpec& s) { return std::make_unique<CodeMLPBackbone>(s); });
    reg.add("seq_gru", [](const BackboneSpec& s) { return std::make_unique<SeqGRUBackbone>(s); });
    return reg;
}

BackboneRegistry& BackboneRegistry::global() {
    static BackboneRegistry reg = with_builtins();
    return reg;
}

void BackboneRegistry::add(const std::string& name, BackboneFactory factory) {
    if (name.empty()) throw RegistrationError("backbone name must not be empty");
    if (!factory) throw RegistrationError("backbone '" + name + "': empty factory");
    if (!factories_.emplace(name, std::move(factory)).second) {
        throw RegistrationError("backbone '" + name + "' is already registered");
    }
}

std::unique_ptr<Backbone> BackboneRegistry::create(const std::string& name,
                                                   const BackboneSpec& spec) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) {
        std::string known;
        for (const auto& [k, _] : factories_) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown backbone '" + name + "' (known: " + known + ")");
    }
    return it->second(spec);
}

std::vector<std::string> BackboneRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : factories_) out.push_back(k);
    return out;
}

void register_backbone(const std::string& name, BackboneFactory factory) {
    BackboneRegistry::global().add(name, std::move(factory));
}

std::unique_ptr<Backbone> make_backbone(const std::string& name, const BackboneSpec& spec) {
    return BackboneRegistry::global().create(name, spec);
}

}  // namespace cohort
