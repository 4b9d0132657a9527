#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ehr_data.hpp"
#include "cohort/ontology_embeddings.hpp"

namespace cohort {

/// One prediction unit: visit `visit` of `patient`.
struct SampleRef {
    const Patient* patient = nullptr;
    std::size_t visit = 0;
};

struct BackboneSpec {
    int dim = 32;          // output width seen by the cohort module
    int native_dim = 0;    // 0 = same as dim; otherwise an adapter maps native -> dim
    std::array<std::size_t, kNumCodeKinds> vocab_sizes{};
    std::uint64_t seed = 0;

    int width() const { return native_dim > 0 ? native_dim : dim; }
};

/// Producer of initial representations, one column per sample.
class Backbone {
   public:
    virtual ~Backbone() = default;

    virtual std::string name() const = 0;
    int dim() const { return spec_.dim; }
    const BackboneSpec& spec() const { return spec_; }

    /// d x B batch encoding on the tape.
    ad::Var encode(ad::Tape& tape, const std::vector<SampleRef>& batch) const;
    std::vector<ad::Param*> parameters();

   protected:
    explicit Backbone(const BackboneSpec& spec);
    /// width() x B, before the adapter.
    virtual ad::Var encode_native(ad::Tape& tape, const std::vector<SampleRef>& batch) const = 0;
    virtual std::vector<ad::Param*> native_parameters() = 0;

    /// Concatenated diagnosis/medication/lab multi-hot, one column per
    /// visit; a null visit gives a zero column.
    ad::Mat multihot(const std::vector<const Visit*>& visits) const;
    std::size_t total_vocab() const;

    BackboneSpec spec_;
    bool has_adapter_ = false;
    ad::Param adapter_W_, adapter_b_;
};

/// Backbone output for a single visit; range-checked.
Vec backbone_encode(const Backbone& backbone, const Patient& patient, std::size_t visit_index);

/// Embedding per code kind (a linear map of the concatenated multi-hot),
/// then affine, tanh, affine.
class CodeMLPBackbone : public Backbone {
   public:
    explicit CodeMLPBackbone(const BackboneSpec& spec);
    std::string name() const override { return "code_mlp"; }

    ad::Param E;       // width x total vocab
    ad::Param W1, b1;  // width x width
    ad::Param W2, b2;

   protected:
    ad::Var encode_native(ad::Tape& tape, const std::vector<SampleRef>& batch) const override;
    std::vector<ad::Param*> native_parameters() override;
};

/// Code-set projection with tanh, then a forward gated recurrent unit over
/// visits 1..t of the patient; the state after visit t is the encoding.
class SeqGRUBackbone : public Backbone {
   public:
    explicit SeqGRUBackbone(const BackboneSpec& spec);
    std::string name() const override { return "seq_gru"; }

    ad::Param P, b_p;
    ad::Param W_z, U_z, b_z;
    ad::Param W_r, U_r, b_r;
    ad::Param W_n, U_n, b_n;

   protected:
    ad::Var encode_native(ad::Tape& tape, const std::vector<SampleRef>& batch) const override;
    std::vector<ad::Param*> native_parameters() override;
};

using BackboneFactory = std::function<std::unique_ptr<Backbone>(const BackboneSpec&)>;

class BackboneRegistry {
   public:
    BackboneRegistry() = default;
    /// Registry preloaded with code_mlp and seq_gru.
    static BackboneRegistry with_builtins();
    /// Process-wide registry used by the harness.
    static BackboneRegistry& global();

    void add(const std::string& name, BackboneFactory factory);
    bool contains(const std::string& name) const { return factories_.count(name) > 0; }
    std::unique_ptr<Backbone> create(const std::string& name, const BackboneSpec& spec) const;
    std::vector<std::string> names() const;

   private:
    std::map<std::string, BackboneFactory> factories_;
};

void register_backbone(const std::string& name, BackboneFactory factory);
std::unique_ptr<Backbone> make_backbone(const std::string& name, const BackboneSpec& spec);

}  // namespace cohort
