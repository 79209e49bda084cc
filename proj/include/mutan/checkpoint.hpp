#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mutan/blob.hpp"
#include "mutan/model.hpp"

namespace mutan {

/// Manifest carries the fusion (and scorer) configs; the blob carries one
/// f64 array per learnable parameter, named as in VqaModel::params().
inline void save_checkpoint(const VqaModel& model, const std::filesystem::path& path,
                            const Manifest& extra = Manifest{}) {
    Document doc;
    doc.manifest.set("kind", "checkpoint");
    doc.manifest.set("attention", model.has_attention() ? "1" : "0");
    doc.manifest.merge_text(serialize(model.fusion().config(), "fusion."));
    if (model.scorer()) doc.manifest.merge_text(serialize(model.scorer()->config(), "scorer."));
    for (const auto& [k, v] : extra.entries()) doc.manifest.set(k, v);
    const ParamVector params = model.params();
    for (std::size_t i = 0; i < params.entry_count(); ++i) {
        const auto& spec = params.spec(i);
        std::vector<std::uint32_t> dims(spec.shape.begin(), spec.shape.end());
        auto e = params.entry(i);
        doc.arrays.push_back(BlobArray::doubles(spec.name, std::move(dims), {e.begin(), e.end()}));
    }
    write_document(path, doc);
}

inline VqaModel model_from_manifest(const Manifest& m) {
    const auto kv = m.as_map();
    FusionOperator fusion(parse_fusion_config(kv, "fusion."));
    if (m.contains("attention") && m.get("attention") == "1")
        return VqaModel(FusionOperator(parse_fusion_config(kv, "scorer.")), std::move(fusion));
    return VqaModel(std::move(fusion));
}

inline VqaModel load_checkpoint(const std::filesystem::path& path, Manifest* manifest_out = nullptr) {
    const Document doc = read_document(path);
    if (!doc.manifest.contains("kind") || doc.manifest.get("kind") != "checkpoint")
        throw FormatError(FormatErrc::malformed, path.string() + " is not a checkpoint document");
    VqaModel model = model_from_manifest(doc.manifest);
    ParamVector params = model.params();
    for (std::size_t i = 0; i < params.entry_count(); ++i) {
        const auto& spec = params.spec(i);
        const BlobArray& a = doc.array(spec.name);
        if (a.dtype != DType::f64 || a.f64.size() != spec.size())
            throw FormatError(FormatErrc::malformed, "checkpoint array " + spec.name + " has the wrong size");
        std::copy(a.f64.begin(), a.f64.end(), params.entry(i).begin());
    }
    model.set_params(params.values());
    if (manifest_out) *manifest_out = doc.manifest;
    return model;
}

}  // namespace mutan
