#pragma once

#include "syllo/tensor.hpp"

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace syllo {

struct ModelConfig;

enum class Site {
    ResidPre,
    Ln1Out,
    AttnScores,  // positions x positions, masked entries -inf
    AttnPattern, // positions x positions, rows sum to one
    HeadZ,       // positions x d_head
    HeadResult,  // positions x d_model, z_h * W_O[h] without the output bias
    AttnOut,
    ResidMid,
    MlpPre,      // positions x d_mlp, before the nonlinearity
    MlpOut,
    ResidPost,
    FinalLn,
    Logits,
};

bool is_head_scoped(Site site);
bool is_final_scoped(Site site);
std::string_view to_string(Site site);
Site parse_site(std::string_view name);

inline constexpr int kFinalLayer = -1;

struct HookSite {
    int layer = 0;
    Site site = Site::ResidPre;
    std::optional<int> head;

    // Throws std::invalid_argument unless head is present exactly for head-scoped sites
    // and final-scoped sites use kFinalLayer.
    HookSite(int layer, Site site, std::optional<int> head = std::nullopt);

    static HookSite final_site(Site site) { return HookSite(kFinalLayer, site); }

    // Throws std::out_of_range for layers or heads outside config.
    void check(const ModelConfig& config) const;

    // e.g. "blocks.7.attn.hook_result.2", "ln_final", "logits"
    std::string name() const;

    auto operator<=>(const HookSite&) const = default;
};

// Replacement applied to a site's value before anything downstream reads it. A tensor
// replaces the value outright (shape must match); a transform edits it in place.
template <typename Scalar>
using HookTransform = std::function<void(Mat<Scalar>&)>;

template <typename Scalar>
using HookAction = std::variant<Mat<Scalar>, HookTransform<Scalar>>;

template <typename Scalar>
class HookSet {
public:
    HookSet& replace(const HookSite& site, Mat<Scalar> value) {
        actions_.insert_or_assign(site, HookAction<Scalar>(std::move(value)));
        return *this;
    }

    HookSet& transform(const HookSite& site, HookTransform<Scalar> fn) {
        actions_.insert_or_assign(site, HookAction<Scalar>(std::move(fn)));
        return *this;
    }

    // Overwrite only the given position; other rows keep their computed values.
    HookSet& replace_row(const HookSite& site, int position, Vec<Scalar> row) {
        return transform(site, [position, row = std::move(row)](Mat<Scalar>& m) {
            m.row(position) = row;
        });
    }

    bool empty() const { return actions_.empty(); }
    std::size_t size() const { return actions_.size(); }
    bool contains(const HookSite& site) const { return actions_.count(site) != 0; }
    const std::map<HookSite, HookAction<Scalar>>& actions() const { return actions_; }

    // Lowest layer any hook touches (final-scoped sites count as n_layers).
    int first_layer(int n_layers) const;

    // Throws std::invalid_argument on shape mismatch.
    void apply(const HookSite& site, Mat<Scalar>& value) const;

private:
    std::map<HookSite, HookAction<Scalar>> actions_;
};

} // namespace syllo
