#pragma once

#include "syllo/hooks.hpp"
#include "syllo/tensor.hpp"

#include <map>
#include <stdexcept>

namespace syllo {

// Every hook-point value from one forward pass, keyed by site.
template <typename Scalar>
class ActivationCache {
public:
    ActivationCache() = default;
    ActivationCache(Tokens tokens, int n_layers, int n_heads)
        : tokens_(std::move(tokens)), n_layers_(n_layers), n_heads_(n_heads) {}

    const Tokens& tokens() const { return tokens_; }
    int n_positions() const { return static_cast<int>(tokens_.size()); }
    int n_layers() const { return n_layers_; }
    int n_heads() const { return n_heads_; }

    bool contains(const HookSite& site) const { return acts_.count(site) != 0; }

    // Throws std::out_of_range ("incomplete cache") when the site was not recorded.
    const Mat<Scalar>& at(const HookSite& site) const {
        auto it = acts_.find(site);
        if (it == acts_.end()) throw std::out_of_range("incomplete cache: missing " + site.name());
        return it->second;
    }

    void set(const HookSite& site, Mat<Scalar> value) { acts_.insert_or_assign(site, std::move(value)); }

    const Mat<Scalar>& resid_pre(int layer) const { return at({layer, Site::ResidPre}); }
    const Mat<Scalar>& resid_mid(int layer) const { return at({layer, Site::ResidMid}); }
    const Mat<Scalar>& resid_post(int layer) const { return at({layer, Site::ResidPost}); }
    const Mat<Scalar>& attn_out(int layer) const { return at({layer, Site::AttnOut}); }
    const Mat<Scalar>& mlp_out(int layer) const { return at({layer, Site::MlpOut}); }
    const Mat<Scalar>& pattern(int layer, int head) const { return at({layer, Site::AttnPattern, head}); }
    const Mat<Scalar>& head_result(int layer, int head) const { return at({layer, Site::HeadResult, head}); }

    const std::map<HookSite, Mat<Scalar>>& entries() const { return acts_; }
    std::map<HookSite, Mat<Scalar>>& entries() { return acts_; }

private:
    Tokens tokens_;
    int n_layers_ = 0;
    int n_heads_ = 0;
    std::map<HookSite, Mat<Scalar>> acts_;
};

} // namespace syllo
