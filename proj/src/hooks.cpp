#include "syllo/hooks.hpp"

#include "syllo/config.hpp"

#include <array>
#include <stdexcept>

namespace syllo {

namespace {

constexpr std::array<std::pair<Site, std::string_view>, 13> kSiteNames{{
    {Site::ResidPre, "resid_pre"},
    {Site::Ln1Out, "ln1_out"},
    {Site::AttnScores, "attn_scores"},
    {Site::AttnPattern, "attn_pattern"},
    {Site::HeadZ, "head_z"},
    {Site::HeadResult, "head_result"},
    {Site::AttnOut, "attn_out"},
    {Site::ResidMid, "resid_mid"},
    {Site::MlpPre, "mlp_pre"},
    {Site::MlpOut, "mlp_out"},
    {Site::ResidPost, "resid_post"},
    {Site::FinalLn, "final_ln"},
    {Site::Logits, "logits"},
}};

} // namespace

bool is_head_scoped(Site s) {
    return s == Site::AttnScores || s == Site::AttnPattern || s == Site::HeadZ || s == Site::HeadResult;
}

bool is_final_scoped(Site s) { return s == Site::FinalLn || s == Site::Logits; }

std::string_view to_string(Site site) {
    for (const auto& [s, n] : kSiteNames)
        if (s == site) return n;
    return "?";
}

Site parse_site(std::string_view name) {
    for (const auto& [s, n] : kSiteNames)
        if (n == name) return s;
    throw std::invalid_argument("unknown hook site '" + std::string(name) + "'");
}

HookSite::HookSite(int layer_, Site site_, std::optional<int> head_)
    : layer(layer_), site(site_), head(head_) {
    if (is_head_scoped(site) != head.has_value())
        throw std::invalid_argument(std::string("hook site ") + std::string(to_string(site)) +
                                    (head ? " does not take a head index" : " requires a head index"));
    if (is_final_scoped(site) != (layer == kFinalLayer))
        throw std::invalid_argument(std::string("hook site ") + std::string(to_string(site)) +
                                    (layer == kFinalLayer ? " is per-layer" : " is final-scoped"));
}

void HookSite::check(const ModelConfig& config) const {
    if (is_final_scoped(site)) return;
    if (layer < 0 || layer >= config.n_layers)
        throw std::out_of_range("unknown site " + name() + ": layer out of range");
    if (head && (*head < 0 || *head >= config.n_heads))
        throw std::out_of_range("unknown site " + name() + ": head out of range");
}

std::string HookSite::name() const {
    std::string out = is_final_scoped(site) ? "" : "blocks." + std::to_string(layer) + ".";
    out += to_string(site);
    if (head) out += "." + std::to_string(*head);
    return out;
}

template <typename Scalar>
int HookSet<Scalar>::first_layer(int n_layers) const {
    int first = n_layers;
    for (const auto& [site, action] : actions_)
        first = std::min(first, is_final_scoped(site.site) ? n_layers : site.layer);
    return first;
}

template <typename Scalar>
void HookSet<Scalar>::apply(const HookSite& site, Mat<Scalar>& value) const {
    auto it = actions_.find(site);
    if (it == actions_.end()) return;
    if (const auto* replacement = std::get_if<Mat<Scalar>>(&it->second)) {
        if (replacement->rows() != value.rows() || replacement->cols() != value.cols())
            throw std::invalid_argument("shape mismatch patching " + site.name() + ": expected " +
                                        std::to_string(value.rows()) + "x" + std::to_string(value.cols()) +
                                        ", got " + std::to_string(replacement->rows()) + "x" +
                                        std::to_string(replacement->cols()));
        value = *replacement;
    } else {
        const auto rows = value.rows(), cols = value.cols();
        std::get<HookTransform<Scalar>>(it->second)(value);
        if (value.rows() != rows || value.cols() != cols)
            throw std::invalid_argument("shape mismatch: transform at " + site.name() + " resized its tensor");
    }
}

template class HookSet<float>;
template class HookSet<double>;

} // namespace syllo
