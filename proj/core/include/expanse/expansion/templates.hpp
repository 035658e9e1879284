#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace expanse {

inline constexpr std::string_view kTemplateVersion = "v1";

/// Raw text of a versioned instruction template, e.g. ("v1", "expand").
/// Throws not_found for an unknown pair.
const std::string& template_text(std::string_view name, std::string_view version = kTemplateVersion);

/// Versions that ship with the library.
std::vector<std::string> template_versions();

/// Placeholder names templates may use.
inline constexpr std::string_view kPlaceholders[] = {"t0", "t1", "categorization", "preference_context",
                                                     "K", "images", "captions"};

/// Substitutes `{name}` placeholders. Only known placeholder names are
/// touched, so literal JSON braces in a template pass through. A known
/// placeholder without a value raises invalid_input.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

namespace detail {
struct TemplateAsset {
  std::string version;
  std::string name;
  std::string text;
};
const std::vector<TemplateAsset>& template_assets();
}  // namespace detail

}  // namespace expanse
