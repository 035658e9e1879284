#include "expanse/expansion/templates.hpp"

#include "expanse/error.hpp"

#include <algorithm>
#include <set>

namespace expanse {

const std::string& template_text(std::string_view name, std::string_view version) {
  for (const auto& a : detail::template_assets()) {
    if (a.name == name && a.version == version) return a.text;
  }
  fail(ErrorCode::not_found, "no template '" + std::string(name) + "' in version '" +
                                 std::string(version) + "'");
}

std::vector<std::string> template_versions() {
  std::set<std::string> versions;
  for (const auto& a : detail::template_assets()) versions.insert(a.version);
  return {versions.begin(), versions.end()};
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view name = text.substr(i + 1, close - i - 1);
        const bool known = std::find(std::begin(kPlaceholders), std::end(kPlaceholders), name) !=
                           std::end(kPlaceholders);
        if (known) {
          const auto it = values.find(std::string(name));
          if (it == values.end()) {
            fail(ErrorCode::invalid_input, "template placeholder {" + std::string(name) + "} has no value");
          }
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}

}  // namespace expanse
