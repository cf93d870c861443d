#include "dmm/attributes.hpp"

#include <set>
#include <stdexcept>

namespace dmm {

std::string to_string(AttributeGroup group) {
  return group == AttributeGroup::objective ? "objective" : "subjective";
}

AttributeGroup parse_group(const std::string& text) {
  if (text == "objective") return AttributeGroup::objective;
  if (text == "subjective") return AttributeGroup::subjective;
  throw std::invalid_argument("unknown attribute group '" + text + "'");
}

std::vector<std::size_t> AttributeSpec::indices(AttributeGroup group) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (groups[j] == group) out.push_back(j);
  }
  return out;
}

std::size_t AttributeSpec::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return j;
  }
  throw std::invalid_argument("unknown attribute '" + name + "'");
}

void AttributeSpec::validate(bool grouping) const {
  if (names.empty()) throw std::invalid_argument("attribute spec: no attributes");
  if (names.size() != groups.size()) throw std::invalid_argument("attribute spec: names and groups differ in length");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw std::invalid_argument("attribute spec: empty attribute name");
    if (!seen.insert(n).second) throw std::invalid_argument("attribute spec: duplicate attribute '" + n + "'");
  }
  if (grouping) {
    if (indices(AttributeGroup::objective).empty()) throw std::invalid_argument("attribute spec: no objective attributes");
    if (indices(AttributeGroup::subjective).empty()) {
      throw std::invalid_argument("attribute spec: no subjective attributes");
    }
  }
}

AttributeSpec AttributeSpec::desk_default() {
  using enum AttributeGroup;
  return {{"Eyeglasses", "Wearing_Hat", "Bangs", "Smiling", "Pointy_Nose", "Big_Lips"},
          {objective, objective, objective, subjective, subjective, subjective}};
}

}  // namespace dmm
