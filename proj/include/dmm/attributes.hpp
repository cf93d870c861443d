#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dmm {

enum class AttributeGroup : std::uint8_t { objective = 0, subjective = 1 };

std::string to_string(AttributeGroup group);
AttributeGroup parse_group(const std::string& text);

/// Ordered attribute names with a learning-complexity group per attribute.
/// The order here is the canonical column order of every J-wide matrix.
struct AttributeSpec {
  std::vector<std::string> names;
  std::vector<AttributeGroup> groups;

  std::size_t size() const { return names.size(); }
  std::vector<std::size_t> indices(AttributeGroup group) const;
  std::size_t index_of(const std::string& name) const;

  /// Throws std::invalid_argument for duplicate names, mismatched lengths, or
  /// an empty group when `grouping` is on.
  void validate(bool grouping) const;

  /// Six attributes: three objective (Eyeglasses, Wearing_Hat, Bangs) and
  /// three subjective (Smiling, Pointy_Nose, Big_Lips).
  static AttributeSpec desk_default();

  bool operator==(const AttributeSpec&) const = default;
};

}  // namespace dmm
