#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace gdn {

struct LesionClass {
  std::string_view id;        // dataset directory name
  std::string_view display;   // human-readable name
  bool cancer;
};

// Sorted by id, so a dataset laid out with these directory names maps each
// class to the same index as this table.
inline constexpr std::array<LesionClass, 6> kLesionClasses{{
    {"actinic_keratoses", "Actinic Keratoses", false},
    {"basal_cell_carcinoma", "Basal Cell Carcinoma", true},
    {"dermatofibroma", "Dermatofibroma", false},
    {"melanoma", "Melanoma", true},
    {"seborrheic_keratoses", "Seborrheic Keratoses", false},
    {"vascular_lesions", "Vascular Lesions", false},
}};

// Accepts the id or the display name, case-insensitively; spaces, dashes and
// underscores are interchangeable.
std::optional<LesionClass> find_lesion_class(std::string_view name);

}  // namespace gdn
