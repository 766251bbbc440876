#pragma once

#include <string>

#include "s4al/datapool.hpp"

namespace s4al {

// On-disk layout:
//   <root>/manifest.txt      "num_classes K", "ignore_index V", then one
//                             "<split> <id>" line per image (split is
//                             train, val or test)
//   <root>/images/<id>.ppm   binary 8-bit RGB
//   <root>/labels/<id>.pgm   binary 8-bit class codes
Dataset load_dataset(const std::string& root);
void save_dataset(const Dataset& dataset, const std::string& root);

Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);
LabelMap read_pgm(const std::string& path);
void write_pgm(const LabelMap& label, const std::string& path);

}  // namespace s4al
