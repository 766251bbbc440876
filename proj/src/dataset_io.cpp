#include "s4al/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace s4al {

namespace fs = std::filesystem;

namespace {

// Reads a binary PNM header ("P5"/"P6", width, height, maxval) and returns
// the stream positioned at the pixel data.
std::ifstream open_pnm(const std::string& path, const char* magic, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path);
  std::string m;
  in >> m;
  if (m != magic) fail(ErrorKind::kFormat, path + ": expected " + magic);
  int maxval = 0;
  int* fields[] = {&w, &h, &maxval};
  for (int* f : fields) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    in >> *f;
  }
  if (!in || w <= 0 || h <= 0 || maxval != 255) fail(ErrorKind::kFormat, path + ": unsupported PNM header");
  in.get();  // single whitespace before raster
  return in;
}

}  // namespace

Image read_ppm(const std::string& path) {
  int w = 0, h = 0;
  std::ifstream in = open_pnm(path, "P6", w, h);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) fail(ErrorKind::kFormat, path + ": truncated pixel data");
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  require(image.channels == 3, "PPM needs a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out << "P6\n" << image.w << ' ' << image.h << "\n255\n";
  std::vector<unsigned char> raw(image.pixels() * 3);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        raw[(static_cast<std::size_t>(y) * image.w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

LabelMap read_pgm(const std::string& path) {
  int w = 0, h = 0;
  std::ifstream in = open_pnm(path, "P5", w, h);
  LabelMap label(1, h, w);
  in.read(reinterpret_cast<char*>(label.data.data()), static_cast<std::streamsize>(label.data.size()));
  if (!in) fail(ErrorKind::kFormat, path + ": truncated pixel data");
  return label;
}

void write_pgm(const LabelMap& label, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out << "P5\n" << label.w << ' ' << label.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(label.data.data()), static_cast<std::streamsize>(label.data.size()));
}

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  std::ifstream manifest(base / "manifest.txt");
  if (!manifest) fail(ErrorKind::kIo, "missing manifest in " + root);
  Dataset ds;
  ds.num_classes = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (value.empty()) fail(ErrorKind::kFormat, "manifest line " + std::to_string(lineno) + " is incomplete");
    if (key == "num_classes") {
      ds.num_classes = std::stoi(value);
    } else if (key == "ignore_index") {
      ds.ignore_index = std::stoi(value);
    } else if (key == "train" || key == "val" || key == "test") {
      Sample s{value, read_ppm((base / "images" / (value + ".ppm")).string()),
               read_pgm((base / "labels" / (value + ".pgm")).string())};
      (key == "train" ? ds.train : key == "val" ? ds.val : ds.test).push_back(std::move(s));
    } else {
      fail(ErrorKind::kFormat, "manifest line " + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  if (ds.train.empty()) fail(ErrorKind::kFormat, "manifest lists no train images");
  ds.height = ds.train.front().image.h;
  ds.width = ds.train.front().image.w;
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& root) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "labels");
  std::ofstream manifest(base / "manifest.txt");
  if (!manifest) fail(ErrorKind::kIo, "cannot write manifest in " + root);
  manifest << "num_classes " << dataset.num_classes << "\nignore_index " << dataset.ignore_index << '\n';
  auto emit = [&](const std::vector<Sample>& split, const char* name) {
    for (const Sample& s : split) {
      write_ppm(s.image, (base / "images" / (s.id + ".ppm")).string());
      write_pgm(s.label, (base / "labels" / (s.id + ".pgm")).string());
      manifest << name << ' ' << s.id << '\n';
    }
  };
  emit(dataset.train, "train");
  emit(dataset.val, "val");
  emit(dataset.test, "test");
}

}  // namespace s4al
