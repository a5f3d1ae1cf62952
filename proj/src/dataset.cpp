#include "sr3/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sr3/errors.hpp"

namespace sr3 {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::Train ? "train" : "val"; }

DatasetHandle synth_toy_dataset(int n, int hr_size, int scale, Rng& rng) {
  if (n < 1) throw ShapeError("synth_toy_dataset: n must be >= 1");
  DatasetHandle data;
  data.hr_size = hr_size;
  data.scale_factor = scale;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy-%05d", i);
    const Image img = synth_toy_image(hr_size, rng);
    data.index.emplace_back(id);
    data.items.push_back({id, "synthetic", make_pair(img, hr_size, scale)});
  }
  return data;
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, std::string> read_manifest_labels(const fs::path& root) {
  std::map<std::string, std::string> labels;
  std::ifstream in(root / "manifest.tsv");
  if (!in) return labels;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string id, label;
    if (std::getline(row, id, '\t') && std::getline(row, label, '\t')) labels[id] = label;
  }
  return labels;
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

DatasetHandle load_corpus(const fs::path& root, Split split, int hr_size, int scale) {
  const fs::path dir = root / to_string(split);
  if (!fs::is_directory(dir)) throw IoError("corpus split directory not found: " + dir.string());
  const auto files = list_images(dir);
  const auto labels = read_manifest_labels(root);
  DatasetHandle data;
  data.root = root;
  data.split = split;
  data.hr_size = hr_size;
  data.scale_factor = scale;
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    const auto label = labels.find(id);
    data.index.push_back(id);
    data.items.push_back({id, label == labels.end() ? "unlabeled" : label->second,
                          make_pair(load_image(file), hr_size, scale)});
  }
  if (data.items.empty()) throw IoError("corpus split is empty: " + dir.string());
  return data;
}

void seeded_shuffle(std::vector<std::size_t>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(values[i - 1], values[j]);
  }
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::uint64_t seed)
    : size_(dataset_size), seed_(seed) {
  if (size_ == 0) throw ShapeError("BatchSampler: empty dataset");
}

const std::vector<std::size_t>& BatchSampler::epoch_order(long epoch) {
  if (epoch != cached_epoch_) {
    order_.resize(size_);
    for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
    Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
    seeded_shuffle(order_, rng);
    cached_epoch_ = epoch;
  }
  return order_;
}

std::vector<std::size_t> BatchSampler::batch(long step, std::size_t batch_size) {
  if (step < 0) throw ShapeError("BatchSampler: negative step");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  const auto first = static_cast<std::size_t>(step) * batch_size;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t pos = first + k;
    out.push_back(epoch_order(static_cast<long>(pos / size_))[pos % size_]);
  }
  return out;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const int w = images.front()->width, h = images.front()->height;
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  Tensor<T> out({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  auto values = out.data();
  for (std::size_t s = 0; s < images.size(); ++s) {
    const Image& img = *images[s];
    if (img.width != w || img.height != h) throw ShapeError("images_to_tensor: mixed image sizes");
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          values[(s * 3 + c) * plane + static_cast<std::size_t>(y) * w + x] =
              static_cast<T>(2.0 * static_cast<double>(img.at(x, y, c)) - 1.0);
        }
      }
    }
  }
  return out;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::size_t sample) {
  if (t.rank() != 4 || t.dim(1) != 3 || sample >= t.dim(0)) {
    throw ShapeError("tensor_to_image: expected [N,3,H,W], got " + shape_str(t.shape()));
  }
  const int h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  Image img(w, h);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = (static_cast<double>(t[(sample * 3 + c) * plane + static_cast<std::size_t>(y) * w + x]) + 1.0) / 2.0;
        img.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

template <typename T>
ConditionedBatch<T> make_batch(const DatasetHandle& data, const std::vector<std::size_t>& ids,
                               Rng* augment_rng) {
  std::vector<ImagePair> pairs;
  pairs.reserve(ids.size());
  for (auto i : ids) {
    const auto& pair = data.items.at(i).pair;
    pairs.push_back(augment_rng ? augment(pair, *augment_rng) : pair);
  }
  std::vector<const Image*> cond, target;
  for (const auto& p : pairs) {
    cond.push_back(&p.lr_up);
    target.push_back(&p.hr);
  }
  return {images_to_tensor<T>(cond), images_to_tensor<T>(target)};
}

template Tensor<float> images_to_tensor(const std::vector<const Image*>&);
template Tensor<double> images_to_tensor(const std::vector<const Image*>&);
template Image tensor_to_image(const Tensor<float>&, std::size_t);
template Image tensor_to_image(const Tensor<double>&, std::size_t);
template ConditionedBatch<float> make_batch(const DatasetHandle&, const std::vector<std::size_t>&, Rng*);
template ConditionedBatch<double> make_batch(const DatasetHandle&, const std::vector<std::size_t>&, Rng*);

std::vector<PreprocessRow> preprocess_corpus(const fs::path& raw_dir, const fs::path& out_dir,
                                             const PreprocessOptions& options) {
  if (!fs::is_directory(raw_dir)) throw IoError("raw image directory not found: " + raw_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(raw_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  struct Survivor {
    std::string id, label;
    int orig_w, orig_h;
    bool cleaned;
    Image hr;
  };
  std::vector<PreprocessRow> report;
  std::vector<Survivor> survivors;
  std::map<std::string, int> seen_ids;
  for (const auto& file : files) {
    const auto rel = fs::relative(file, raw_dir);
    const std::string label =
        std::distance(rel.begin(), rel.end()) > 1 ? rel.begin()->string() : "unlabeled";
    std::string id = file.stem().string();
    if (seen_ids[id]++ > 0) id += "-" + std::to_string(seen_ids[id] - 1);

    const Image img = load_image(file);
    const auto cleaned = clean_image(img, options.thresholds, options.min_keep_fraction);
    if (cleaned.action == CleanAction::RejectedArea) {
      report.push_back({id, "rejected-area", cleaned.crop});
      continue;
    }
    if (cleaned.image.width < options.hr_size || cleaned.image.height < options.hr_size) {
      report.push_back({id, "rejected-small", cleaned.crop});
      continue;
    }
    report.push_back({id, to_string(cleaned.action), cleaned.crop});
    survivors.push_back({id, label, img.width, img.height, cleaned.action == CleanAction::Cropped,
                         bicubic_resize(center_crop_square(cleaned.image), options.hr_size,
                                        options.hr_size)});
  }
  if (survivors.empty()) {
    throw IoError("preprocessing produced an empty corpus from " + raw_dir.string());
  }

  std::sort(survivors.begin(), survivors.end(),
            [](const Survivor& a, const Survivor& b) { return a.id < b.id; });
  std::vector<std::size_t> order(survivors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(options.seed);
  seeded_shuffle(order, split_rng);
  const auto val_count = survivors.size() < 2
                             ? std::size_t{0}
                             : static_cast<std::size_t>(std::ceil(options.val_fraction * survivors.size()));
  std::vector<Split> assignment(survivors.size(), Split::Train);
  for (std::size_t k = 0; k < val_count; ++k) assignment[order[k]] = Split::Val;

  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "val");
  std::ofstream manifest(out_dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (out_dir / "manifest.tsv").string());
  manifest << "id\tlabel\torig_width\torig_height\tcleaned\tsplit\n";
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    const auto& s = survivors[i];
    save_image(s.hr, out_dir / to_string(assignment[i]) / (s.id + ".png"));
    manifest << s.id << '\t' << s.label << '\t' << s.orig_w << '\t' << s.orig_h << '\t'
             << (s.cleaned ? 1 : 0) << '\t' << to_string(assignment[i]) << '\n';
  }

  std::ofstream out(out_dir / "preprocess_report.tsv", std::ios::binary);
  if (!out) throw IoError("cannot write " + (out_dir / "preprocess_report.tsv").string());
  out << "id\taction\tcrop_x0\tcrop_y0\tcrop_x1\tcrop_y1\n";
  for (const auto& row : report) {
    out << row.id << '\t' << row.action;
    if (row.crop && row.action == "cropped") {
      out << '\t' << row.crop->x0 << '\t' << row.crop->y0 << '\t' << row.crop->x1 << '\t' << row.crop->y1;
    } else {
      out << "\t-\t-\t-\t-";
    }
    out << '\n';
  }
  return report;
}

}  // namespace sr3
