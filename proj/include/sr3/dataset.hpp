#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sr3/diffusion.hpp"
#include "sr3/imaging.hpp"

namespace sr3 {

enum class Split { Train, Val };
std::string to_string(Split split);

struct PairItem {
  std::string id;
  std::string label;  // class label; carried along, unused by training
  ImagePair pair;
};

/// In-memory view of one corpus split. Items are materialised LR/HR pairs.
struct DatasetHandle {
  std::filesystem::path root;  // empty for synthetic data
  Split split = Split::Train;
  std::vector<std::string> index;
  int scale_factor = 1;
  int hr_size = 0;
  std::vector<PairItem> items;

  std::size_t size() const { return items.size(); }
};

/// PNG/JPEG files directly inside `dir`, sorted by path.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// `n` synthetic images of side hr_size run through make_pair, ids toy-00000...
DatasetHandle synth_toy_dataset(int n, int hr_size, int scale, Rng& rng);

/// Loads every image under root/<split>/ (sorted by id) and builds pairs.
/// Labels come from root/manifest.tsv when present.
DatasetHandle load_corpus(const std::filesystem::path& root, Split split, int hr_size, int scale);

/// Epoch-wise seeded order over a dataset. Epoch e is a shuffle drawn from a
/// generator seeded by (seed, e), so the batch at any step is a pure function
/// of (seed, step) and a resumed run sees the same batches.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::uint64_t seed);
  /// Indices for the `step`-th batch (0-based) of `batch_size` items.
  std::vector<std::size_t> batch(long step, std::size_t batch_size);

 private:
  const std::vector<std::size_t>& epoch_order(long epoch);
  std::size_t size_;
  std::uint64_t seed_;
  long cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

/// Fisher-Yates shuffle driven by Rng (portable, unlike std::shuffle).
void seeded_shuffle(std::vector<std::size_t>& values, Rng& rng);

/// Images in [0,1] to a [N,3,H,W] tensor in the model range [-1, 1].
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images);

/// One sample of a [N,3,H,W] model-range tensor back to a [0,1] image.
template <typename T>
Image tensor_to_image(const Tensor<T>& t, std::size_t sample);

/// Assembles a batch, applying augment() to each pair when `augment_rng` is set.
template <typename T>
ConditionedBatch<T> make_batch(const DatasetHandle& data, const std::vector<std::size_t>& ids,
                               Rng* augment_rng);

struct PreprocessOptions {
  int hr_size = 512;
  int scale = 8;
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
  GreenThresholds thresholds;
  double min_keep_fraction = 0.6;
};

struct PreprocessRow {
  std::string id;
  std::string action;  // kept, cropped, rejected-area, rejected-small
  std::optional<Box> crop;
};

/// Cleans every image under raw_dir (recursively; the first directory level
/// names the class label), writes surviving items as hr_size PNGs to
/// out_dir/{train,val}/<id>.png plus manifest.tsv and preprocess_report.tsv.
/// Throws IoError if no item survives.
std::vector<PreprocessRow> preprocess_corpus(const std::filesystem::path& raw_dir,
                                             const std::filesystem::path& out_dir,
                                             const PreprocessOptions& options);

}  // namespace sr3
