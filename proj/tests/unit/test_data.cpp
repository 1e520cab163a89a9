#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fopro/data.hpp"
#include "fopro/errors.hpp"
#include "fopro/eval.hpp"
#include "fopro/models.hpp"
#include "fopro/synthetic.hpp"

using namespace fopro;
using namespace fopro::data;
namespace fs = std::filesystem;

namespace {

LongTailSpec three_class_spec() {
  LongTailSpec s;
  s.class_names = {"a", "b", "c"};
  s.full_counts = {300, 300, 300};
  s.train_counts = {150, 15, 2};
  s.seed = 5;
  return s;
}

std::vector<int64_t> counts_of(const DatasetManifest& m, Split split, int k) { return m.class_counts(split, k); }

}  // namespace

TEST(Data, IsicFixtureReproducesTheOneToHundredRow) {
  auto spec = load_longtail_fixture(default_fixture_path(), "1:100");
  EXPECT_EQ(spec.class_names, (std::vector<std::string>{"NV", "MEL", "BCC", "BKL", "AK", "SCC", "VASC", "DF"}));
  EXPECT_EQ(spec.full_counts, (std::vector<int64_t>{12875, 4522, 3323, 2624, 867, 628, 253, 239}));
  spec.seed = 11;
  spec.validate();
  const auto m = build_longtail_split(synthetic_full_manifest(spec), spec);
  EXPECT_EQ(counts_of(m, Split::train, 8), (std::vector<int64_t>{12725, 4372, 3173, 1788, 717, 478, 103, 89}));
  EXPECT_EQ(counts_of(m, Split::val, 8), std::vector<int64_t>(8, 50));
  EXPECT_EQ(counts_of(m, Split::test, 8), std::vector<int64_t>(8, 100));
  // Every class except BKL takes all images left after the holdout.
  for (int c = 0; c < 8; ++c) {
    if (spec.class_names[c] == "BKL") continue;
    EXPECT_EQ(spec.train_counts[c], spec.full_counts[c] - 150) << spec.class_names[c];
  }
  EXPECT_THROW(load_longtail_fixture(default_fixture_path(), "1:3"), InvalidArgument);
}

TEST(Data, SplitIsDeterministicDisjointAndBalanced) {
  const auto spec = three_class_spec();
  const auto full = synthetic_full_manifest(spec);
  const auto a = build_longtail_split(full, spec);
  const auto b = build_longtail_split(full, spec);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(counts_of(a, Split::train, 3), spec.train_counts);
  EXPECT_EQ(counts_of(a, Split::val, 3), std::vector<int64_t>(3, 50));
  EXPECT_EQ(counts_of(a, Split::test, 3), std::vector<int64_t>(3, 100));
  std::set<std::string> seen;
  for (const auto& r : a.rows) EXPECT_TRUE(seen.insert(r.path).second) << r.path;

  auto other = spec;
  other.seed = 6;
  EXPECT_NE(build_longtail_split(full, other).rows, a.rows);
}

TEST(Data, ShortfallNamesTheClass) {
  auto spec = three_class_spec();
  spec.train_counts = {150, 151, 2};
  try {
    spec.validate();
    FAIL() << "expected ShortfallError";
  } catch (const ShortfallError& e) {
    EXPECT_EQ(e.class_name(), "b");
  }
  auto full = synthetic_full_manifest(three_class_spec());
  EXPECT_THROW(build_longtail_split(full, spec), ShortfallError);
}

TEST(Data, ManifestRoundTrip) {
  const auto dir = fs::temp_directory_path() / "fopro_data_manifest";
  fs::create_directories(dir);
  const auto m = build_longtail_split(synthetic_full_manifest(three_class_spec()), three_class_spec());
  write_manifest(dir / "m.csv", m);
  EXPECT_EQ(read_manifest(dir / "m.csv").rows, m.rows);

  std::ofstream(dir / "two.csv") << "path,label\nx.png,1\ny.png,0\n";
  const auto two = read_manifest(dir / "two.csv");
  ASSERT_EQ(two.rows.size(), 2u);
  EXPECT_EQ(two.rows[0].split, Split::unassigned);
  EXPECT_EQ(two.rows[0].label, 1);

  std::ofstream(dir / "bad.csv") << "path,label,split\nx.png,zero,train\n";
  EXPECT_THROW(read_manifest(dir / "bad.csv"), InvalidManifest);
  EXPECT_EQ(split_from_string(to_string(Split::val)), Split::val);
}

TEST(Data, ShotGroupingThresholds) {
  const std::vector<int64_t> counts{800, 300, 50, 700, 70};
  const auto g = shot_grouping(counts);
  EXPECT_EQ(g.groups, (std::vector<ShotGroup>{ShotGroup::head, ShotGroup::medium, ShotGroup::tail,
                                              ShotGroup::medium, ShotGroup::medium}));
  const std::vector<int64_t> boundary{701, 69};
  EXPECT_EQ(shot_grouping(boundary).groups, (std::vector<ShotGroup>{ShotGroup::head, ShotGroup::tail}));
  // A 23-class long-tailed vector spans all three groups.
  std::vector<int64_t> many;
  for (int i = 0; i < 23; ++i) many.push_back(static_cast<int64_t>(1200.0 * std::pow(0.75, i)) + 1);
  const auto gm = shot_grouping(many);
  for (const auto group : {ShotGroup::head, ShotGroup::medium, ShotGroup::tail}) {
    EXPECT_NE(std::find(gm.groups.begin(), gm.groups.end(), group), gm.groups.end());
  }
}

TEST(Data, ReweightingWeights) {
  const std::vector<int64_t> a{1, 1}, b{3, 1}, c{9, 3, 1};
  EXPECT_EQ(reweighting_weights(a), (std::vector<double>{1.0, 1.0}));
  const auto wb = reweighting_weights(b);
  EXPECT_NEAR(wb[0], 0.5, 1e-12);
  EXPECT_NEAR(wb[1], 1.5, 1e-12);
  const auto wc = reweighting_weights(c);
  EXPECT_NEAR(wc[0], 0.2308, 1e-4);
  EXPECT_NEAR(wc[1], 0.6923, 1e-4);
  EXPECT_NEAR(wc[2], 2.0769, 1e-4);
  EXPECT_NEAR(wc[0] + wc[1] + wc[2], 3.0, 1e-12);
  const std::vector<int64_t> bad{3, 0};
  EXPECT_THROW(reweighting_weights(bad), InvalidArgument);
}

TEST(Data, ClassBalancedSamplerIsUniformOverClasses) {
  std::vector<int64_t> labels(100, 0);
  labels.push_back(1);
  ClassBalancedSampler sampler(labels, 2, 3);
  int ones = 0;
  for (int i = 0; i < 10000; ++i) ones += labels[sampler.next()] == 1;
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.02);
  EXPECT_EQ(sampler.epoch().size(), labels.size());

  // Chi-squared over four skewed classes, df = 3, critical value at p = 0.01.
  std::vector<int64_t> skewed;
  for (int c = 0; c < 4; ++c) skewed.insert(skewed.end(), static_cast<std::size_t>(200 >> (2 * c)) + 1, c);
  ClassBalancedSampler four(skewed, 4, 9);
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 10000; ++i) ++hits[skewed[four.next()]];
  double chi2 = 0.0;
  for (const int h : hits) chi2 += (h - 2500.0) * (h - 2500.0) / 2500.0;
  EXPECT_LT(chi2, 11.345);

  const std::vector<int64_t> gap{0, 0, 2};
  EXPECT_THROW(ClassBalancedSampler(gap, 3, 0), InvalidManifest);
}

TEST(Data, ShuffleAndSeedDerivation) {
  const auto a = shuffled_indices(50, 1);
  EXPECT_EQ(a, shuffled_indices(50, 1));
  EXPECT_NE(a, shuffled_indices(50, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Data, SyntheticImagesAreDeterministic) {
  SyntheticImageGenerator g1(4, 3, 16), g2(4, 3, 16);
  const auto a = g1.render(1, 17);
  EXPECT_TRUE(torch::equal(a, g2.render(1, 17)));
  EXPECT_FALSE(torch::equal(a, g1.render(1, 18)));
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{3, 16, 16}));
  EXPECT_GE(a.min().item<float>(), 0.0f);
  EXPECT_LE(a.max().item<float>(), 1.0f);
  int label = -1;
  int64_t index = -1;
  EXPECT_TRUE(SyntheticImageGenerator::parse_key(SyntheticImageGenerator::key(2, 40), label, index));
  EXPECT_EQ(label, 2);
  EXPECT_EQ(index, 40);
  EXPECT_FALSE(SyntheticImageGenerator::parse_key("images/a.png", label, index));
  EXPECT_THROW(SyntheticImageGenerator(0, 1, 16), InvalidArgument);
}

TEST(Data, SyntheticClassesDifferInDominantFrequency) {
  const int64_t r = 32;
  SyntheticImageGenerator gen(1, 4, r);
  const auto fy = torch::fft::fftfreq(r, torch::kFloat64).mul(r).view({-1, 1});
  const auto fx = torch::fft::fftfreq(r, torch::kFloat64).mul(r).view({1, -1});
  const auto radius = torch::sqrt(fy * fy + fx * fx).round().to(torch::kInt64);
  auto dominant = [&](int label) {
    auto mean_amp = torch::zeros({r, r}, torch::kFloat64);
    for (int i = 0; i < 64; ++i) {
      const auto img = gen.render(label, i).to(torch::kFloat64).mean(0);
      mean_amp += torch::abs(torch::fft::fft2(img - img.mean()));
    }
    int best = 0;
    double best_value = -1.0;
    for (int rad = 2; rad < r / 2; ++rad) {
      const double v = mean_amp.masked_select(radius == rad).mean().item<double>();
      if (v > best_value) {
        best_value = v;
        best = rad;
      }
    }
    return best;
  };
  EXPECT_LT(dominant(0), dominant(1));
  EXPECT_NEAR(dominant(1), gen.band_center(1), 1.5);
}

TEST(Data, SmallCnnSeparatesBalancedSyntheticClasses) {
  LongTailSpec spec;
  spec.class_names = {"a", "b", "c", "d"};
  spec.full_counts = std::vector<int64_t>(4, 180);
  spec.train_counts = std::vector<int64_t>(4, 150);
  spec.val_per_class = 30;
  spec.test_per_class = 0;
  spec.seed = 2;
  const auto ds = synthetic_dataset_generate(spec, 32, 2);
  const auto loader = synthetic_or_file_loader(ds.generator);
  const auto train = load_split(ds.manifest, Split::train, loader);
  const auto val = load_split(ds.manifest, Split::val, loader);

  torch::manual_seed(0);
  StudentNet net(ArchSpec{"toy_cnn", {16, 32}}, 4, 16);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(3e-3));
  for (int epoch = 0; epoch < 5; ++epoch) {
    net->train();
    const auto order = shuffled_indices(static_cast<std::size_t>(train.size()), epoch);
    for (std::size_t b = 0; b < order.size(); b += 32) {
      const std::span<const std::size_t> rows(order.data() + b, std::min<std::size_t>(32, order.size() - b));
      const auto [x, y] = train.batch(rows);
      const auto loss = torch::nn::functional::cross_entropy(net->forward(x).logits, y);
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  net->eval();
  torch::NoGradGuard no_grad;
  std::vector<std::size_t> all(static_cast<std::size_t>(val.size()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto [x, y] = val.batch(all);
  const double acc = net->forward(x).logits.argmax(1).eq(y).to(torch::kFloat64).mean().item<double>();
  EXPECT_GT(acc, 0.9);
}

TEST(Data, AugmentKeepsShapeAndIsSeeded) {
  auto g1 = at::make_generator<at::CPUGeneratorImpl>(3);
  auto g2 = at::make_generator<at::CPUGeneratorImpl>(3);
  const auto x = torch::rand({4, 3, 8, 8});
  const auto a = augment_batch(x, {}, g1);
  EXPECT_EQ(a.sizes(), x.sizes());
  EXPECT_TRUE(torch::equal(a, augment_batch(x, {}, g2)));
  AugmentOptions none;
  none.pad = 0;
  none.flip = false;
  EXPECT_TRUE(torch::equal(augment_batch(x, none, g1), x));
}
