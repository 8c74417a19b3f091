#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

using namespace lmim;

TEST(Waics, NormalizationIgnoresCaseAndSymbols) {
  EXPECT_EQ(waics_normalize("Hello, World!"), "helloworld");
  EXPECT_EQ(waics_normalize("A-1_b"), "a1b");
  EXPECT_EQ(waics_normalize("caf\xc3\xa9"), "caf");
  EXPECT_TRUE(waics_match("HOUSE.", "house"));
  EXPECT_FALSE(waics_match("houses", "house"));
}

TEST(Waics, MatchIsAnEquivalenceRelation) {
  Rng rng(5);
  const std::string alphabet = "aAbB1-. ";
  auto random_string = [&] {
    std::string s;
    const int n = static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
    return s;
  };
  for (int t = 0; t < 2000; ++t) {
    const std::string a = random_string(), b = random_string(), c = random_string();
    EXPECT_TRUE(waics_match(a, a));
    EXPECT_EQ(waics_match(a, b), waics_match(b, a));
    if (waics_match(a, b) && waics_match(b, c)) EXPECT_TRUE(waics_match(a, c));
  }
}

TEST(SubsetAccuracy, ModesAndErrors) {
  const std::vector<std::string> p{"Cat", "dog!", "bird"}, g{"cat", "dog", "fish"};
  EXPECT_DOUBLE_EQ(subset_accuracy(p, g), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(subset_accuracy(p, g, MatchMode::sentence), 0.0);
  EXPECT_THROW(subset_accuracy({"a"}, {"a", "b"}), ValidationError);
  EXPECT_THROW(subset_accuracy({}, {}), ValidationError);
  EXPECT_THROW(parse_match_mode("exact"), ValidationError);
}

TEST(Aggregate, ChineseBenchmarkRows) {
  const std::vector<long> n{63646, 14059, 50000, 23389};
  const std::vector<std::string> names{"Scene", "Web", "Document", "Handwriting"};
  auto report = [&](std::vector<double> acc) {
    std::vector<SubsetScore> s;
    for (int i = 0; i < 4; ++i) s.push_back({names[i], n[i], acc[i] / 100.0});
    return aggregate(s);
  };
  // Independent recomputation of the weighted mean.
  auto weighted = [&](std::vector<double> acc) {
    double num = 0, den = 0;
    for (int i = 0; i < 4; ++i) {
      num += acc[i] * n[i];
      den += n[i];
    }
    return num / den;
  };
  const auto maskocr = report({73.9, 74.8, 99.3, 63.7});
  EXPECT_NEAR(maskocr.w_avg * 100, 80.8, 0.05);
  EXPECT_NEAR(maskocr.w_avg * 100, weighted({73.9, 74.8, 99.3, 63.7}), 1e-9);
  const auto lmim = report({83.6, 82.0, 99.1, 63.9});
  EXPECT_NEAR(lmim.avg * 100, 82.2, 0.05 + 1e-9);
  EXPECT_NEAR(lmim.w_avg * 100, 85.5, 0.05);
}

TEST(Aggregate, RejectsEmptyInputs) {
  EXPECT_THROW(aggregate({}), ValidationError);
  EXPECT_THROW(aggregate({{"x", 0, 0.5}}), ValidationError);
}

TEST(EvalReport, CsvAndJson) {
  const auto r = aggregate({{"a", 10, 0.5}, {"b", 30, 1.0}});
  EXPECT_EQ(r.to_csv(), "subset,n,accuracy\na,10,0.500000\nb,30,1.000000\n# summary avg=0.750000 w_avg=0.875000\n");
  EXPECT_DOUBLE_EQ(r.to_json()["w_avg"].get<double>(), 0.875);
}

TEST(Benchmark, SyntheticScenarioSubsets) {
  const std::vector<std::string> vocab{"cat", "house", "river"};
  const auto subsets = synthetic_benchmark(vocab, 4, 1);
  ASSERT_EQ(subsets.size(), 7u);
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    EXPECT_EQ(subsets[i].name, scenario_names()[i]);
    EXPECT_EQ(subsets[i].samples.size(), 4u);
  }
  for (const auto& s : subsets[3].samples) EXPECT_NO_THROW(Charset().validate(s.transcript));
  const auto again = synthetic_benchmark(vocab, 4, 1);
  EXPECT_EQ(again[0].samples[2].image.pixels, subsets[0].samples[2].image.pixels);
}

TEST(Benchmark, PredictorOnDiskCorpora) {
  const auto dir = std::filesystem::temp_directory_path() / "lmim_test_bench";
  std::filesystem::remove_all(dir);
  generate_corpus({"cat", "stone"}, 5, AugmentationPolicy::make(AugLevel::none), 1, dir / "one");
  generate_corpus({"apple"}, 3, AugmentationPolicy::make(AugLevel::none), 2, dir / "two");
  // A predictor that always answers "APPLE" is right on every image of "two" only.
  const Predictor apple = [](const std::vector<const Image*>& imgs) { return std::vector<std::string>(imgs.size(), "APPLE"); };
  const auto rep = run_benchmark(apple, {dir / "one", dir / "two"});
  ASSERT_EQ(rep.per_subset.size(), 2u);
  EXPECT_EQ(rep.per_subset[0].name, "one");
  EXPECT_DOUBLE_EQ(rep.per_subset[0].accuracy, 0.0);
  EXPECT_DOUBLE_EQ(rep.per_subset[1].accuracy, 1.0);
  EXPECT_DOUBLE_EQ(rep.w_avg, 3.0 / 8.0);
  const Predictor broken = [](const std::vector<const Image*>&) { return std::vector<std::string>{}; };
  EXPECT_THROW(run_benchmark(broken, {dir / "one"}), Error);
  EXPECT_THROW(run_benchmark(apple, {dir / "missing"}), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Ablation, RowStructureMatchesTables) {
  const PretrainConfig base;
  const std::vector<std::pair<AblationAxis, std::size_t>> expect{{AblationAxis::components, 3},
                                                                  {AblationAxis::augmentation, 3},
                                                                  {AblationAxis::decoder_order, 2},
                                                                  {AblationAxis::target, 3},
                                                                  {AblationAxis::masking, 5}};
  for (auto [axis, n] : expect) {
    const auto [cols, rows] = ablation_rows(axis, base);
    EXPECT_EQ(rows.size(), n) << to_string(axis);
    for (const auto& r : rows) {
      EXPECT_EQ(r.cells.size(), cols.size());
      EXPECT_NO_THROW(r.pretrain.validate());
    }
  }
  const auto [cols, rows] = ablation_rows(AblationAxis::components, base);
  EXPECT_FALSE(rows[0].pretrain.model.guidance);
  EXPECT_TRUE(rows[1].pretrain.model.guidance && !rows[1].pretrain.model.alignment);
  EXPECT_TRUE(rows[2].pretrain.model.alignment);
  EXPECT_THROW(parse_ablation_axis("depth"), ValidationError);
  EXPECT_THROW(AblationSettings::preset("huge"), ValidationError);
}

TEST(Ablation, CsvLayout) {
  AblationTable t;
  t.axis = AblationAxis::decoder_order;
  t.config_columns = {"Decoder"};
  t.subset_columns = scenario_names();
  std::vector<SubsetScore> s;
  for (const auto& n : scenario_names()) s.push_back({n, 2, 0.5});
  t.config_cells = {{"CA-SA-FFN"}, {"SA-CA-FFN"}};
  t.reports = {aggregate(s), aggregate(s)};
  const std::string csv = t.to_csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# desk-scale", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line, "Decoder,Cur.,M-O,Art.,Ctl.,Sal.,M-W,Gen.,Avg");
  std::getline(in, line);
  EXPECT_EQ(line, "CA-SA-FFN,0.5000,0.5000,0.5000,0.5000,0.5000,0.5000,0.5000,0.5000");
}

// ---------------------------------------------------------------------------

TEST(Attention, ZeroQueryKeyGivesUniformMap) {
  EncoderConfig cfg;
  cfg.depth = 2;
  Encoder<double> enc(cfg, 3);
  for (auto& b : enc.blocks()) {
    b.attn.q.weight.value.setZero();
    b.attn.q.bias.value.setZero();
    b.attn.k.weight.value.setZero();
    b.attn.k.bias.value.setZero();
  }
  const Image img = render_sample("music", 4).image;
  for (int block : {0, 1}) {
    const auto m = extract_attention(enc, img, 3, 7, block);
    ASSERT_EQ(m.weights.size(), 256u);
    for (double w : m.weights) EXPECT_NEAR(w, 1.0 / 256, 1e-12);
    EXPECT_NEAR(m.entropy(), std::log(256.0), 1e-9);
  }
}

TEST(Attention, MapsSumToOneAndValidateQuery) {
  EncoderConfig cfg;
  cfg.depth = 1;
  Encoder<double> enc(cfg, 8);
  const Image img = render_sample("orange", 4).image;
  const auto m = extract_attention(enc, img, 7, 31);
  EXPECT_NEAR(m.sum(), 1.0, 1e-12);
  EXPECT_EQ(m.query_index, 7 * 32 + 31);
  EXPECT_THROW(extract_attention(enc, img, 8, 0), ValidationError);
  EXPECT_THROW(extract_attention(enc, img, 0, 32), ValidationError);
  EXPECT_THROW(extract_attention(enc, img, 0, 0, 1), ValidationError);
}

TEST(Heatmap, DeterministicPngBytes) {
  EncoderConfig cfg;
  cfg.depth = 1;
  Encoder<double> enc(cfg, 8);
  const Image img = render_sample("silver", 4).image;
  const auto dir = std::filesystem::temp_directory_path() / "lmim_test_heatmap";
  std::filesystem::create_directories(dir);
  const auto m = extract_attention(enc, img, 2, 5);
  render_heatmap(m, img, dir / "a.png");
  render_heatmap(extract_attention(enc, img, 2, 5), img, dir / "b.png");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
  const Image back = read_png(dir / "a.png");
  EXPECT_EQ(back.height, 128);
  EXPECT_EQ(back.width, 512);
  // Query outline is pure red.
  EXPECT_FLOAT_EQ(back.at(2 * 16, 5 * 16, 0), 1.0f);
  EXPECT_FLOAT_EQ(back.at(2 * 16, 5 * 16, 1), 0.0f);

  std::ostringstream console;
  const auto maps = compare_methods<double>({{"a", &enc}, {"b", &enc}}, img, 2, 5, dir / "cmp.png", &console);
  EXPECT_EQ(maps.size(), 2u);
  EXPECT_EQ(read_png(dir / "cmp.png").height, 2 * 128 + 4);
  EXPECT_EQ(console.str().substr(0, 2), "a\t");
  std::filesystem::remove_all(dir);
}

TEST(Heatmap, ColormapIsMonotoneInLuminance) {
  double prev = -1;
  for (int i = 0; i <= 20; ++i) {
    const auto c = colormap(i / 20.0);
    const double lum = 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
    EXPECT_GT(lum, prev);
    prev = lum;
  }
}

// ---------------------------------------------------------------------------

TEST(RunConfig, DefaultsFileAndOverrides) {
  const auto path = std::filesystem::temp_directory_path() / "lmim_test_config.toml";
  std::ofstream(path) << "# sample\n[general]\nseed = 7\n\n[pretrain]\nlr_peak = 5e-4  # peak\nmask_strategy = \"block\"\n"
                         "[encoder]\ndepth = 2\n";
  RunConfig cfg;
  EXPECT_EQ(cfg.integer("pretrain.epochs"), 10);
  cfg.load_file(path);
  EXPECT_EQ(cfg.seed(), 7u);
  cfg.set("pretrain.epochs", "3");
  const auto pc = cfg.pretrain();
  EXPECT_DOUBLE_EQ(pc.lr_peak, 5e-4);
  EXPECT_EQ(pc.mask_strategy, MaskStrategy::block);
  EXPECT_EQ(pc.epochs, 3);
  EXPECT_EQ(pc.model.encoder.depth, 2);
  EXPECT_EQ(pc.seed, 7u);
  EXPECT_EQ(cfg.to_json()["pretrain"]["epochs"], 3);
  std::filesystem::remove(path);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("pretrain.epoch", "3"), ValidationError);
  EXPECT_THROW(cfg.set("pretrain.epochs", "three"), ValidationError);
  EXPECT_THROW(cfg.set("pretrain.guidance", "maybe"), ValidationError);
  cfg.set("pretrain.target", "pixels");
  EXPECT_THROW(cfg.pretrain(), ValidationError);
  const auto path = std::filesystem::temp_directory_path() / "lmim_test_badconfig.toml";
  std::ofstream(path) << "[pretrain]\nbogus = 1\n";
  EXPECT_THROW(RunConfig().load_file(path), ValidationError);
  std::filesystem::remove(path);
  EXPECT_THROW(RunConfig().load_file("/nonexistent/config.toml"), IoError);
}
