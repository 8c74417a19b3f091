// End-to-end tour of the library at toy scale (about a minute on one core):
// render a corpus, pre-train with pixel targets, fine-tune the recognizer,
// score it on the synthetic scenario subsets and draw an attention map.
//
//   ./lmim_demo [out_dir]

#include "lmim/lmim.hpp"

#include <iostream>

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "lmim_demo_out";
  const std::vector<std::string> vocab{"cat", "house", "river", "green", "apple", "stone", "light", "music"};

  try {
    const auto train = lmim::synthesize_samples(vocab, 96, lmim::AugmentationPolicy::make(lmim::AugLevel::weak, 1), 1);

    lmim::PretrainConfig pc;
    pc.target = lmim::TargetKind::pixel;
    pc.batch = 16;
    pc.epochs = 2;
    pc.steps_per_epoch = 10;
    pc.seed = 1;
    lmim::Pretrainer<float> pre(train, pc);
    pre.run(out / "pretrain", [](const lmim::TrainLogRow& r) {
      if (r.step % 5 == 0) std::cout << "pretrain step " << r.step << " total " << r.total << "\n";
    });
    lmim::save_checkpoint(pre.checkpoint(), out / "pretrain.ckpt");

    lmim::FinetuneConfig fc;
    fc.init = (out / "pretrain.ckpt").string();
    fc.recognizer.dim = 64;
    fc.lr = 1e-3;
    fc.epochs = 4;
    fc.seed = 1;
    lmim::Finetuner<float> ft(train, fc);
    ft.run(out / "finetune", [](const lmim::FinetuneLogRow& r) {
      std::cout << "finetune epoch " << r.epoch << " loss " << r.loss << " word_acc " << r.word_acc << "\n";
    });

    auto model = std::make_shared<const lmim::Recognizer<float>>(
        lmim::load_recognizer<float>(lmim::load_checkpoint(out / "finetune" / "recognizer.ckpt")));
    const auto report = lmim::evaluate_subsets(lmim::recognizer_predictor<float>(model),
                                               lmim::synthetic_benchmark(vocab, 10, 99), lmim::MatchMode::waics);
    std::cout << report.to_csv();

    const lmim::Image probe = lmim::render_sample("river", 5).image;
    const auto enc = lmim::load_encoder<double>(lmim::load_checkpoint(out / "pretrain.ckpt"));
    const auto map = lmim::extract_attention(*enc, probe, 2, 10);
    lmim::render_heatmap(map, probe, out / "attmap.png");
    std::cout << "attention entropy " << map.entropy() << ", heatmap " << (out / "attmap.png").string() << "\n";
  } catch (const lmim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
