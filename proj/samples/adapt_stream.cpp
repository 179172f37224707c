// Library walk-through: train a small source model on clean synthetic shapes,
// corrupt a test stream with Gaussian noise and compare no adaptation against
// online adaptation with the student/teacher pair. Runs in well under a minute.

#include <iostream>

#include "tta/corruptions.hpp"
#include "tta/engine.hpp"
#include "tta/experiment.hpp"
#include "tta/synth.hpp"
#include "tta/training.hpp"

int main() {
  using namespace tta;
  SynthOptions so;
  so.height = so.width = 16;
  const auto train = make_synthetic_dataset(4000, 1, so);
  const auto test = make_synthetic_dataset(1024, 2, so);

  ArchConfig arch;
  arch.height = arch.width = 16;
  arch.block_channels = {8, 16};
  SplitModel<float> source(arch);
  Rng init(1);
  source.initialize(init);
  TrainOptions topt;
  topt.epochs = 15;
  topt.learning_rate = 1e-2;
  train_source(source, train, topt);
  source.freeze_head();
  std::cout << "clean error " << error_rate(predict_dataset(source, test)) << "%\n";

  const auto noisy = build_corrupted_set(test, {"gaussian_noise", 3, 0}, "");
  std::vector<std::size_t> idx(noisy.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto stream = make_stream<float>(noisy, idx, 64, true, 0);

  for (Method m : {Method::source_only, Method::entropy_min, Method::tesla}) {
    AdaptationConfig cfg;
    cfg.method = m;
    cfg.batch_size = 64;
    cfg.num_weak_views = 3;
    cfg.gamma = 3e-4;
    Adapter<float> adapter(source, cfg);
    adapter.run(stream);
    const auto& r = adapter.report().final_predictions;
    std::cout << to_string(m) << ": error " << error_rate(r) << "%, ece " << ece(r, 15) << "%\n";
  }
}
