// SPDX-License-Identifier: Apache-2.0
#include "keydyn/train.hpp"

#include <fstream>

#include "keydyn/io_util.hpp"

namespace keydyn {

TrainResult train(const UserCollection& train_users, const ModelConfig& model,
                  const TrainConfig& config) {
  switch (config.precision) {
    case Precision::float32:
      return detail::train_impl<float>(train_users, model, config);
    case Precision::float64:
      return detail::train_impl<double>(train_users, model, config);
  }
  throw ConfigError("unknown precision");
}

void write_train_log(const std::vector<TrainLogRecord>& log,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write train log: " + path.string());
  out << "epoch\tmean_loss\tgenuine_distance\timpostor_distance\tseconds\n";
  for (const auto& r : log) {
    out << r.epoch << '\t' << shortest(r.mean_loss) << '\t'
        << shortest(r.mean_genuine_distance) << '\t'
        << shortest(r.mean_impostor_distance) << '\t' << fixed(r.seconds, 3)
        << '\n';
  }
}

}  // namespace keydyn
