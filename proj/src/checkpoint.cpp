#include <bit>
#include <cstring>
#include <fstream>

#include "mcki/router.hpp"

namespace mcki {

using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xff) << (8 * (7 - i));
    return r;
  }
  return v;
}

json hyper_to_json(const RouterHyper& h) {
  return {{"gamma", h.gamma},
          {"lambda_neg", h.lambda_neg},
          {"w_cross_language", h.w_cross_language},
          {"w_cross_scenario", h.w_cross_scenario},
          {"learning_rate", h.learning_rate},
          {"epochs", h.epochs},
          {"seed", h.seed},
          {"d_route", h.d_route}};
}

RouterHyper hyper_from_json(const json& j) {
  RouterHyper h;
  h.gamma = j.at("gamma").get<double>();
  h.lambda_neg = j.at("lambda_neg").get<double>();
  h.w_cross_language = j.at("w_cross_language").get<double>();
  h.w_cross_scenario = j.at("w_cross_scenario").get<double>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.epochs = j.at("epochs").get<int>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.d_route = j.at("d_route").get<Eigen::Index>();
  return h;
}

std::pair<Eigen::Index, Eigen::Index> tensor_shape(const RouterParams& p, std::size_t i) {
  switch (i) {
    case 4: return {p.w_q.rows(), p.w_q.cols()};
    case 6: return {p.w_v.rows(), p.w_v.cols()};
    case 8: return {p.w_f.rows(), p.w_f.cols()};
    default: return {p.tensors()[i].size(), 1};
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RouterCheckpoint& ckpt) {
  const auto& p = ckpt.params;
  json tensors = json::array();
  for (std::size_t i = 0; i < RouterParams::kTensorNames.size(); ++i) {
    const auto [rows, cols] = tensor_shape(p, i);
    tensors.push_back({{"name", RouterParams::kTensorNames[i]}, {"rows", rows}, {"cols", cols}});
  }
  const json header = {{"version", kCheckpointVersion},
                       {"d_model", p.d_model},
                       {"d_route", p.d_route},
                       {"tau", ckpt.tau},
                       {"seed", ckpt.hyper.seed},
                       {"hyper", hyper_to_json(ckpt.hyper)},
                       {"dtype", "float64-le"},
                       {"tensors", tensors},
                       {"extras", ckpt.extras}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out << kCheckpointVersion << '\n' << header.dump() << '\n';
  for (const auto& t : p.tensors()) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const auto bits = to_little(std::bit_cast<std::uint64_t>(t[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

RouterCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kCheckpointVersion) {
    throw std::runtime_error("'" + path.string() + "' is not an " +
                             std::string(kCheckpointVersion) + " checkpoint");
  }
  std::getline(in, header_line);
  const json header = json::parse(header_line, nullptr, false);
  if (header.is_discarded() || header.value("version", "") != kCheckpointVersion) {
    throw std::runtime_error("checkpoint header is malformed");
  }

  RouterCheckpoint ckpt;
  ckpt.hyper = hyper_from_json(header.at("hyper"));
  ckpt.tau = header.at("tau").get<double>();
  ckpt.extras = header.value("extras", json::object());
  ckpt.params = RouterParams::zeros(header.at("d_model").get<Eigen::Index>(),
                                    header.at("d_route").get<Eigen::Index>());
  const auto& table = header.at("tensors");
  if (!table.is_array() || table.size() != RouterParams::kTensorNames.size()) {
    throw std::runtime_error("checkpoint tensor table is malformed");
  }
  auto views = ckpt.params.tensors();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto [rows, cols] = tensor_shape(ckpt.params, i);
    if (table[i].at("name") != RouterParams::kTensorNames[i] || table[i].at("rows") != rows ||
        table[i].at("cols") != cols) {
      throw std::runtime_error(std::string("checkpoint tensor '") + RouterParams::kTensorNames[i] +
                               "' has an unexpected name or shape");
    }
    for (Eigen::Index k = 0; k < views[i].size(); ++k) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw std::runtime_error("checkpoint is truncated");
      }
      views[i][k] = std::bit_cast<double>(to_little(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  if (!ckpt.params.all_finite()) throw std::runtime_error("checkpoint holds non-finite values");
  return ckpt;
}

}  // namespace mcki
