#include "owf/detector.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include <nlohmann/json.hpp>

#include "owf/error.hpp"
#include "owf/json_util.hpp"
#include "owf/rng.hpp"

namespace owf {

namespace {

Matrix zeros(std::size_t r, std::size_t c) {
  return Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Matrix sigmoid(const Matrix& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Matrix row_softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double mx = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix add_bias(const Matrix& m, const Matrix& bias) {
  return m.rowwise() + bias.row(0);
}

Matrix col_sum(const Matrix& m) { return m.colwise().sum(); }

StageParams zero_stage(std::size_t d) {
  return {zeros(d, d), zeros(d, d), zeros(d, d), zeros(d, d), zeros(1, d), zeros(d, d),
          zeros(1, d)};
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericFault(std::string("non-finite activation in ") + what);
}

StageCache stage_forward(const StageParams& p, const Matrix& x, const Matrix& enc, double scale) {
  StageCache c;
  c.x = x;
  c.q = x * p.wq;
  c.k = enc * p.wk;
  c.v = enc * p.wv;
  c.attn = row_softmax((c.q * c.k.transpose()) * scale);
  c.h = c.attn * c.v;
  c.g = add_bias(c.h * p.w1, p.b1).array().tanh().matrix();
  c.e = c.h + add_bias(c.g * p.w2, p.b2);
  return c;
}

// Returns d loss / d x and accumulates d loss / d enc into `d_enc`.
Matrix stage_backward(const StageParams& p, const StageCache& c, const Matrix& enc,
                      const Matrix& d_e, double scale, StageParams& grad, Matrix& d_enc) {
  grad.w2 = c.g.transpose() * d_e;
  grad.b2 = col_sum(d_e);
  Matrix d_z = ((d_e * p.w2.transpose()).array() * (1.0 - c.g.array().square())).matrix();
  grad.w1 = c.h.transpose() * d_z;
  grad.b1 = col_sum(d_z);
  Matrix d_h = d_e + d_z * p.w1.transpose();

  Matrix d_attn = d_h * c.v.transpose();
  Matrix d_v = c.attn.transpose() * d_h;
  Eigen::VectorXd inner = (d_attn.array() * c.attn.array()).rowwise().sum();
  Matrix d_s = (c.attn.array() * (d_attn.colwise() - inner).array()).matrix();
  Matrix d_q = (d_s * c.k) * scale;
  Matrix d_k = (d_s.transpose() * c.q) * scale;

  grad.wq = c.x.transpose() * d_q;
  grad.wk = enc.transpose() * d_k;
  grad.wv = enc.transpose() * d_v;
  d_enc += d_k * p.wk.transpose() + d_v * p.wv.transpose();
  return d_q * p.wq.transpose();
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
}

bool is_bias(const std::string& name) {
  return name.ends_with("_b") || name.ends_with(".b1") || name.ends_with(".b2");
}

}  // namespace

std::size_t DetectorParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool DetectorParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

DetectorParams zero_params(const DetectorConfig& config) {
  const auto d = config.dim;
  const auto c = config.num_known + 1;
  DetectorParams p;
  p.config = config;
  p.queries = zeros(config.queries, d);
  p.enc_w = zeros(config.token_dim, d);
  p.enc_b = zeros(1, d);
  p.localization = zero_stage(d);
  p.identification = zero_stage(d);
  p.reg_w = zeros(d, 4);
  p.reg_b = zeros(1, 4);
  p.bs_w = zeros(d, 1);
  p.bs_b = zeros(1, 1);
  p.cls_w = zeros(d, c);
  p.cls_b = zeros(1, c);
  return p;
}

DetectorParams init_params(const DetectorConfig& config) {
  if (config.queries == 0 || config.dim == 0 || config.token_dim == 0) {
    throw ValidationError("detector shapes must be positive");
  }
  auto p = zero_params(config);
  auto rng = make_stream(config.seed, "init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.dim));
  p.visit([&](const std::string& name, Matrix& m) {
    if (!is_bias(name)) fill_uniform(m, bound, rng);
  });
  return p;
}

DetectorParams expand_classes(const DetectorParams& params, std::size_t extra) {
  if (extra == 0) return params;
  DetectorParams out = params;
  const auto d = params.config.dim;
  const auto old_known = params.config.num_known;
  out.config.num_known = old_known + extra;
  auto rng = make_stream(params.config.seed, "expand", out.config.num_known);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix fresh = zeros(d, extra);
  fill_uniform(fresh, bound, rng);

  const auto k = static_cast<Eigen::Index>(old_known);
  const auto e = static_cast<Eigen::Index>(extra);
  out.cls_w = zeros(d, out.config.num_known + 1);
  out.cls_w.leftCols(k) = params.cls_w.leftCols(k);
  out.cls_w.middleCols(k, e) = fresh;
  out.cls_w.rightCols(1) = params.cls_w.rightCols(1);
  out.cls_b = zeros(1, out.config.num_known + 1);
  out.cls_b.leftCols(k) = params.cls_b.leftCols(k);
  out.cls_b.rightCols(1) = params.cls_b.rightCols(1);
  return out;
}

ForwardResult forward(const DetectorParams& params, const SceneTokens& scene) {
  const auto& cfg = params.config;
  if (scene.rows() < 1 || static_cast<std::size_t>(scene.cols()) != cfg.token_dim) {
    throw ValidationError("scene tokens must be T×" + std::to_string(cfg.token_dim) + " with T >= 1");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  ForwardResult out;
  auto& c = out.cache;
  c.tokens = scene;
  c.enc = add_bias(scene * params.enc_w, params.enc_b);
  c.loc = stage_forward(params.localization, params.queries, c.enc, scale);
  c.id = stage_forward(params.identification, c.loc.e, c.enc, scale);
  c.box = sigmoid(add_bias(c.loc.e * params.reg_w, params.reg_b));
  c.bs = sigmoid(add_bias(c.loc.e * params.bs_w, params.bs_b));
  c.cls = sigmoid(add_bias(c.id.e * params.cls_w, params.cls_b));
  check_finite(c.loc.e, "localization stage");
  check_finite(c.id.e, "identification stage");
  check_finite(c.cls, "classification head");

  const auto n = static_cast<Eigen::Index>(cfg.queries);
  out.predictions.resize(cfg.queries);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& pred = out.predictions[static_cast<std::size_t>(i)];
    pred.box = {c.box(i, 0), c.box(i, 1), c.box(i, 2), c.box(i, 3)};
    pred.box_score = c.bs(i, 0);
    pred.cls.resize(static_cast<std::size_t>(c.cls.cols()));
    for (Eigen::Index j = 0; j < c.cls.cols(); ++j) pred.cls[static_cast<std::size_t>(j)] = c.cls(i, j);
  }
  return out;
}

DetectorParams backward(const DetectorParams& params, const ForwardCache& cache,
                        std::span<const PredictionGrad> grads) {
  const auto& cfg = params.config;
  const auto n = static_cast<Eigen::Index>(cfg.queries);
  const auto channels = static_cast<Eigen::Index>(params.num_channels());
  if (static_cast<Eigen::Index>(grads.size()) != n) {
    throw ValidationError("expected one gradient per query");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));

  Matrix d_box(n, 4), d_bs(n, 1), d_cls(n, channels);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = grads[static_cast<std::size_t>(i)];
    for (int k = 0; k < 4; ++k) d_box(i, k) = g.box[static_cast<std::size_t>(k)];
    d_bs(i, 0) = g.box_score;
    for (Eigen::Index j = 0; j < channels; ++j) d_cls(i, j) = g.cls[static_cast<std::size_t>(j)];
  }
  // sigmoid'(z) = s (1 - s)
  Matrix dz_box = (d_box.array() * cache.box.array() * (1.0 - cache.box.array())).matrix();
  Matrix dz_bs = (d_bs.array() * cache.bs.array() * (1.0 - cache.bs.array())).matrix();
  Matrix dz_cls = (d_cls.array() * cache.cls.array() * (1.0 - cache.cls.array())).matrix();

  auto grad = zero_params(cfg);
  grad.reg_w = cache.loc.e.transpose() * dz_box;
  grad.reg_b = col_sum(dz_box);
  grad.bs_w = cache.loc.e.transpose() * dz_bs;
  grad.bs_b = col_sum(dz_bs);
  grad.cls_w = cache.id.e.transpose() * dz_cls;
  grad.cls_b = col_sum(dz_cls);

  Matrix d_enc = Matrix::Zero(cache.enc.rows(), cache.enc.cols());
  Matrix d_id = dz_cls * params.cls_w.transpose();
  Matrix d_loc = dz_box * params.reg_w.transpose() + dz_bs * params.bs_w.transpose();
  d_loc += stage_backward(params.identification, cache.id, cache.enc, d_id, scale,
                          grad.identification, d_enc);
  grad.queries = stage_backward(params.localization, cache.loc, cache.enc, d_loc, scale,
                                grad.localization, d_enc);
  grad.enc_w = cache.tokens.transpose() * d_enc;
  grad.enc_b = col_sum(d_enc);
  return grad;
}

std::vector<Detection> composite(std::span<const Prediction> preds, double score_floor) {
  std::vector<Detection> out;
  for (const auto& p : preds) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.cls.size(); ++c) {
      if (p.cls[c] > p.cls[best]) best = c;
    }
    double score = p.cls[best];
    if (score < score_floor) continue;
    ClassId label = best == p.unknown_channel() ? kUnknownClass : static_cast<ClassId>(best);
    out.push_back({label, score, p.box});
  }
  return out;
}

std::vector<Detection> suppress_duplicates(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<ScoredBox> scored;
  scored.reserve(dets.size());
  for (const auto& d : dets) scored.push_back({d.box, d.score});
  std::vector<Detection> out;
  for (auto i : nms(scored, iou_threshold)) out.push_back(dets[i]);
  return out;
}

std::vector<Detection> infer(const DetectorParams& params, const SceneTokens& scene,
                             double score_floor) {
  return composite(forward(params, scene).predictions, score_floor);
}

namespace {

constexpr char kMagic[8] = {'O', 'W', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ValidationError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const DetectorParams& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
  nlohmann::json header;
  const auto& cfg = params.config;
  header["queries"] = cfg.queries;
  header["dim"] = cfg.dim;
  header["token_dim"] = cfg.token_dim;
  header["num_known"] = cfg.num_known;
  header["seed"] = cfg.seed;
  header["tensors"] = nlohmann::json::array();
  params.visit([&](const std::string& name, const Matrix& m) {
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  auto text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  params.visit([&](const std::string&, const Matrix& m) {
    // column-major, as stored by Eigen
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  return out;
}

DetectorParams deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a detector checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  auto len = take<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw ValidationError("checkpoint truncated");
  auto header = parse_json(std::string_view(bytes).substr(pos, len), "checkpoint header");
  pos += len;

  DetectorConfig cfg;
  json_schema_guard("checkpoint header", [&] {
    cfg.queries = header.at("queries").get<std::size_t>();
    cfg.dim = header.at("dim").get<std::size_t>();
    cfg.token_dim = header.at("token_dim").get<std::size_t>();
    cfg.num_known = header.at("num_known").get<std::size_t>();
    cfg.seed = header.at("seed").get<std::uint64_t>();
  });
  auto params = zero_params(cfg);
  std::size_t index = 0;
  const auto& tensors = header.at("tensors");
  params.visit([&](const std::string& name, Matrix& m) {
    if (index >= tensors.size() || tensors[index].at("name") != name ||
        tensors[index].at("rows").get<Eigen::Index>() != m.rows() ||
        tensors[index].at("cols").get<Eigen::Index>() != m.cols()) {
      throw ValidationError("checkpoint tensor layout mismatch at '" + name + "'");
    }
    ++index;
    auto n = static_cast<std::size_t>(m.size()) * sizeof(double);
    if (pos + n > bytes.size()) throw ValidationError("checkpoint truncated");
    std::memcpy(m.data(), bytes.data() + pos, n);
    pos += n;
  });
  if (pos != bytes.size()) throw ValidationError("trailing bytes in checkpoint");
  return params;
}

void save_checkpoint(const DetectorParams& params, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(params));
}

DetectorParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path));
}

}  // namespace owf
