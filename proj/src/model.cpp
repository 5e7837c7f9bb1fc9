#include "drgcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "binary_io.hpp"
#include "drgcn/optim.hpp"

namespace drgcn {

namespace {

using json = nlohmann::json;

constexpr std::array<char, 4> kParamsMagic{'D', 'R', 'G', 'P'};
constexpr std::uint32_t kParamsVersion = 1;

struct ParamsFormatError : ModelError {
  ParamsFormatError(const std::string& file, const std::string& what) : ModelError(file + ": " + what) {}
};

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& values, const char* what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw ModelError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::string dynamic_prefix(const ModelConfig& cfg, std::size_t layer) {
  return cfg.shared_dynamic_mlp ? std::string("dynamic") : "dynamic" + std::to_string(layer);
}

bool uses_dynamic(const ModelConfig& cfg) {
  return cfg.variant == Variant::drgcn && cfg.alpha_mode != AlphaMode::constant;
}
bool uses_cell(const ModelConfig& cfg) {
  return cfg.variant == Variant::drgcn && cfg.alpha_mode == AlphaMode::evolving;
}

Tensor zeros_like_bias(std::size_t cols) { return Tensor(1, cols); }

Var affine_layer(Var x, Var w, Var b) { return add_row_bias(matmul(x, w), b); }

std::shared_ptr<const CsrMatrix> drop_feature_entries(const CsrMatrix& x, double rate, Rng& rng) {
  std::vector<double> vals = x.vals();
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : vals) v = rng.bernoulli(rate) ? 0.0 : v * keep_scale;
  return std::make_shared<const CsrMatrix>(x.rows(), x.cols(), x.row_ptr(), x.col_idx(), std::move(vals));
}

}  // namespace

std::string_view to_string(Combine v) {
  switch (v) {
    case Combine::hadamard: return "hadamard";
    case Combine::sub: return "sub";
    case Combine::concat: return "concat";
  }
  return "?";
}
std::string_view to_string(CellKind v) {
  switch (v) {
    case CellKind::vanilla_recurrent: return "vanilla_recurrent";
    case CellKind::gated_recurrent: return "gated_recurrent";
  }
  return "?";
}
std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::drgcn: return "drgcn";
    case Variant::vanilla_deep: return "vanilla_deep";
    case Variant::dense_residual: return "dense_residual";
    case Variant::fixed_initial_residual: return "fixed_initial_residual";
  }
  return "?";
}
std::string_view to_string(AlphaMode v) {
  switch (v) {
    case AlphaMode::evolving: return "evolving";
    case AlphaMode::dynamic_only: return "dynamic_only";
    case AlphaMode::constant: return "constant";
  }
  return "?";
}
std::string_view to_string(ParamGroup v) {
  switch (v) {
    case ParamGroup::convolutional: return "convolutional";
    case ParamGroup::fully_connected: return "fully_connected";
    case ParamGroup::evolving: return "evolving";
  }
  return "?";
}

Combine parse_combine(std::string_view s) {
  return parse_enum(s, std::array{Combine::hadamard, Combine::sub, Combine::concat}, "combine");
}
CellKind parse_cell(std::string_view s) {
  return parse_enum(s, std::array{CellKind::vanilla_recurrent, CellKind::gated_recurrent}, "cell");
}
Variant parse_variant(std::string_view s) {
  return parse_enum(
      s, std::array{Variant::drgcn, Variant::vanilla_deep, Variant::dense_residual, Variant::fixed_initial_residual},
      "variant");
}
AlphaMode parse_alpha_mode(std::string_view s) {
  return parse_enum(s, std::array{AlphaMode::evolving, AlphaMode::dynamic_only, AlphaMode::constant}, "alpha_mode");
}

void ModelConfig::validate() const {
  if (layers < 1) throw ModelError("layers must be >= 1");
  if (hidden < 1) throw ModelError("hidden must be >= 1");
  if (in_features < 1) throw ModelError("in_features must be >= 1");
  if (classes < 1) throw ModelError("classes must be >= 1");
  if (!(fixed_alpha >= 0.0 && fixed_alpha <= 1.0)) throw ModelError("fixed_alpha must be in [0, 1]");
  if (variant == Variant::drgcn && alpha_mode == AlphaMode::constant && !(fixed_alpha > 0.0 && fixed_alpha < 1.0)) {
    throw ModelError("constant alpha_mode needs fixed_alpha strictly inside (0, 1)");
  }
  if (!(input_dropout >= 0.0 && input_dropout < 1.0)) throw ModelError("input_dropout must be in [0, 1)");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j = {{"layers", cfg.layers},
            {"hidden", cfg.hidden},
            {"in_features", cfg.in_features},
            {"classes", cfg.classes},
            {"combine", to_string(cfg.combine)},
            {"cell", to_string(cfg.cell)},
            {"variant", to_string(cfg.variant)},
            {"alpha_mode", to_string(cfg.alpha_mode)},
            {"fixed_alpha", cfg.fixed_alpha},
            {"input_dropout", cfg.input_dropout},
            {"shared_dynamic_mlp", cfg.shared_dynamic_mlp},
            {"row_normalize", cfg.row_normalize}};
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.in_features = j.at("in_features").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.combine = parse_combine(j.at("combine").get<std::string>());
    cfg.cell = parse_cell(j.at("cell").get<std::string>());
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.alpha_mode = parse_alpha_mode(j.at("alpha_mode").get<std::string>());
    cfg.fixed_alpha = j.at("fixed_alpha").get<double>();
    cfg.input_dropout = j.at("input_dropout").get<double>();
    cfg.shared_dynamic_mlp = j.at("shared_dynamic_mlp").get<bool>();
    cfg.row_normalize = j.at("row_normalize").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ModelError(std::string("model config: ") + e.what());
  }
}

const Parameter& ModelParams::at(std::string_view name) const { return params[index_of(name)]; }
Parameter& ModelParams::at(std::string_view name) { return params[index_of(name)]; }

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(params.begin(), params.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  throw ModelError("no parameter named '" + std::string(name) + "'");
}

std::size_t dynamic_input_width(Combine kind, std::size_t hidden) {
  return kind == Combine::concat ? 2 * hidden : hidden;
}

ModelParams init_params(const ModelConfig& cfg, std::size_t num_nodes, std::uint64_t seed) {
  cfg.validate();
  if (num_nodes == 0) throw ModelError("init_params: num_nodes must be positive");
  const Rng root(seed);
  const std::size_t h = cfg.hidden;
  const double k = 1.0 / static_cast<double>(h);

  ModelParams mp;
  mp.config = cfg;
  auto add = [&](std::string name, ParamGroup group, Tensor value) {
    mp.params.push_back({std::move(name), group, std::move(value)});
  };

  if (cfg.variant == Variant::vanilla_deep) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      Rng rng = root.split("conv" + std::to_string(l));
      const std::size_t in = l == 0 ? cfg.in_features : h;
      const std::size_t out = l + 1 == cfg.layers ? cfg.classes : h;
      add("conv" + std::to_string(l) + ".w", ParamGroup::convolutional, glorot_uniform(in, out, rng));
    }
    mp.h_init = Tensor(num_nodes, 1);
    return mp;
  }

  {
    Rng rng = root.split("transform");
    add("transform.w1", ParamGroup::fully_connected, glorot_uniform(cfg.in_features, h, rng));
    add("transform.b1", ParamGroup::fully_connected, zeros_like_bias(h));
    add("transform.w2", ParamGroup::fully_connected, glorot_uniform(h, h, rng));
    add("transform.b2", ParamGroup::fully_connected, zeros_like_bias(h));
  }
  if (uses_dynamic(cfg)) {
    const std::size_t instances = cfg.shared_dynamic_mlp ? 1 : cfg.layers;
    const std::size_t width = dynamic_input_width(cfg.combine, h);
    for (std::size_t l = 0; l < instances; ++l) {
      const std::string prefix = dynamic_prefix(cfg, l);
      Rng rng = root.split(prefix);
      add(prefix + ".w1", ParamGroup::fully_connected, glorot_uniform(width, h, rng));
      add(prefix + ".b1", ParamGroup::fully_connected, zeros_like_bias(h));
      add(prefix + ".w2", ParamGroup::fully_connected, glorot_uniform(h, 1, rng));
      add(prefix + ".b2", ParamGroup::fully_connected, zeros_like_bias(1));
    }
  }
  if (uses_cell(cfg)) {
    Rng rng = root.split("cell");
    const std::vector<std::string> names =
        cfg.cell == CellKind::vanilla_recurrent
            ? std::vector<std::string>{"w_z", "w_h", "b"}
            : std::vector<std::string>{"w_zr", "w_hr", "b_r", "w_zu", "w_hu", "b_u", "w_zn", "w_hn", "b_n"};
    for (const auto& n : names) add("cell." + n, ParamGroup::evolving, uniform_pm_sqrt_k(1, 1, k, rng));
  }
  {
    Rng rng = root.split("conv");
    add("conv.w", ParamGroup::convolutional, glorot_uniform(h, h, rng));
  }
  {
    Rng rng = root.split("head");
    add("head.w1", ParamGroup::fully_connected, glorot_uniform(h, h, rng));
    add("head.b1", ParamGroup::fully_connected, zeros_like_bias(h));
    add("head.w2", ParamGroup::fully_connected, glorot_uniform(h, cfg.classes, rng));
    add("head.b2", ParamGroup::fully_connected, zeros_like_bias(cfg.classes));
  }
  {
    Rng rng = root.split("h_init");
    mp.h_init = uniform_pm_sqrt_k(num_nodes, 1, k, rng);
  }
  return mp;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.magic(kParamsMagic);
  w.u32(kParamsVersion);
  const std::string cfg = model_config_to_json(params.config);
  w.u64(cfg.size());
  w.bytes(cfg);
  auto tensor = [&](const Tensor& t) {
    w.u64(t.rows());
    w.u64(t.cols());
    for (double v : t.values()) w.f64(v);
  };
  w.u64(params.params.size());
  for (const auto& p : params.params) {
    w.u64(p.name.size());
    w.bytes(p.name);
    w.u8(static_cast<std::uint8_t>(p.group));
    tensor(p.value);
  }
  tensor(params.h_init);

  const std::string bytes = w.take();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelError("write failed: " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open parameter file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = std::move(ss).str();

  detail::ByteReader<ParamsFormatError> r(bytes, path.filename().string());
  r.magic(kParamsMagic);
  if (r.u32() != kParamsVersion) throw ModelError(path.string() + ": unsupported parameter file version");
  const std::uint64_t cfg_len = r.u64();
  r.expect_records(cfg_len, 1);
  ModelParams mp;
  mp.config = model_config_from_json(r.bytes(cfg_len));
  auto tensor = [&] {
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw ModelError(path.string() + ": tensor too large");
    r.expect_records(rows * cols, 8);
    Tensor t(rows, cols);
    for (double& v : t.values()) v = r.f64();
    return t;
  };
  const std::uint64_t count = r.u64();
  r.expect_records(count, 8 + 1 + 16);
  for (std::uint64_t i = 0; i < count; ++i) {
    Parameter p;
    const std::uint64_t len = r.u64();
    r.expect_records(len, 1);
    p.name = r.bytes(len);
    const std::uint8_t group = r.u8();
    if (group > static_cast<std::uint8_t>(ParamGroup::evolving)) throw ModelError(path.string() + ": bad group id");
    p.group = static_cast<ParamGroup>(group);
    p.value = tensor();
    mp.params.push_back(std::move(p));
  }
  mp.h_init = tensor();
  r.finish();

  const ModelParams fresh = init_params(mp.config, std::max<std::size_t>(mp.h_init.rows(), 1), 0);
  if (fresh.params.size() != mp.params.size()) throw ModelError(path.string() + ": parameter set does not match config");
  for (std::size_t i = 0; i < fresh.params.size(); ++i) {
    const auto& a = fresh.params[i];
    const auto& b = mp.params[i];
    if (a.name != b.name || a.group != b.group || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      throw ModelError(path.string() + ": parameter '" + b.name + "' does not match config");
    }
  }
  return mp;
}

Var BoundParams::operator[](std::string_view name) const { return vars[source->index_of(name)]; }

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundParams b;
  b.source = &params;
  b.vars.reserve(params.params.size());
  for (const auto& p : params.params) b.vars.push_back(tape.leaf(p.value, requires_grad));
  b.h_init = tape.constant(params.h_init);
  return b;
}

PropagationPlan PropagationPlan::full(const SparseAdj& p, std::size_t layers) {
  PropagationPlan plan;
  plan.nodes.resize(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) plan.nodes[i] = static_cast<std::uint32_t>(i);
  plan.sizes.assign(layers + 1, p.rows());
  plan.ops.assign(layers, &p);
  plan.identity_nodes = true;
  return plan;
}

void PropagationPlan::validate(std::size_t num_layers) const {
  if (ops.size() != num_layers || sizes.size() != num_layers + 1) {
    throw ModelError("propagation plan has " + std::to_string(ops.size()) + " layers, model has " +
                     std::to_string(num_layers));
  }
  if (sizes[0] != nodes.size()) throw ModelError("propagation plan: sizes[0] must equal the node count");
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (sizes[l + 1] > sizes[l] || sizes[l + 1] == 0) throw ModelError("propagation plan: node sets must be nested");
    if (ops[l] == nullptr || ops[l]->rows() != sizes[l + 1] || ops[l]->cols() != sizes[l]) {
      throw ModelError("propagation plan: operator " + std::to_string(l) + " has the wrong shape");
    }
  }
}

std::shared_ptr<const CsrMatrix> prepare_features(const Tensor& x, const ModelConfig& cfg) {
  if (!cfg.row_normalize) return std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(x));
  Tensor xn = x;
  for (std::size_t i = 0; i < xn.rows(); ++i) {
    auto r = xn.row(i);
    double s = 0.0;
    for (double v : r) s += v;
    if (s != 0.0) {
      for (double& v : r) v /= s;
    }
  }
  return std::make_shared<const CsrMatrix>(CsrMatrix::from_dense(xn));
}

Var initial_transform(const BoundParams& bound, std::shared_ptr<const CsrMatrix> x) {
  Var hidden = relu(add_row_bias(sparse_matmul(std::move(x), bound["transform.w1"]), bound["transform.b1"]));
  return affine_layer(hidden, bound["transform.w2"], bound["transform.b2"]);
}

Var combine(Combine kind, Var h0n, Var hln) {
  switch (kind) {
    case Combine::hadamard: return hadamard(h0n, hln);
    case Combine::sub: return sub(h0n, hln);
    case Combine::concat: return concat_cols(h0n, hln);
  }
  throw ModelError("unknown combine kind");
}

Var dynamic_block(const BoundParams& bound, Var h0n, Var hln, std::size_t layer) {
  const ModelConfig& cfg = bound.source->config;
  const std::string prefix = dynamic_prefix(cfg, layer);
  Var phi = combine(cfg.combine, h0n, hln);
  Var hidden = relu(affine_layer(phi, bound[prefix + ".w1"], bound[prefix + ".b1"]));
  return affine_layer(hidden, bound[prefix + ".w2"], bound[prefix + ".b2"]);
}

CellOutput evolving_step(const BoundParams& bound, Var z, Var h_prev) {
  if (z.cols() != 1 || h_prev.cols() != 1 || z.rows() != h_prev.rows()) {
    throw ShapeError("evolving_step: expected matching n x 1 inputs, got " + shape_string(z.value()) + " and " +
                     shape_string(h_prev.value()));
  }
  const ModelConfig& cfg = bound.source->config;
  auto gate_input = [&](const char* wz, const char* wh, const char* b) {
    return add_row_bias(add(matmul(z, bound[wz]), matmul(h_prev, bound[wh])), bound[b]);
  };
  if (cfg.cell == CellKind::vanilla_recurrent) {
    Var h = tanh(gate_input("cell.w_z", "cell.w_h", "cell.b"));
    return {h, h};
  }
  Var r = sigmoid(gate_input("cell.w_zr", "cell.w_hr", "cell.b_r"));
  Var u = sigmoid(gate_input("cell.w_zu", "cell.w_hu", "cell.b_u"));
  Var cand = tanh(add_row_bias(add(matmul(z, bound["cell.w_zn"]), hadamard(r, matmul(h_prev, bound["cell.w_hn"]))),
                               bound["cell.b_n"]));
  Var h = blend_rows(cand, h_prev, u);
  return {h, h};
}

SguOutput sgu(Var h0, Var ph, Var alpha_raw) {
  if (h0.rows() != ph.rows() || h0.cols() != ph.cols()) {
    throw ShapeError("sgu: h0 " + shape_string(h0.value()) + " vs propagated " + shape_string(ph.value()));
  }
  Var alpha = sigmoid(alpha_raw);
  Var pre = blend_rows(ph, h0, alpha);
  return {alpha, pre, relu(pre)};
}

ForwardResult forward(const BoundParams& bound, std::shared_ptr<const CsrMatrix> x, const PropagationPlan& plan,
                      const ForwardOptions& options, Rng* rng) {
  const ModelConfig& cfg = bound.source->config;
  plan.validate(cfg.layers);
  if (!x || x->rows() != plan.sizes[0] || x->cols() != cfg.in_features) {
    throw ShapeError("forward: feature matrix does not match the plan or in_features");
  }
  if (options.train && cfg.input_dropout > 0.0) {
    if (rng == nullptr) throw ModelError("forward: input dropout needs an rng");
    x = drop_feature_entries(*x, cfg.input_dropout, *rng);
  }
  Tape& tape = *bound.vars.front().tape;
  const std::size_t L = cfg.layers;
  ForwardResult res;

  Var logits;
  if (cfg.variant == Variant::vanilla_deep) {
    Var h;
    for (std::size_t l = 0; l < L; ++l) {
      Var w = bound["conv" + std::to_string(l) + ".w"];
      Var xw = l == 0 ? sparse_matmul(x, w) : matmul(h, w);
      Var ph = spmm(*plan.ops[l], xw);
      h = l + 1 < L ? relu(ph) : ph;
      if (options.capture_hidden) res.hidden.push_back(h.value());
    }
    logits = h;
  } else {
    Var h0 = initial_transform(bound, x);
    Var h = h0;
    Var h0n;
    Var state;
    const bool dynamic = uses_dynamic(cfg);
    if (dynamic) h0n = l2_normalize_rows(h0);
    if (uses_cell(cfg)) {
      const std::size_t m = plan.sizes[1];
      if (plan.identity_nodes && m == bound.h_init.rows()) {
        state = bound.h_init;
      } else {
        std::vector<std::size_t> idx(plan.nodes.begin(), plan.nodes.begin() + static_cast<std::ptrdiff_t>(m));
        state = gather_rows(bound.h_init, idx);
      }
    }
    const double alpha_raw_const = cfg.variant == Variant::drgcn && cfg.alpha_mode == AlphaMode::constant
                                       ? std::log(cfg.fixed_alpha / (1.0 - cfg.fixed_alpha))
                                       : 0.0;

    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t m = plan.sizes[l + 1];
      Var ph = spmm(*plan.ops[l], h);
      Var h0_t = head_rows(h0, m);
      switch (cfg.variant) {
        case Variant::drgcn: {
          Var alpha_raw;
          if (!dynamic) {
            alpha_raw = tape.constant(Tensor(m, 1, alpha_raw_const));
          } else {
            Var z = dynamic_block(bound, head_rows(h0n, m), l2_normalize_rows(head_rows(h, m)), l);
            if (cfg.alpha_mode == AlphaMode::dynamic_only) {
              alpha_raw = z;
            } else {
              CellOutput cell = evolving_step(bound, z, head_rows(state, m));
              alpha_raw = cell.alpha_raw;
              state = cell.h;
            }
          }
          SguOutput s = sgu(h0_t, ph, alpha_raw);
          h = s.out;
          res.alpha.push_back(s.alpha.value());
          break;
        }
        case Variant::dense_residual:
          h = relu(blend_rows(ph, head_rows(h, m), tape.constant(Tensor(m, 1, cfg.fixed_alpha))));
          break;
        case Variant::fixed_initial_residual:
          h = relu(blend_rows(ph, h0_t, tape.constant(Tensor(m, 1, cfg.fixed_alpha))));
          break;
        case Variant::vanilla_deep:
          break;
      }
      if (options.capture_hidden) res.hidden.push_back(h.value());
    }
    Var conv = matmul(h, bound["conv.w"]);
    Var hidden = relu(affine_layer(conv, bound["head.w1"], bound["head.b1"]));
    logits = affine_layer(hidden, bound["head.w2"], bound["head.b2"]);
  }
  res.logits = logits;
  res.log_probs = rows_log_softmax(logits);
  res.probs = rows_softmax(logits);
  return res;
}

}  // namespace drgcn
