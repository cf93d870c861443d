#include "dmm/network.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace dmm {

std::size_t Branch::fc_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += std::holds_alternative<FullyConnected>(l.kind());
  return n;
}

std::size_t Branch::output_dim() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const auto* fc = std::get_if<FullyConnected>(&it->kind())) return fc->out_dim;
  }
  return 0;
}

namespace {

Branch make_branch(std::string name, std::size_t levels, std::size_t channels, const std::vector<std::size_t>& widths,
                   std::vector<std::size_t> attributes) {
  Branch b{std::move(name), SppConfig{levels}, {}, std::move(attributes)};
  std::size_t in = b.spp.output_length(channels);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    b.layers.emplace_back(FullyConnected{in, widths[i]}, b.name + ".fc" + std::to_string(i + 1));
    if (i + 1 < widths.size()) b.layers.emplace_back(Relu{}, b.name + ".relu" + std::to_string(i + 1));
    in = widths[i];
  }
  return b;
}

Tensor batched(const Tensor& images) {
  if (images.rank() == 3) return images.reshaped({1, images.dim(0), images.dim(1), images.dim(2)});
  if (images.rank() != 4) throw ShapeError("network: expected [C,H,W] or [N,C,H,W] images, got " + to_string(images.shape()));
  return images;
}

Tensor run_branch(const Branch& branch, const Tensor& features, Tensor* spp_out, std::vector<Tensor>* inputs) {
  Tensor x = spp_forward(features, branch.spp);
  if (spp_out) *spp_out = x;
  for (const auto& layer : branch.layers) {
    if (inputs) inputs->push_back(x);
    x = layer.forward(x);
  }
  return x;
}

Tensor backprop_branch(Branch& branch, const Tensor& features, const std::vector<Tensor>& inputs, Tensor grad) {
  for (std::size_t i = branch.layers.size(); i-- > 0;) grad = branch.layers[i].backward(inputs[i], grad);
  return spp_backward(features, branch.spp, grad);
}

}  // namespace

DmmNetwork::DmmNetwork(NetworkConfig config) : config_(std::move(config)) {
  const auto& spec = config_.attributes;
  spec.validate(config_.grouping);
  const auto& bb = config_.backbone;
  if (bb.in_channels == 0) throw std::invalid_argument("backbone: in_channels must be positive");
  if (config_.landmarks == 0) throw std::invalid_argument("network: landmark count must be positive");

  std::size_t in = bb.in_channels;
  for (std::size_t i = 0; i < bb.channels.size(); ++i) {
    const std::string prefix = "backbone.block" + std::to_string(i + 1);
    backbone_.emplace_back(Conv2d{in, bb.channels[i], bb.kernel, 1, bb.padding}, prefix + ".conv");
    backbone_.emplace_back(Relu{}, prefix + ".relu");
    backbone_.emplace_back(MaxPool2d{bb.pool, bb.pool}, prefix + ".pool");
    in = bb.channels[i];
  }

  const std::size_t c = feature_channels();
  const auto& h = config_.heads;
  if (config_.grouping) {
    auto obj = spec.indices(AttributeGroup::objective);
    auto subj = spec.indices(AttributeGroup::subjective);
    attribute_branches_.push_back(make_branch("objective", 1, c, {h.objective_hidden, obj.size()}, obj));
    attribute_branches_.push_back(
        make_branch("subjective", 3, c, {h.subjective_hidden1, h.subjective_hidden2, subj.size()}, subj));
  } else {
    std::vector<std::size_t> all(spec.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    attribute_branches_.push_back(
        make_branch("joint", 3, c, {h.subjective_hidden1, h.subjective_hidden2, spec.size()}, all));
  }
  landmark_branch_ = make_branch("landmarks", 1, c, {h.landmark_hidden, 2 * config_.landmarks}, {});

  std::mt19937_64 rng(config_.seed);
  for (Layer* layer : parameter_layers()) layer->initialize(rng);
}

const Branch& DmmNetwork::branch(AttributeGroup group) const {
  if (!config_.grouping) throw std::logic_error("network: attribute grouping is disabled");
  return attribute_branches_[group == AttributeGroup::objective ? 0 : 1];
}

NetworkOutput DmmNetwork::forward(const Tensor& images, ForwardCache* cache) const {
  Tensor x = batched(images);
  if (x.dim(1) != config_.backbone.in_channels) {
    throw ShapeError("network: image channels " + to_string(x.shape()) + " vs backbone in_channels " +
                     std::to_string(config_.backbone.in_channels));
  }
  if (cache) {
    *cache = ForwardCache{};
    cache->head_inputs.resize(attribute_branches_.size() + 1);
    cache->spp_outputs.resize(attribute_branches_.size() + 1);
  }
  for (const auto& layer : backbone_) {
    if (cache) cache->backbone_inputs.push_back(x);
    x = layer.forward(x);
  }
  if (cache) cache->features = x;

  const std::size_t n = x.dim(0);
  NetworkOutput out;
  out.attributes = Tensor({n, config_.attributes.size()});
  for (std::size_t b = 0; b < attribute_branches_.size(); ++b) {
    const Branch& br = attribute_branches_[b];
    Tensor scores = run_branch(br, x, cache ? &cache->spp_outputs[b] : nullptr, cache ? &cache->head_inputs[b] : nullptr);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < br.attributes.size(); ++k) out.attributes.at(i, br.attributes[k]) = scores.at(i, k);
    }
    out.branch_scores.push_back(std::move(scores));
  }
  const std::size_t lb = attribute_branches_.size();
  out.landmarks = run_branch(landmark_branch_, x, cache ? &cache->spp_outputs[lb] : nullptr,
                             cache ? &cache->head_inputs[lb] : nullptr);
  return out;
}

BackwardResult DmmNetwork::backward(const ForwardCache& cache, const std::vector<Tensor>& branch_grads,
                                    const Tensor& landmark_grad, bool want_input_grad) {
  if (branch_grads.size() != attribute_branches_.size()) {
    throw ShapeError("network backward: expected " + std::to_string(attribute_branches_.size()) +
                     " branch gradients, got " + std::to_string(branch_grads.size()));
  }
  const std::size_t n = cache.features.dim(0);
  BackwardResult result;
  result.feature_grad = Tensor(cache.features.shape());
  for (std::size_t b = 0; b < attribute_branches_.size(); ++b) {
    const Shape expected{n, attribute_branches_[b].output_dim()};
    if (branch_grads[b].shape() != expected) {
      throw ShapeError("network backward: " + attribute_branches_[b].name + " gradient " +
                       to_string(branch_grads[b].shape()) + " vs " + to_string(expected));
    }
    result.feature_grad.add(backprop_branch(attribute_branches_[b], cache.features, cache.head_inputs[b], branch_grads[b]));
  }
  if (!landmark_grad.empty()) {
    const Shape expected{n, 2 * config_.landmarks};
    if (landmark_grad.shape() != expected) {
      throw ShapeError("network backward: landmark gradient " + to_string(landmark_grad.shape()) + " vs " +
                       to_string(expected));
    }
    result.feature_grad.add(
        backprop_branch(landmark_branch_, cache.features, cache.head_inputs.back(), landmark_grad));
  }
  Tensor grad = result.feature_grad;
  for (std::size_t i = backbone_.size(); i-- > 0;) {
    const bool first = i == 0;
    grad = backbone_[i].backward(cache.backbone_inputs[i], grad, !first || want_input_grad);
  }
  if (want_input_grad) result.input_grad = std::move(grad);
  return result;
}

BackwardResult DmmNetwork::backward_attributes(const ForwardCache& cache, const Tensor& attribute_grad,
                                               const Tensor& landmark_grad, bool want_input_grad) {
  return backward(cache, split_by_branch(*this, attribute_grad), landmark_grad, want_input_grad);
}

std::vector<Tensor> split_by_branch(const DmmNetwork& net, const Tensor& attributes) {
  const std::size_t j = net.config().attributes.size();
  if (attributes.rank() != 2 || attributes.dim(1) != j) {
    throw ShapeError("split_by_branch: expected [N," + std::to_string(j) + "], got " + to_string(attributes.shape()));
  }
  const std::size_t n = attributes.dim(0);
  std::vector<Tensor> parts;
  for (const auto& br : net.attribute_branches()) {
    Tensor part({n, br.attributes.size()});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < br.attributes.size(); ++k) part.at(i, k) = attributes.at(i, br.attributes[k]);
    }
    parts.push_back(std::move(part));
  }
  return parts;
}

std::vector<Layer*> DmmNetwork::parameter_layers() {
  std::vector<Layer*> out;
  auto take = [&](std::vector<Layer>& layers) {
    for (auto& l : layers) {
      if (l.params().has_parameters()) out.push_back(&l);
    }
  };
  take(backbone_);
  for (auto& b : attribute_branches_) take(b.layers);
  take(landmark_branch_.layers);
  return out;
}

std::vector<const Layer*> DmmNetwork::parameter_layers() const {
  auto mut = const_cast<DmmNetwork*>(this)->parameter_layers();
  return {mut.begin(), mut.end()};
}

std::size_t DmmNetwork::backbone_parameter_layer_count() const {
  std::size_t n = 0;
  for (const auto& l : backbone_) n += l.params().has_parameters();
  return n;
}

std::size_t DmmNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const Layer* l : parameter_layers()) n += l->params().weights.size() + l->params().bias.size();
  return n;
}

void DmmNetwork::zero_grad() {
  for (Layer* l : parameter_layers()) l->params().zero_grad();
}

void DmmNetwork::sgd_step(const SgdOptions& options, bool freeze_backbone) {
  auto layers = parameter_layers();
  const std::size_t frozen = freeze_backbone ? backbone_parameter_layer_count() : 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i < frozen) {
      layers[i]->params().zero_grad();
    } else {
      dmm::sgd_step(layers[i]->params(), options);
    }
  }
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'D', 'M', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string get_string() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.put<std::uint64_t>(d);
  for (double v : t.data()) w.put<double>(v);
}

void get_tensor(Reader& r, Tensor& into) {
  auto rank = r.get<std::uint32_t>();
  Shape shape(rank);
  for (auto& d : shape) d = r.get<std::uint64_t>();
  if (shape != into.shape()) {
    throw std::runtime_error("checkpoint: tensor shape " + to_string(shape) + " does not match network " +
                             to_string(into.shape()));
  }
  for (double& v : into.values()) v = r.get<double>();
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const DmmNetwork& net) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.put<std::uint32_t>(kVersion);
  const auto& c = net.config();
  w.put<std::uint64_t>(c.attributes.size());
  for (std::size_t j = 0; j < c.attributes.size(); ++j) {
    w.put_string(c.attributes.names[j]);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.attributes.groups[j]));
  }
  w.put<std::uint64_t>(c.landmarks);
  w.put<std::uint8_t>(c.grouping ? 1 : 0);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint64_t>(c.backbone.in_channels);
  w.put<std::uint64_t>(c.backbone.channels.size());
  for (auto ch : c.backbone.channels) w.put<std::uint64_t>(ch);
  w.put<std::uint64_t>(c.backbone.kernel);
  w.put<std::uint64_t>(c.backbone.padding);
  w.put<std::uint64_t>(c.backbone.pool);
  w.put<std::uint64_t>(c.heads.objective_hidden);
  w.put<std::uint64_t>(c.heads.subjective_hidden1);
  w.put<std::uint64_t>(c.heads.subjective_hidden2);
  w.put<std::uint64_t>(c.heads.landmark_hidden);
  auto layers = net.parameter_layers();
  w.put<std::uint64_t>(layers.size());
  for (const Layer* l : layers) {
    put_tensor(w, l->params().weights);
    put_tensor(w, l->params().bias);
  }
  return std::move(w.bytes);
}

DmmNetwork deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof(kMagic), bytes.end());
  Reader r(body);
  if (auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
  NetworkConfig c;
  c.attributes = {};
  auto j = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < j; ++i) {
    c.attributes.names.push_back(r.get_string());
    auto g = r.get<std::uint8_t>();
    if (g > 1) throw std::runtime_error("checkpoint: bad attribute group tag");
    c.attributes.groups.push_back(static_cast<AttributeGroup>(g));
  }
  c.landmarks = r.get<std::uint64_t>();
  c.grouping = r.get<std::uint8_t>() != 0;
  c.seed = r.get<std::uint64_t>();
  c.backbone.in_channels = r.get<std::uint64_t>();
  c.backbone.channels.resize(r.get<std::uint64_t>());
  for (auto& ch : c.backbone.channels) ch = r.get<std::uint64_t>();
  c.backbone.kernel = r.get<std::uint64_t>();
  c.backbone.padding = r.get<std::uint64_t>();
  c.backbone.pool = r.get<std::uint64_t>();
  c.heads.objective_hidden = r.get<std::uint64_t>();
  c.heads.subjective_hidden1 = r.get<std::uint64_t>();
  c.heads.subjective_hidden2 = r.get<std::uint64_t>();
  c.heads.landmark_hidden = r.get<std::uint64_t>();

  DmmNetwork net(c);
  auto layers = net.parameter_layers();
  if (r.get<std::uint64_t>() != layers.size()) throw std::runtime_error("checkpoint: layer count mismatch");
  for (Layer* l : layers) {
    get_tensor(r, l->params().weights);
    get_tensor(r, l->params().bias);
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return net;
}

void save_checkpoint(const DmmNetwork& net, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

DmmNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dmm
