// SPDX-License-Identifier: Apache-2.0
#include "dyconv/cost.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dyconv/dynamic.hpp"
#include "dyconv/error.hpp"
#include "dyconv/ops.hpp"
#include "json_util.hpp"

namespace dyconv {

namespace {

using u64 = std::uint64_t;

std::string layer_label(const LayerSpec& spec) {
  return spec.name.empty() ? std::string(to_string(spec.kind)) : spec.name;
}

void require_dynamic(const LayerSpec& spec, const char* what) {
  if (!spec.dynamic) throw ConfigError(std::string(what) + " of static layer '" + layer_label(spec) + "'");
  if (!(spec.is_conv() || spec.kind == LayerKind::FullyConnected)) {
    throw ConfigError("layer '" + layer_label(spec) + "' of kind " + to_string(spec.kind) +
                      " cannot be dynamic");
  }
  if (spec.kernel_count == 0) throw ConfigError("dynamic layer needs K >= 1");
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise_conv";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::Pool: return "pool";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Activation: return "act";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::Conv, LayerKind::DepthwiseConv, LayerKind::FullyConnected, LayerKind::Pool,
                 LayerKind::BatchNorm, LayerKind::Activation})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::size_t LayerSpec::out_h() const {
  if (is_conv()) return conv_output_extent(in_h, kernel, stride, padding);
  if (kind == LayerKind::Pool || kind == LayerKind::FullyConnected) return 1;
  return in_h;
}

std::size_t LayerSpec::out_w() const {
  if (is_conv()) return conv_output_extent(in_w, kernel, stride, padding);
  if (kind == LayerKind::Pool || kind == LayerKind::FullyConnected) return 1;
  return in_w;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network '" + name + "' has no layers");
  std::size_t c = in_c, h = in_h, w = in_w;
  bool seen_conv = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " ('" + layer_label(l) + "')";
    if (l.c_in != c) {
      throw ConfigError(where + " expects " + std::to_string(l.c_in) + " channels, receives " +
                        std::to_string(c));
    }
    if (l.in_h != h || l.in_w != w) {
      throw ConfigError(where + " expects input " + std::to_string(l.in_h) + "x" + std::to_string(l.in_w) +
                        ", receives " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (l.is_conv()) {
      if (l.stride == 0 || l.kernel == 0 || l.groups == 0) throw ConfigError(where + " has zero stride/kernel/groups");
      if (l.c_in % l.groups != 0 || l.c_out % l.groups != 0) throw ConfigError(where + " channels not divisible by groups");
      if (l.kind == LayerKind::DepthwiseConv && (l.groups != l.c_in || l.c_out != l.c_in)) {
        throw ConfigError(where + " is depthwise but groups != channels");
      }
      if (l.in_h + 2 * l.padding < l.kernel || l.in_w + 2 * l.padding < l.kernel) {
        throw ConfigError(where + " kernel exceeds padded input");
      }
      if (!seen_conv && l.dynamic) throw ConfigError(where + ": the first convolution must stay static");
      seen_conv = true;
    } else if (l.kind == LayerKind::FullyConnected) {
      if (l.in_h != 1 || l.in_w != 1) throw ConfigError(where + " is fully connected but input is spatial");
    } else if (l.c_out != l.c_in) {
      throw ConfigError(where + " must preserve channel count");
    }
    if (l.dynamic && !(l.is_conv() || l.kind == LayerKind::FullyConnected)) {
      throw ConfigError(where + " of kind " + to_string(l.kind) + " cannot be dynamic");
    }
    c = l.c_out;
    h = l.out_h();
    w = l.out_w();
  }
}

double CostReport::overall_constraint_ratio() const {
  if (conv_total == 0) throw ConfigError("network has zero base cost");
  return static_cast<double>(attention_total + aggregation_total) / static_cast<double>(conv_total);
}

u64 conv_madds(const LayerSpec& spec) {
  if (!spec.is_conv()) {
    throw ConfigError("conv_madds of non-convolution layer '" + layer_label(spec) + "'");
  }
  if (spec.groups == 0 || spec.c_in % spec.groups != 0) throw ConfigError("channels not divisible by groups");
  return u64{spec.out_h()} * spec.out_w() * (spec.c_in / spec.groups) * spec.c_out * spec.kernel * spec.kernel;
}

u64 base_madds(const LayerSpec& spec) {
  if (spec.is_conv()) return conv_madds(spec);
  if (spec.kind == LayerKind::FullyConnected) return u64{spec.c_in} * spec.c_out;
  return 0;
}

u64 attention_madds(const LayerSpec& spec) {
  require_dynamic(spec, "attention_madds");
  const u64 r = reduction_dim(spec.c_in);
  return u64{spec.in_h} * spec.in_w * spec.c_in + u64{spec.c_in} * r + r * spec.kernel_count;
}

u64 aggregation_madds(const LayerSpec& spec) {
  require_dynamic(spec, "aggregation_madds");
  const std::size_t groups = spec.kind == LayerKind::FullyConnected ? 1 : spec.groups;
  const std::size_t kernel = spec.kind == LayerKind::FullyConnected ? 1 : spec.kernel;
  const u64 k = spec.kernel_count;
  return k * (spec.c_in / groups) * spec.c_out * kernel * kernel + k * spec.c_out;
}

double check_constraint(const LayerSpec& spec, std::size_t kernel_count) {
  LayerSpec dyn = spec;
  dyn.dynamic = true;
  dyn.kernel_count = kernel_count;
  const u64 base = base_madds(dyn);
  if (base == 0) throw ConfigError("layer '" + layer_label(spec) + "' has zero base cost");
  return static_cast<double>(attention_madds(dyn) + aggregation_madds(dyn)) / static_cast<double>(base);
}

CostReport network_madds(const NetworkSpec& net, bool dynamic, std::size_t kernel_count) {
  net.validate();
  if (dynamic && kernel_count == 0) throw ConfigError("dynamic network needs K >= 1");
  CostReport report;
  report.network = net.name;
  report.dynamic = dynamic;
  report.kernel_count = dynamic ? kernel_count : 0;
  for (const auto& l : net.layers) {
    LayerCost cost;
    cost.name = layer_label(l);
    cost.kind = l.kind;
    cost.dynamic = dynamic && l.dynamic;
    cost.conv_madds = base_madds(l);
    if (cost.dynamic) {
      LayerSpec dyn = l;
      dyn.kernel_count = kernel_count;
      cost.attention_madds = attention_madds(dyn);
      cost.aggregation_madds = aggregation_madds(dyn);
      if (cost.conv_madds > 0) {
        cost.constraint_ratio = static_cast<double>(cost.attention_madds + cost.aggregation_madds) /
                                static_cast<double>(cost.conv_madds);
      }
    }
    report.conv_total += cost.conv_madds;
    report.attention_total += cost.attention_madds;
    report.aggregation_total += cost.aggregation_madds;
    report.layers.push_back(std::move(cost));
  }
  return report;
}

std::size_t make_divisible(double value, std::size_t divisor, std::size_t min_value) {
  const auto d = static_cast<double>(divisor);
  auto rounded = static_cast<std::size_t>(std::floor((value + d / 2.0) / d)) * divisor;
  rounded = std::max(min_value, rounded);
  if (static_cast<double>(rounded) < 0.9 * value) rounded += divisor;
  return rounded;
}

NetworkSpec mobilenet_v2_spec(double width_multiplier, std::size_t resolution, std::size_t num_classes) {
  if (!(width_multiplier > 0.0)) throw ConfigError("width multiplier must be positive");
  if (resolution == 0) throw ConfigError("resolution must be positive");
  struct Stage {
    std::size_t expand, channels, repeats, stride;
  };
  constexpr Stage kStages[] = {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
                               {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};

  NetworkSpec net;
  std::ostringstream name;
  name << "mobilenet_v2_x" << width_multiplier;
  net.name = name.str();
  net.in_c = 3;
  net.in_h = net.in_w = resolution;
  net.width_multiplier = width_multiplier;

  std::size_t c = 3, h = resolution;
  auto push = [&](std::string layer_name, LayerKind kind, std::size_t c_out, std::size_t kernel,
                  std::size_t stride, std::size_t groups, bool dynamic) {
    LayerSpec l;
    l.name = std::move(layer_name);
    l.kind = kind;
    l.c_in = c;
    l.c_out = c_out;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = kind == LayerKind::Pool || kind == LayerKind::FullyConnected ? 0 : kernel / 2;
    l.groups = groups;
    l.in_h = l.in_w = h;
    l.dynamic = dynamic;
    net.layers.push_back(l);
    c = c_out;
    h = l.out_h();
  };

  push("stem", LayerKind::Conv, make_divisible(32 * width_multiplier), 3, 2, 1, false);
  std::size_t block = 0;
  for (const auto& stage : kStages) {
    const std::size_t out = make_divisible(static_cast<double>(stage.channels) * width_multiplier);
    for (std::size_t i = 0; i < stage.repeats; ++i, ++block) {
      const std::string prefix = "block" + std::to_string(block);
      const std::size_t hidden = c * stage.expand;
      if (stage.expand != 1) push(prefix + ".expand", LayerKind::Conv, hidden, 1, 1, 1, true);
      push(prefix + ".depthwise", LayerKind::DepthwiseConv, hidden, 3, i == 0 ? stage.stride : 1, hidden, true);
      push(prefix + ".project", LayerKind::Conv, out, 1, 1, 1, true);
    }
  }
  push("head", LayerKind::Conv, make_divisible(1280 * std::max(1.0, width_multiplier)), 1, 1, 1, false);
  push("pool", LayerKind::Pool, c, 1, 1, 1, false);
  push("classifier", LayerKind::FullyConnected, num_classes, 1, 1, 1, false);
  return net;
}

using json_util::reject_unknown;
using json_util::take;
using json_util::take_or;

NetworkSpec network_from_json(const nlohmann::json& doc) {
  reject_unknown(doc, {"spec_version", "name", "input", "width_multiplier", "layers"}, "network");
  if (take<int>(doc, "spec_version") != 1) throw ConfigError("unsupported network spec_version");
  NetworkSpec net;
  net.name = take_or<std::string>(doc, "name", "network");
  const auto input = take<nlohmann::json>(doc, "input");
  reject_unknown(input, {"c", "h", "w"}, "network.input");
  net.in_c = take<std::size_t>(input, "c");
  net.in_h = take<std::size_t>(input, "h");
  net.in_w = take<std::size_t>(input, "w");
  net.width_multiplier = take_or<double>(doc, "width_multiplier", 1.0);
  for (const auto& item : take<nlohmann::json>(doc, "layers")) {
    reject_unknown(item, {"name", "kind", "c_in", "c_out", "kernel", "stride", "padding", "groups", "in_h",
                          "in_w", "dynamic", "K"},
                   "layer");
    LayerSpec l;
    l.name = take_or<std::string>(item, "name", "");
    l.kind = parse_layer_kind(take<std::string>(item, "kind"));
    l.c_in = take<std::size_t>(item, "c_in");
    l.c_out = take<std::size_t>(item, "c_out");
    l.kernel = take_or<std::size_t>(item, "kernel", 1);
    l.stride = take_or<std::size_t>(item, "stride", 1);
    l.padding = take_or<std::size_t>(item, "padding", 0);
    l.groups = take_or<std::size_t>(item, "groups", 1);
    l.in_h = take<std::size_t>(item, "in_h");
    l.in_w = take<std::size_t>(item, "in_w");
    l.dynamic = take_or<bool>(item, "dynamic", false);
    l.kernel_count = take_or<std::size_t>(item, "K", 1);
    net.layers.push_back(l);
  }
  net.validate();
  return net;
}

nlohmann::json network_to_json(const NetworkSpec& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"name", l.name}, {"kind", to_string(l.kind)}, {"c_in", l.c_in}, {"c_out", l.c_out},
                      {"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding},
                      {"groups", l.groups}, {"in_h", l.in_h}, {"in_w", l.in_w}, {"dynamic", l.dynamic},
                      {"K", l.kernel_count}});
  }
  return {{"spec_version", 1},
          {"name", net.name},
          {"input", {{"c", net.in_c}, {"h", net.in_h}, {"w", net.in_w}}},
          {"width_multiplier", net.width_multiplier},
          {"layers", layers}};
}

nlohmann::json report_to_json(const CostReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"name", l.name}, {"kind", to_string(l.kind)}, {"dynamic", l.dynamic},
                      {"conv_madds", l.conv_madds}, {"attention_madds", l.attention_madds},
                      {"aggregation_madds", l.aggregation_madds}, {"constraint_ratio", l.constraint_ratio}});
  }
  return {{"spec_version", 1},
          {"network", report.network},
          {"dynamic", report.dynamic},
          {"K", report.kernel_count},
          {"layers", layers},
          {"totals",
           {{"conv_madds", report.conv_total},
            {"attention_madds", report.attention_total},
            {"aggregation_madds", report.aggregation_total},
            {"total_madds", report.total()}}}};
}

std::string report_to_table(const CostReport& report) {
  std::ostringstream os;
  os << report.network << (report.dynamic ? " (dynamic, K=" + std::to_string(report.kernel_count) + ")" : " (static)")
     << '\n';
  os << std::left << std::setw(22) << "layer" << std::setw(16) << "kind" << std::right << std::setw(14) << "conv"
     << std::setw(12) << "attention" << std::setw(14) << "aggregation" << std::setw(10) << "ratio" << '\n';
  for (const auto& l : report.layers) {
    os << std::left << std::setw(22) << l.name << std::setw(16) << to_string(l.kind) << std::right
       << std::setw(14) << l.conv_madds << std::setw(12) << l.attention_madds << std::setw(14)
       << l.aggregation_madds << std::setw(10) << std::fixed << std::setprecision(4) << l.constraint_ratio
       << '\n';
  }
  os << std::left << std::setw(38) << "total" << std::right << std::setw(14) << report.conv_total << std::setw(12)
     << report.attention_total << std::setw(14) << report.aggregation_total << '\n';
  os << "total MAdds: " << std::fixed << std::setprecision(1) << static_cast<double>(report.total()) / 1e6
     << "M\n";
  return os.str();
}

}  // namespace dyconv
