#include "mxfer/parameters.hpp"

#include <algorithm>

namespace mxfer {

Layout::Layout(std::vector<LayerEntry> entries) : entries_(std::move(entries)) {
  offsets_.reserve(entries_.size());
  for (const auto& e : entries_) {
    offsets_.push_back(total_);
    total_ += shape_size(e.shape);
  }
}

std::optional<std::size_t> Layout::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Layout::index(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw LayoutError("layout has no layer named '" + name + "'");
}

Layout Layout::extended(const std::vector<LayerEntry>& extra) const {
  auto all = entries_;
  all.insert(all.end(), extra.begin(), extra.end());
  return Layout(std::move(all));
}

ParameterVector::ParameterVector(Layout layout)
    : layout_(std::move(layout)), data_(layout_.total(), 0.0) {}

ParameterVector::ParameterVector(Layout layout, std::vector<double> data)
    : layout_(std::move(layout)), data_(std::move(data)) {
  if (data_.size() != layout_.total()) {
    throw LayoutError("parameter vector has " + std::to_string(data_.size()) +
                      " values but layout needs " + std::to_string(layout_.total()));
  }
}

ParameterVector ParameterVector::flatten(Layout layout, const std::vector<Tensor>& layers) {
  if (layers.size() != layout.size()) {
    throw LayoutError("flatten: " + std::to_string(layers.size()) + " tensors for " +
                      std::to_string(layout.size()) + " layers");
  }
  ParameterVector out(std::move(layout));
  for (std::size_t i = 0; i < layers.size(); ++i) out.set(i, layers[i]);
  return out;
}

std::vector<Tensor> ParameterVector::unflatten() const {
  std::vector<Tensor> out;
  out.reserve(layout_.size());
  for (std::size_t i = 0; i < layout_.size(); ++i) out.push_back(tensor(i));
  return out;
}

std::span<const double> ParameterVector::slice(std::size_t i) const {
  return std::span<const double>(data_).subspan(layout_.offset(i), layout_.count(i));
}

std::span<double> ParameterVector::slice(std::size_t i) {
  return std::span<double>(data_).subspan(layout_.offset(i), layout_.count(i));
}

Tensor ParameterVector::tensor(std::size_t i) const {
  auto s = slice(i);
  return Tensor(layout_.entries().at(i).shape, std::vector<double>(s.begin(), s.end()));
}

void ParameterVector::set(std::size_t i, const Tensor& value) {
  const auto& entry = layout_.entries().at(i);
  if (value.shape() != entry.shape) {
    throw ShapeError("set '" + entry.name + "': incompatible shapes " + shape_string(entry.shape) +
                     " and " + shape_string(value.shape()));
  }
  std::copy(value.data().begin(), value.data().end(), slice(i).begin());
}

void require_compatible(const Layout& expected, const Layout& actual) {
  const auto& a = expected.entries();
  const auto& b = actual.entries();
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!(a[i] == b[i])) {
      throw LayoutError("layout mismatch at layer " + std::to_string(i) + ": '" + a[i].name + "' " +
                        shape_string(a[i].shape) + " vs '" + b[i].name + "' " +
                        shape_string(b[i].shape));
    }
  }
  if (a.size() != b.size()) {
    const auto& extra = a.size() > b.size() ? a[n] : b[n];
    throw LayoutError("layout mismatch at layer " + std::to_string(n) + ": '" + extra.name +
                      "' present in only one model");
  }
}

bool compatible(const ParameterVector& a, const ParameterVector& b) {
  return a.layout() == b.layout();
}

}  // namespace mxfer
