#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mxfer/tensor.hpp"

namespace mxfer {

/// Two parameter vectors do not share a layout.
class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LayerEntry {
  std::string name;
  Shape shape;
  friend bool operator==(const LayerEntry&, const LayerEntry&) = default;
};

/// Ordered (name, shape) table describing how a flat vector maps onto layers.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<LayerEntry> entries);

  const std::vector<LayerEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total() const { return total_; }
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }
  std::size_t count(std::size_t i) const { return shape_size(entries_.at(i).shape); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;

  /// Layout extended with extra entries appended at the end.
  Layout extended(const std::vector<LayerEntry>& extra) const;

  friend bool operator==(const Layout& a, const Layout& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<LayerEntry> entries_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// Flat parameter vector theta with its layer layout.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(Layout layout);
  ParameterVector(Layout layout, std::vector<double> data);

  static ParameterVector flatten(Layout layout, const std::vector<Tensor>& layers);
  std::vector<Tensor> unflatten() const;

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Tensor tensor(std::size_t i) const;
  Tensor tensor(const std::string& name) const { return tensor(layout_.index(name)); }
  void set(std::size_t i, const Tensor& value);
  void set(const std::string& name, const Tensor& value) { set(layout_.index(name), value); }
  std::span<const double> slice(std::size_t i) const;
  std::span<double> slice(std::size_t i);

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  Layout layout_;
  std::vector<double> data_;
};

/// Throws LayoutError naming the first mismatching layer.
void require_compatible(const Layout& expected, const Layout& actual);
bool compatible(const ParameterVector& a, const ParameterVector& b);

}  // namespace mxfer
