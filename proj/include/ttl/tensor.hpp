#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ttl/common.hpp"

namespace ttl {

// Dense row-major tensor of doubles with optional gradient accumulator.
// Copying a Tensor copies a handle; the underlying storage is shared so the
// tape can reference forward values by identity.
class Tensor {
public:
    struct Storage {
        std::vector<std::size_t> shape;
        std::vector<double> values;
        bool requires_grad = false;
        std::vector<double> grad;  // empty until first accumulation
    };

    Tensor() : s_(std::make_shared<Storage>()) {}
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);

    const std::vector<std::size_t>& shape() const { return s_->shape; }
    std::size_t ndim() const { return s_->shape.size(); }
    std::size_t size() const { return s_->values.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }

    // 2-D accessors; a 1-D tensor is treated as a single row
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return s_->values; }
    std::span<double> mutable_data() { return s_->values; }
    double at(std::size_t i) const { return s_->values.at(i); }
    double item() const;

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool rg);

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void accumulate_grad(std::span<const double> g);
    void zero_grad() { s_->grad.clear(); }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }
    const void* storage_id() const { return s_.get(); }

    Tensor clone() const;
    bool all_finite() const;

    std::shared_ptr<Storage> storage() const { return s_; }

private:
    std::shared_ptr<Storage> s_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Reverse-mode tape. Ops append a backward closure as they execute; backward()
// replays them in exact reverse order, then clears the tape.
class GradTape {
public:
    void record(std::function<void()> backward_fn, const Tensor& output) {
        nodes_.push_back(std::move(backward_fn));
        outputs_.insert(output.storage_id());
    }

    std::size_t size() const { return nodes_.size(); }
    bool contains(const Tensor& t) const { return outputs_.count(t.storage_id()) > 0; }

    // loss must be a scalar produced under this tape
    void backward(Tensor& loss);

    void clear() {
        nodes_.clear();
        outputs_.clear();
    }

private:
    std::vector<std::function<void()>> nodes_;
    std::unordered_set<const void*> outputs_;
};

// Per-op finite checks: on by default in debug builds, off in optimized
// builds, and switchable at runtime either way (tests turn them on).
bool finite_checks_enabled();
void set_finite_checks(bool enabled);
void check_finite(const Tensor& t, const char* op);

}  // namespace ttl
