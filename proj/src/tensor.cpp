#include "ttl/tensor.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ttl {

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double z0 = mag * std::cos(2.0 * M_PI * u2);
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mean + stddev * z0;
}

std::string Fnv1a::hex() const {
    std::ostringstream os;
    os << std::hex;
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) os << ((h >> (4 * i)) & 0xf);
    return os.str();
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape) : s_(std::make_shared<Storage>()) {
    std::size_t n = shape_product(shape);
    s_->shape = std::move(shape);
    s_->values.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : s_(std::make_shared<Storage>()) {
    if (shape_product(shape) != values.size())
        throw shape_error("tensor: " + shape_str(shape) + " does not hold " +
                          std::to_string(values.size()) + " elements");
    s_->shape = std::move(shape);
    s_->values = std::move(values);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.s_->values) v = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::rows() const {
    if (ndim() <= 1) return 1;
    if (ndim() == 2) return s_->shape[0];
    throw shape_error("rows(): tensor is " + shape_str(s_->shape) + ", expected <= 2-D");
}

std::size_t Tensor::cols() const {
    if (ndim() == 0) return 0;
    if (ndim() == 1) return s_->shape[0];
    if (ndim() == 2) return s_->shape[1];
    throw shape_error("cols(): tensor is " + shape_str(s_->shape) + ", expected <= 2-D");
}

double Tensor::item() const {
    if (size() != 1) throw shape_error("item(): tensor has " + std::to_string(size()) + " elements");
    return s_->values[0];
}

void Tensor::set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    if (!rg) s_->grad.clear();
}

std::span<const double> Tensor::grad() const {
    if (s_->grad.empty())
        throw numeric_error("grad(): no gradient accumulated");
    return s_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
    return s_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (g.size() != s_->values.size())
        throw shape_error("accumulate_grad: size mismatch");
    auto dst = mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.s_->shape = s_->shape;
    t.s_->values = s_->values;
    t.s_->requires_grad = s_->requires_grad;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : s_->values)
        if (!std::isfinite(v)) return false;
    return true;
}

void GradTape::backward(Tensor& loss) {
    if (loss.size() != 1)
        throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!contains(loss))
        throw numeric_error("backward: loss was not produced under this tape");
    loss.mutable_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    clear();
}

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool enabled) {
    g_finite_checks.store(enabled, std::memory_order_relaxed);
}

void check_finite(const Tensor& t, const char* op) {
    if (!finite_checks_enabled()) return;
    if (!t.all_finite())
        throw numeric_error(std::string(op) + ": non-finite value in output");
}

}  // namespace ttl
