#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xfit/autodiff.hpp"

namespace xfit::model {

using ad::Index;
using ad::Matrix;
using ad::Vector;

// Named parameter blocks in a fixed order. The order defines the flat layout.
template <typename T>
class Parameters {
public:
    Parameters() = default;

    void add(std::string name, Matrix<T> block) {
        if (index_.count(name)) throw DataError("parameters: duplicate block '" + name + "'");
        index_.emplace(name, names_.size());
        names_.push_back(std::move(name));
        blocks_.push_back(std::move(block));
    }

    [[nodiscard]] std::size_t size() const { return blocks_.size(); }
    [[nodiscard]] const std::string& name(std::size_t i) const { return names_[i]; }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] const Matrix<T>& operator[](std::size_t i) const { return blocks_[i]; }
    [[nodiscard]] Matrix<T>& operator[](std::size_t i) { return blocks_[i]; }

    [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] const Matrix<T>& at(const std::string& name) const {
        auto i = find(name);
        if (!i) throw DataError("parameters: no block named '" + name + "'");
        return blocks_[*i];
    }
    [[nodiscard]] Matrix<T>& at(const std::string& name) {
        auto i = find(name);
        if (!i) throw DataError("parameters: no block named '" + name + "'");
        return blocks_[*i];
    }

    [[nodiscard]] Index total_count() const {
        Index n = 0;
        for (const auto& b : blocks_) n += b.size();
        return n;
    }

    [[nodiscard]] Vector<T> flatten() const {
        Vector<T> out(total_count());
        Index off = 0;
        for (const auto& b : blocks_) {
            out.segment(off, b.size()) = Eigen::Map<const Vector<T>>(b.data(), b.size());
            off += b.size();
        }
        return out;
    }

    // Overwrites every block from a flat vector laid out as flatten() produces.
    void assign(const Vector<T>& flat) {
        if (flat.size() != total_count()) {
            throw ShapeError("parameters: flat vector of " + std::to_string(flat.size()) + " values for " +
                             std::to_string(total_count()) + " parameters");
        }
        Index off = 0;
        for (auto& b : blocks_) {
            Eigen::Map<Vector<T>>(b.data(), b.size()) = flat.segment(off, b.size());
            off += b.size();
        }
    }

    [[nodiscard]] Parameters unflatten(const Vector<T>& flat) const {
        Parameters p = *this;
        p.assign(flat);
        return p;
    }

    // Same names and shapes, all zeros.
    [[nodiscard]] Parameters zeros_like() const {
        Parameters p = *this;
        for (auto& b : p.blocks_) b.setZero();
        return p;
    }

    template <typename U>
    [[nodiscard]] Parameters<U> cast() const {
        Parameters<U> p;
        for (std::size_t i = 0; i < size(); ++i) p.add(names_[i], blocks_[i].template cast<U>());
        return p;
    }

    [[nodiscard]] bool same_layout(const Parameters& other) const {
        if (names_ != other.names_) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (blocks_[i].rows() != other.blocks_[i].rows() || blocks_[i].cols() != other.blocks_[i].cols()) {
                return false;
            }
        }
        return true;
    }

    bool operator==(const Parameters& other) const {
        if (!same_layout(other)) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (blocks_[i] != other.blocks_[i]) return false;
        }
        return true;
    }

private:
    std::vector<std::string> names_;
    std::vector<Matrix<T>> blocks_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds every block as a leaf on `tape`.
template <typename T>
std::vector<ad::Var<T>> bind(ad::Tape<T>& tape, const Parameters<T>& params, bool requires_grad = true) {
    std::vector<ad::Var<T>> vars;
    vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        vars.push_back(requires_grad ? tape.variable(params[i]) : tape.constant(params[i]));
    }
    return vars;
}

// Collects adjoint values into a Parameters with the layout of `like`.
template <typename T>
Parameters<T> collect(std::span<const ad::Var<T>> vars, const Parameters<T>& like) {
    Parameters<T> out;
    for (std::size_t i = 0; i < like.size(); ++i) out.add(like.name(i), vars[i].value());
    return out;
}

}  // namespace xfit::model
