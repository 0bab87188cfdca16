#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/tensor.hpp"

namespace mocha {

/// Ordered, named set of trainable tensors.
class ParamStore {
public:
    std::size_t add(std::string name, Tensor value) {
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
        return values_.size() - 1;
    }

    std::size_t size() const noexcept { return values_.size(); }
    Tensor& operator[](std::size_t i) { return values_[i]; }
    const Tensor& operator[](std::size_t i) const { return values_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    /// Registers every tensor on the tape, as leaves when trainable.
    std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
        std::vector<ad::Var> vars;
        vars.reserve(values_.size());
        for (const auto& v : values_) vars.push_back(trainable ? tape.leaf(v) : tape.constant(v));
        return vars;
    }

    /// FNV-1a over the raw bytes of every value.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& v : values_)
            for (double x : v.data()) {
                std::uint64_t bits;
                std::memcpy(&bits, &x, sizeof bits);
                for (int b = 0; b < 8; ++b) {
                    h ^= (bits >> (8 * b)) & 0xffu;
                    h *= 0x100000001b3ULL;
                }
            }
        return h;
    }

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (std::size_t i = 0; i < values_.size(); ++i)
            out.push_back({{"name", names_[i]}, {"shape", values_[i].shape()}, {"data", values_[i].values()}});
        return out;
    }

    /// Overwrites values from a checkpoint array; names and shapes must match.
    void load_json(const nlohmann::json& arr) {
        try {
            require(arr.is_array() && arr.size() == values_.size(), ErrorKind::InvalidConfig,
                    "checkpoint holds a different number of tensors");
            for (std::size_t i = 0; i < values_.size(); ++i) {
                const auto& e = arr[i];
                require(e.at("name").get<std::string>() == names_[i], ErrorKind::InvalidConfig,
                        "checkpoint tensor " + std::to_string(i) + " is not '" + names_[i] + "'");
                Tensor t(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
                require(t.shape() == values_[i].shape(), ErrorKind::InvalidConfig,
                        "checkpoint tensor '" + names_[i] + "' has shape " + shape_string(t.shape()));
                values_[i] = std::move(t);
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::InvalidConfig, std::string("malformed checkpoint: ") + e.what());
        }
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

} // namespace mocha
