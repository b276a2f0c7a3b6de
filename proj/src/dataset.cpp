#include "hopf/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <cstdio>

#include "hopf/error.hpp"

namespace hopf {

std::vector<Eigen::Vector2d> LcoRecord::planar_points() const
{
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(static_cast<std::size_t>(states.rows()));
    for (Eigen::Index i = 0; i < states.rows(); ++i) pts.emplace_back(states(i, 0), states(i, 1));
    return pts;
}

void TrainingDataset::validate() const
{
    require(!records.empty(), ErrorKind::InvalidArgument, "dataset has no records");
    require(m >= 2, ErrorKind::InvalidArgument, "dataset needs at least two observed states");
    for (const auto& r : records) {
        const std::string where = "record '" + r.id + "'";
        require(r.states.cols() == m, ErrorKind::InvalidArgument, where + " has inconsistent state count");
        require(r.states.rows() >= 3 && static_cast<std::size_t>(r.states.rows()) == r.t.size(),
                ErrorKind::InvalidArgument, where + " has mismatched time grid");
        require(std::isfinite(r.mu) && r.states.allFinite(), ErrorKind::InvalidArgument,
                where + " contains non-finite values");
        const double dt = r.dt();
        require(dt > 0.0, ErrorKind::InvalidArgument, where + " time grid is not increasing");
        for (std::size_t j = 1; j < r.t.size(); ++j)
            require(std::abs((r.t[j] - r.t[j - 1]) - dt) <= 1e-6 * dt, ErrorKind::InvalidArgument,
                    where + " time grid is not uniform");
    }
}

TrainingDataset TrainingDataset::without(std::size_t i) const
{
    TrainingDataset out = *this;
    out.records.erase(out.records.begin() + static_cast<std::ptrdiff_t>(i));
    return out;
}

LcoRecord downsample(const LcoRecord& record, int max_samples)
{
    require(max_samples >= 2, ErrorKind::InvalidArgument, "downsample limit must be >= 2");
    const auto n = record.states.rows();
    const Eigen::Index stride = (n + max_samples - 1) / max_samples;
    if (stride <= 1) return record;
    LcoRecord out = record;
    const Eigen::Index kept = (n + stride - 1) / stride;
    out.states.resize(kept, record.states.cols());
    out.t.resize(static_cast<std::size_t>(kept));
    for (Eigen::Index i = 0; i < kept; ++i) {
        out.states.row(i) = record.states.row(i * stride);
        out.t[static_cast<std::size_t>(i)] = record.t[static_cast<std::size_t>(i * stride)];
    }
    return out;
}

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, std::size_t n)
    {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    }
    void num(double v) { bytes(&v, sizeof v); }
    void num(std::int64_t v) { bytes(&v, sizeof v); }
    void str(const std::string& s)
    {
        num(static_cast<std::int64_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

}  // namespace

std::string dataset_fingerprint(const TrainingDataset& data)
{
    Fnv f;
    f.num(static_cast<std::int64_t>(data.m));
    f.num(static_cast<std::int64_t>(data.records.size()));
    for (const auto& r : data.records) {
        f.str(r.id);
        f.num(r.mu);
        f.num(static_cast<std::int64_t>(r.stability == Stability::Stable ? 0 : 1));
        f.num(static_cast<std::int64_t>(r.t.size()));
        for (double t : r.t) f.num(t);
        for (Eigen::Index i = 0; i < r.states.rows(); ++i)
            for (Eigen::Index j = 0; j < r.states.cols(); ++j) f.num(r.states(i, j));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
    return buf;
}

}  // namespace hopf
