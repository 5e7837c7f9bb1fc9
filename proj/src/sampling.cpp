#include <algorithm>
#include <limits>
#include <stdexcept>

#include "drgcn/training.hpp"

namespace drgcn {

PropagationPlan SampledBlock::plan() const {
  PropagationPlan out;
  out.nodes = nodes;
  out.sizes = sizes;
  for (const auto& op : ops) out.ops.push_back(&op);
  return out;
}

SampledBlock sample_block(const Graph& graph, const SparseAdj& p, std::span<const std::uint32_t> seeds,
                          std::span<const std::size_t> fanouts, Rng& rng) {
  if (seeds.empty()) throw std::invalid_argument("sample_block: empty seed set");
  if (fanouts.empty()) throw std::invalid_argument("sample_block: need one fanout per layer");
  const std::size_t n = graph.num_nodes();
  if (p.rows() != n || p.cols() != n) throw ShapeError("sample_block: adjacency does not match the graph");
  constexpr std::uint32_t kAbsent = std::numeric_limits<std::uint32_t>::max();

  SampledBlock block;
  block.fanouts.assign(fanouts.begin(), fanouts.end());
  std::vector<std::uint32_t> local(n, kAbsent);
  for (std::uint32_t s : seeds) {
    if (s >= n) throw std::invalid_argument("sample_block: seed out of range");
    if (local[s] != kAbsent) continue;
    local[s] = static_cast<std::uint32_t>(block.nodes.size());
    block.nodes.push_back(s);
  }

  const std::size_t L = fanouts.size();
  block.sizes.assign(L + 1, 0);
  block.sizes[L] = block.nodes.size();
  block.ops.resize(L);
  std::vector<std::uint32_t> pool;
  std::vector<std::pair<std::uint32_t, double>> entries;

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t targets = block.sizes[l + 1];
    std::vector<std::size_t> ptr{0};
    std::vector<std::uint32_t> idx;
    std::vector<double> vals;
    for (std::size_t r = 0; r < targets; ++r) {
      const std::uint32_t t = block.nodes[r];
      const auto nbrs = graph.neighbors(t);
      const std::size_t deg = nbrs.size();
      const std::size_t k = std::min(fanouts[l], deg);
      // Partial Fisher-Yates: the first k entries of pool are the sample.
      pool.assign(nbrs.begin(), nbrs.end());
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(deg - i));
        std::swap(pool[i], pool[j]);
      }
      entries.clear();
      entries.emplace_back(static_cast<std::uint32_t>(r), p.at(t, t));
      const double ratio = k == 0 ? 0.0 : static_cast<double>(deg) / static_cast<double>(k);
      for (std::size_t i = 0; i < k; ++i) {
        const std::uint32_t v = pool[i];
        if (local[v] == kAbsent) {
          local[v] = static_cast<std::uint32_t>(block.nodes.size());
          block.nodes.push_back(v);
        }
        entries.emplace_back(local[v], p.at(t, v) * ratio);
      }
      std::sort(entries.begin(), entries.end());
      for (const auto& [c, v] : entries) {
        idx.push_back(c);
        vals.push_back(v);
      }
      ptr.push_back(idx.size());
    }
    block.sizes[l] = block.nodes.size();
    block.ops[l] = CsrMatrix(targets, block.sizes[l], std::move(ptr), std::move(idx), std::move(vals));
  }
  return block;
}

}  // namespace drgcn
