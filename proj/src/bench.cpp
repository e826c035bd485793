// SPDX-License-Identifier: Apache-2.0

#include "mvssm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <limits>
#include <thread>

#include "mvssm/rng.hpp"
#include "mvssm/scan_kernels.hpp"

namespace mvssm {

std::vector<ScanBenchRow> bench_scan(const ScanBenchOptions& options) {
  const std::size_t threads =
      options.threads ? options.threads : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  std::vector<std::size_t> lengths = options.lengths;
  std::sort(lengths.begin(), lengths.end());
  std::vector<ScanBenchRow> rows;
  for (std::size_t length : lengths) {
    ScanBenchRow row;
    row.length = length;
    row.state_dim = options.state_dim;
    row.lanes = options.channels * options.state_dim;
    SeededRng rng(length);
    std::vector<double> a(length * row.lanes), b(a.size()), out(a.size());
    for (auto& v : a) v = rng.uniform(0.5, 1.0);
    for (auto& v : b) v = rng.normal();
    auto time_best = [&](auto&& kernel) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < std::max<std::size_t>(1, options.repeats); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        kernel();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::nano>(t1 - t0).count());
      }
      return best / static_cast<double>(length);
    };
    row.sequential_ns_per_token = time_best(
        [&] { kernels::sequential_recurrence<double>(a, b, {}, out, length, row.lanes); });
    row.parallel_ns_per_token = time_best(
        [&] { kernels::parallel_recurrence<double>(a, b, {}, out, length, row.lanes, threads); });
    rows.push_back(row);
  }
  return rows;
}

void write_bench_table(std::ostream& out, const std::vector<ScanBenchRow>& rows) {
  out << "length  state-dim  lanes  seq-ns/token  par-ns/token  note\n";
  for (const auto& r : rows) {
    out << std::setw(6) << r.length << std::setw(11) << r.state_dim << std::setw(7) << r.lanes << std::fixed
        << std::setprecision(1) << std::setw(14) << r.sequential_ns_per_token << std::setw(14)
        << r.parallel_ns_per_token << "  " << (r.parallel_slower() ? "FLAG parallel slower" : "ok") << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace mvssm
