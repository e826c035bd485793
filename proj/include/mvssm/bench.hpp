// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

namespace mvssm {

struct ScanBenchRow {
  std::size_t length = 0;
  std::size_t state_dim = 0;
  std::size_t lanes = 0;
  double sequential_ns_per_token = 0.0;
  double parallel_ns_per_token = 0.0;
  bool parallel_slower() const { return parallel_ns_per_token > sequential_ns_per_token; }
};

struct ScanBenchOptions {
  std::vector<std::size_t> lengths = {256, 1024, 4096, 16384};
  std::size_t state_dim = 16;
  std::size_t channels = 16;  // lanes = channels * state_dim
  std::size_t repeats = 3;    // best of
  std::size_t threads = 0;    // parallel workers; 0 = hardware concurrency
};

// Times the raw recurrence kernels on random decays in (0.5, 1). Rows come out in
// ascending length order.
std::vector<ScanBenchRow> bench_scan(const ScanBenchOptions& options);
void write_bench_table(std::ostream& out, const std::vector<ScanBenchRow>& rows);

}  // namespace mvssm
