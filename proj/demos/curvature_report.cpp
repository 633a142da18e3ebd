// Curvature range and the one-hop vs two-hop sensitivity check on a few regular graphs.

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mapn/mapn.hpp"

using namespace mapn;

int main() {
    const std::vector<std::pair<std::string, HeteroGraph>> graphs{
        {"cycle12", make_cycle(12)},
        {"complete6", make_complete(6)},
        {"circulant10-1,2", make_circulant(10, {1, 2})},
        {"circulant12-1,6", make_circulant(12, {1, 6})},
        {"petersen", make_from_edges(10, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 5}, {1, 6}, {2, 7}, {3, 8},
                                          {4, 9}, {5, 7}, {7, 9}, {9, 6}, {6, 8}, {8, 5}})},
    };
    std::printf("%-18s %3s %8s %8s %8s %9s %5s %8s %8s\n", "graph", "K", "min", "mean", "max", "threshold", "pre",
                "1-hop", "2-hop");
    for (const auto& [name, g] : graphs) {
        const auto c = curvature_report(g);
        const auto t = theorem2_check(g, 0);
        std::printf("%-18s %3zu %8.4f %8.4f %8.4f %9.4f %5s %8.4f %8.4f\n", name.c_str(), t.K, c.min, c.mean, c.max,
                    t.threshold, t.precondition ? "yes" : "no", t.one_hop_sum, t.two_hop_sum);
    }
}
