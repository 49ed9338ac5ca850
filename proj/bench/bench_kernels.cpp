// OpenMP kernels against the serial reference, JSON on stdout.

#include <iostream>

#include "recorr/bench.hpp"

int main(int argc, char** argv) {
    recorr::BenchOptions opt;
    if (argc > 1) opt.dims = std::atoi(argv[1]);
    if (argc > 2) opt.channels = std::atoi(argv[2]);
    std::cout << recorr::run_bench(opt).dump(2) << "\n";
}
