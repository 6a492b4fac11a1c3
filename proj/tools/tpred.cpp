#include <string>
#include <vector>

#include "tpred/cli.hpp"

int main(int argc, char** argv) {
  return tpred::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
