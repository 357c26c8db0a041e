#include "cwbass/cli.hpp"

int main(int argc, char** argv) {
  cwbass::tune_allocator();
  return cwbass::cli_main(argc, argv);
}
