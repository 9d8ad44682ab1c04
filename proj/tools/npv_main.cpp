#include <iostream>

int main() {
  std::cout << "npv cli placeholder\n";
  return 0;
}
