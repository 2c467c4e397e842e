// Misbehaving blackbox children for the protocol tests.
//   blackbox_stub constant | malformed | crash | hang | wrong_id | chatty | short | nan | serve_then_crash N

#include "gpyield/blackbox.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "constant";
  long budget = argc > 2 ? std::atol(argv[2]) : -1;
  std::string line;
  while (std::getline(std::cin, line)) {
    const auto req = gpyield::protocol::decode_request(line);
    const std::size_t n = req.freq_rad_s.size();
    gpyield::SParamSample s(n, gpyield::Complex(0.01, 0.0));
    if (mode == "constant") {
      std::cout << gpyield::protocol::encode_response(req.id, s);
    } else if (mode == "malformed") {
      std::cout << "{\"id\": " << req.id << ", \"s_real\": [oops\n";
    } else if (mode == "crash") {
      std::_Exit(3);
    } else if (mode == "hang") {
      std::this_thread::sleep_for(std::chrono::hours(1));
    } else if (mode == "wrong_id") {
      std::cout << gpyield::protocol::encode_response(req.id + 1, s);
    } else if (mode == "chatty") {
      std::cout << "solver: converged\n" << gpyield::protocol::encode_response(req.id, s);
    } else if (mode == "short") {
      s.pop_back();
      std::cout << gpyield::protocol::encode_response(req.id, s);
    } else if (mode == "nan") {
      std::cout << "{\"id\":" << req.id << ",\"s_real\":[" << std::string(n > 1 ? "0," : "") << "NaN],\"s_imag\":[0]}\n";
    } else if (mode == "serve_then_crash") {
      if (budget-- == 0) std::_Exit(4);
      std::cout << gpyield::protocol::encode_response(req.id, s);
    } else {
      std::cerr << "blackbox_stub: unknown mode " << mode << '\n';
      return 2;
    }
    std::cout.flush();
  }
  return 0;
}
