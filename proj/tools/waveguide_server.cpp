// Blackbox child: answers line-protocol requests with the in-process waveguide model.
//   waveguide_server [--width-mm A] [--length-mm L]

#include "gpyield/blackbox.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
  gpyield::WaveguideConfig cfg;
  CLI::App app{"waveguide S11 server (newline-delimited JSON on stdin/stdout)"};
  app.add_option("--width-mm", cfg.width_mm, "guide width a in mm");
  app.add_option("--length-mm", cfg.length_mm, "guide length L in mm");
  CLI11_PARSE(app, argc, argv);

  std::ios::sync_with_stdio(false);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    try {
      const auto req = gpyield::protocol::decode_request(line);
      if (req.freq_rad_s.empty()) throw gpyield::ProtocolError("request has no frequencies");
      const gpyield::Vector p = gpyield::to_vector(req.params);
      cfg.validate(p, gpyield::FrequencyGrid(req.freq_rad_s, req.freq_rad_s.front(), req.freq_rad_s.back()));
      gpyield::SParamSample s(req.freq_rad_s.size());
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = gpyield::waveguide_s11(cfg, p, req.freq_rad_s[j]);
      std::cout << gpyield::protocol::encode_response(req.id, s) << std::flush;
    } catch (const std::exception& e) {
      std::cerr << "waveguide_server: " << e.what() << '\n';
      return 1;
    }
  }
  return 0;
}
