// Writes a secret into 20 pages of a protected client with a 4-page window,
// then dumps RAM and counts how many copies of the secret an attacker finds.
#include <iostream>

#include "pagecrypt/pagecrypt.hpp"

int main() {
  using namespace pagecrypt;

  OrchestratorConfig config;
  config.window = 4;
  config.workers = 2;
  Orchestrator server(config);

  Marker secret{"secret", std::vector<std::uint8_t>(32)};
  for (std::size_t i = 0; i < secret.bytes.size(); ++i) secret.bytes[i] = static_cast<std::uint8_t>(0xA5 ^ (i * 37));

  {
    ClientSpace client(server, 4242);
    const Region buf = client.alloc(20 * kPageSize);
    for (std::uint64_t p = 0; p < 20; ++p) client.write(buf.base + p * kPageSize + 100, secret.bytes);

    ExposureReport report = scan_markers(take_snapshot(server), {secret});
    std::cout << "while running: " << report.marker_hits.size() << " copies of the secret in the dump\n"
              << report.to_text();

    client.free(buf);
    report = scan_markers(take_snapshot(server), {secret});
    std::cout << "after free: " << report.marker_hits.size() << " copies\n";
  }
  return 0;
}
