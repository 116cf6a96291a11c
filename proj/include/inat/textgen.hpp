#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "inat/rng.hpp"

namespace inat {

// Deterministic English-like filler text. Each paragraph commits to two topic
// word-groups and to one recurring noun phrase (its "subject") repeated
// verbatim, so windows spanning back to an earlier mention lower next-byte
// surprise. Paragraphs are kept short on purpose: past one paragraph the text
// carries almost no signal, so a model finetuned at a longer context learns to
// attend locally and its loss stays flat when evaluated longer still.
inline std::string generate_text(uint64_t seed, size_t n_bytes) {
  static constexpr std::array<std::array<std::string_view, 8>, 8> topics = {{
      {"river", "stone", "bridge", "water", "current", "bank", "ferry", "flood"},
      {"engine", "piston", "valve", "gear", "torque", "shaft", "clutch", "flywheel"},
      {"garden", "seed", "root", "bloom", "soil", "hedge", "orchard", "trellis"},
      {"ledger", "account", "balance", "credit", "audit", "invoice", "margin", "payment"},
      {"violin", "melody", "chord", "tempo", "rehearsal", "concert", "quartet", "score"},
      {"harbor", "vessel", "cargo", "anchor", "tide", "mooring", "quay", "manifest"},
      {"glacier", "summit", "ridge", "valley", "moraine", "ascent", "basecamp", "crevasse"},
      {"archive", "folio", "scribe", "parchment", "index", "catalog", "binding", "shelf"},
  }};
  static constexpr std::array<std::string_view, 40> fillers = {
      "the", "a",    "of",    "and",  "to",      "in",    "was",   "that",    "its",   "near",
      "with", "from", "over",  "under", "beside", "after", "before", "slowly", "often", "again",
      "held", "kept", "moved", "stood", "turned", "seemed", "became", "carried", "showed", "left",
      "small", "old",  "grey",  "quiet", "heavy",  "worn",  "bright", "narrow",  "broad", "still"};
  static constexpr std::array<std::string_view, 12> adjectives = {
      "worn", "grey", "quiet", "broad", "narrow", "old",
      "pale", "low",  "late",  "far",   "dark",   "plain"};

  Rng rng(seed);
  std::string out;
  out.reserve(n_bytes + 192);
  std::string subject;
  const auto append_word = [&out](std::string_view word, bool sentence_start) {
    if (sentence_start) {
      out.push_back(static_cast<char>(word[0] - 'a' + 'A'));
      out.append(word.substr(1));
    } else {
      out.push_back(' ');
      out.append(word);
    }
  };
  while (out.size() < n_bytes) {
    const auto& topic_a = topics[rng.uniform_int(topics.size())];
    const auto& topic_b = topics[rng.uniform_int(topics.size())];
    subject = "the ";
    subject += adjectives[rng.uniform_int(adjectives.size())];
    subject += ' ';
    subject += topic_a[rng.uniform_int(topic_a.size())];
    const uint64_t sentences = 2;
    for (uint64_t s = 0; s < sentences && out.size() < n_bytes; ++s) {
      const uint64_t words = 5 + rng.uniform_int(4);
      for (uint64_t w = 0; w < words; ++w) {
        const double roll = rng.uniform();
        if (roll < 0.16 && w + 3 <= words) {
          append_word(subject, w == 0);
          w += 2;  // the phrase fills three word slots
          continue;
        }
        std::string_view word;
        if (roll < 0.32) word = topic_a[rng.uniform_int(topic_a.size())];
        else if (roll < 0.46) word = topic_b[rng.uniform_int(topic_b.size())];
        else word = fillers[rng.uniform_int(fillers.size())];
        append_word(word, w == 0);
      }
      out.append(". ");
    }
    out.pop_back();  // trailing space after the last sentence
    out.append("\n\n");
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace inat
