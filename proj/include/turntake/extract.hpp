#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "turntake/core.hpp"
#include "turntake/hash.hpp"
#include "turntake/text.hpp"

namespace turntake::extract {

// Whole-word, case-insensitive match of any alias (display name included).
inline bool mentioned_in(std::string_view text, const SpeakerId& speaker) {
  if (text::contains_word(text, speaker.display_name)) return true;
  return std::any_of(speaker.aliases.begin(), speaker.aliases.end(),
                     [&](const std::string& a) { return text::contains_word(text, a); });
}

inline bool annotated_addressee(const Utterance& u, const SpeakerId& target) {
  return u.addressees && std::find(u.addressees->begin(), u.addressees->end(), target.id) != u.addressees->end();
}

// Referenced at all: by name in the text or by addressee annotation.
inline bool referenced(const Utterance& current, const SpeakerId& target) {
  return annotated_addressee(current, target) || mentioned_in(current.text, target);
}

// Speak-side: an addressee annotation, when present, decides I1 vs I2.
// Silent-side: any reference (annotation or name in text) makes it S2.
inline Category assign_category(const Utterance& current, const SpeakerId& target, Decision label) {
  if (label == Decision::Speak) {
    const bool addressed = current.addressees ? annotated_addressee(current, target) : mentioned_in(current.text, target);
    return addressed ? Category::I1 : Category::I2;
  }
  return referenced(current, target) ? Category::S2 : Category::S1;
}

inline std::string make_dp_id(std::string_view conv_id, std::size_t boundary_t, std::string_view target) {
  const std::string t = std::to_string(boundary_t);
  return content_hash({conv_id, t, target});
}

// One point per (boundary t, roster member k != speaker(u_t)) for every t
// with a predecessor and a successor. Label = Speak iff k speaks u_{t+1}.
inline std::vector<DecisionPoint> extract_decision_points(const Conversation& conv) {
  require_valid(conv);
  std::vector<DecisionPoint> out;
  const auto& us = conv.utterances;
  if (us.size() < 3) return out;
  for (std::size_t t = 1; t + 1 < us.size(); ++t) {
    const auto& current = us[t];
    for (const auto& k : conv.roster) {
      if (k.id == current.speaker) continue;
      const Decision label = us[t + 1].speaker == k.id ? Decision::Speak : Decision::Silent;
      out.emplace_back(make_dp_id(conv.conv_id, t, k.id), conv.conv_id, t, k.id, label,
                       assign_category(current, k, label));
    }
  }
  return out;
}

// Conversations are processed in conv_id order.
inline std::vector<DecisionPoint> extract_all(const std::vector<Conversation>& convs) {
  std::vector<const Conversation*> sorted;
  for (const auto& c : convs) sorted.push_back(&c);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->conv_id < b->conv_id; });
  std::vector<DecisionPoint> out;
  for (const auto* c : sorted) {
    auto pts = extract_decision_points(*c);
    out.insert(out.end(), std::make_move_iterator(pts.begin()), std::make_move_iterator(pts.end()));
  }
  return out;
}

}  // namespace turntake::extract
