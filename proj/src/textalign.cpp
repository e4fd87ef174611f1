#include "pbl/textalign.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>

#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

Label to_label(Mark mark) { return mark == Mark::common ? Label::common : Label::different; }

std::string_view to_string(Label label) {
  switch (label) {
    case Label::undecided: return "undecided";
    case Label::common: return "common";
    case Label::different: return "different";
  }
  return "?";
}

HashingTokenizer::HashingTokenizer(int buckets) : buckets_(buckets) {
  if (buckets_ < 1) throw ConfigError("tokenizer needs at least one bucket");
}

std::string HashingTokenizer::name() const { return "hashing:" + std::to_string(buckets_); }

std::vector<TokenPiece> HashingTokenizer::encode(std::string_view text) const {
  std::vector<TokenPiece> out;
  auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; };
  std::size_t i = 0;
  while (i < text.size()) {
    auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (is_word(c))
      while (j < text.size() && is_word(static_cast<unsigned char>(text[j]))) ++j;
    std::string piece = to_lower(text.substr(i, j - i));
    int id = kReserved + static_cast<int>(fnv1a64(piece) % static_cast<std::uint64_t>(buckets_));
    out.push_back({id, i, j});
    i = j;
  }
  return out;
}

int TokenizedDialogue::utterance_of(int token) const {
  auto it = std::upper_bound(spans.begin(), spans.end(), token,
                             [](int t, const TokenSpan& s) { return t < s.end; });
  if (it == spans.end() || !it->contains(token))
    throw ContractError("token " + std::to_string(token) + " outside the dialogue");
  return static_cast<int>(it - spans.begin());
}

void append_utterance(TokenizedDialogue& dialogue, bool from_self, std::string_view text,
                      const Tokenizer& tokenizer) {
  TokenSpan span;
  span.begin = dialogue.length();
  dialogue.tokens.push_back(from_self ? tokenizer.self_marker_id() : tokenizer.partner_marker_id());
  dialogue.token_text.push_back(from_self ? "[CLS]" : "[SEP]");
  for (const auto& piece : tokenizer.encode(text)) {
    dialogue.tokens.push_back(piece.id);
    dialogue.token_text.emplace_back(text.substr(piece.begin, piece.end - piece.begin));
  }
  span.end = dialogue.length();
  dialogue.spans.push_back(span);
  dialogue.marker_positions.push_back(span.begin);
  dialogue.from_self.push_back(from_self);
}

TokenizedDialogue tokenize_utterances(std::span<const Utterance> utterances,
                                      std::string_view self_id, const Tokenizer& tokenizer) {
  if (utterances.empty()) throw AlignmentError("cannot align an empty dialogue");
  TokenizedDialogue dialogue;
  for (const auto& u : utterances) append_utterance(dialogue, u.speaker == self_id, u.text, tokenizer);
  return dialogue;
}

TokenizedDialogue tokenize_and_align(const PerspectiveInstance& instance, const Tokenizer& tokenizer) {
  return tokenize_utterances(instance.utterances(), instance.self_id(), tokenizer);
}

int flip_token(const TokenizedDialogue& dialogue, int position) {
  if (position <= 0) return 0;
  if (position > dialogue.num_utterances()) return dialogue.length();
  return dialogue.spans[static_cast<std::size_t>(position - 1)].end;
}

LabelBuild build_label_sequences(std::span<const int, kTargetsPerPlayer> targets,
                                 std::span<const MarkAction> marks,
                                 const TokenizedDialogue& dialogue) {
  const int T = dialogue.length();
  if (T == 0) throw AlignmentError("cannot label an empty dialogue");
  LabelBuild out;
  for (std::size_t s = 0; s < kTargetsPerPlayer; ++s) {
    const int image = targets[s];
    struct Flip {
      int token;
      Label label;
    };
    std::vector<Flip> flips;
    for (const auto& m : marks) {
      if (m.image_index != image) continue;
      int token = flip_token(dialogue, m.position);
      if (token >= T) {
        token = T - 1;
        out.clamped_images.push_back(image);
      }
      flips.push_back({token, to_label(m.mark)});
    }
    std::stable_sort(flips.begin(), flips.end(),
                     [](const Flip& a, const Flip& b) { return a.token < b.token; });

    LabelSequence& seq = out.sequences[s];
    seq.image_index = image;
    seq.labels.resize(static_cast<std::size_t>(T));
    Label current = Label::undecided;
    std::size_t next = 0;
    for (int t = 0; t < T; ++t) {
      while (next < flips.size() && flips[next].token == t) current = flips[next++].label;
      seq.labels[static_cast<std::size_t>(t)] = current;
    }
  }
  return out;
}

LabelBuild build_label_sequences(const PerspectiveInstance& instance,
                                 const TokenizedDialogue& dialogue) {
  auto marks = instance.own_marks();
  return build_label_sequences(std::span<const int, kTargetsPerPlayer>(instance.targets()), marks,
                               dialogue);
}

std::map<int, Mark> end_of_dialogue_labels(std::span<const LabelSequence> sequences) {
  std::map<int, Mark> out;
  for (const auto& seq : sequences) {
    if (seq.labels.empty() || seq.labels.back() == Label::undecided)
      throw IntegrityError("target image " + std::to_string(seq.image_index) +
                           " is undecided at the end of the dialogue");
    out[seq.image_index] = seq.labels.back() == Label::common ? Mark::common : Mark::different;
  }
  return out;
}

std::string format_trace(const TokenizedDialogue& dialogue, std::span<const LabelSequence> labels) {
  std::ostringstream out;
  out << std::left << std::setw(6) << "t" << std::setw(5) << "utt" << std::setw(6) << "who"
      << std::setw(16) << "token";
  for (const auto& seq : labels) out << std::setw(11) << ("img" + std::to_string(seq.image_index));
  out << '\n';
  for (int t = 0; t < dialogue.length(); ++t) {
    int k = dialogue.utterance_of(t);
    out << std::setw(6) << t << std::setw(5) << k
        << std::setw(6) << (dialogue.from_self[static_cast<std::size_t>(k)] ? "self" : "peer")
        << std::setw(16) << dialogue.token_text[static_cast<std::size_t>(t)];
    for (const auto& seq : labels) out << std::setw(11) << to_string(seq.labels[static_cast<std::size_t>(t)]);
    out << '\n';
  }
  return out.str();
}

}  // namespace pbl
