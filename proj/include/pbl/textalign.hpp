#pragma once

// Dialogue tokenization with speaker markers and dense per-token labels.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pbl/gamedata.hpp"

namespace pbl {

enum class Label : std::uint8_t { undecided = 0, common = 1, different = 2 };
inline constexpr int kNumLabels = 3;

Label to_label(Mark mark);
std::string_view to_string(Label label);

struct TokenPiece {
  int id = 0;
  std::size_t begin = 0;  // byte offsets into the source text
  std::size_t end = 0;
};

// Deterministic text -> token id mapping with lossless byte offsets. Must be
// safe for concurrent const use.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenPiece> encode(std::string_view text) const = 0;
  virtual int vocab_size() const = 0;
  virtual int pad_id() const = 0;
  virtual int self_marker_id() const = 0;     // the [CLS] role
  virtual int partner_marker_id() const = 0;  // the [SEP] role
  virtual std::string name() const = 0;
};

// Lowercased words and single punctuation characters hashed into a fixed
// number of buckets; ids 0..3 are pad, self marker, partner marker, unknown.
class HashingTokenizer final : public Tokenizer {
 public:
  explicit HashingTokenizer(int buckets = 4096);
  std::vector<TokenPiece> encode(std::string_view text) const override;
  int vocab_size() const override { return kReserved + buckets_; }
  int pad_id() const override { return 0; }
  int self_marker_id() const override { return 1; }
  int partner_marker_id() const override { return 2; }
  std::string name() const override;

 private:
  static constexpr int kReserved = 4;
  int buckets_;
};

// Half-open token range [begin, end).
struct TokenSpan {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int t) const { return t >= begin && t < end; }
  bool operator==(const TokenSpan&) const = default;
};

struct TokenizedDialogue {
  std::vector<int> tokens;
  std::vector<std::string> token_text;
  std::vector<TokenSpan> spans;          // one per utterance, contiguous
  std::vector<int> marker_positions;     // == spans[k].begin
  std::vector<bool> from_self;

  int length() const { return static_cast<int>(tokens.size()); }
  int num_utterances() const { return static_cast<int>(spans.size()); }
  int utterance_of(int token) const;
};

TokenizedDialogue tokenize_utterances(std::span<const Utterance> utterances,
                                      std::string_view self_id, const Tokenizer& tokenizer);
TokenizedDialogue tokenize_and_align(const PerspectiveInstance& instance, const Tokenizer& tokenizer);
void append_utterance(TokenizedDialogue& dialogue, bool from_self, std::string_view text,
                      const Tokenizer& tokenizer);

struct LabelSequence {
  int image_index = 0;
  std::vector<Label> labels;
};

struct LabelBuild {
  std::array<LabelSequence, kTargetsPerPlayer> sequences;
  std::vector<int> clamped_images;  // marks whose flip token fell past the end
};

// First token at which a mark made after `position` utterances is
// observable, before clamping; equals dialogue.length() for a mark after
// the final utterance.
int flip_token(const TokenizedDialogue& dialogue, int position);

LabelBuild build_label_sequences(std::span<const int, kTargetsPerPlayer> targets,
                                 std::span<const MarkAction> marks,
                                 const TokenizedDialogue& dialogue);
LabelBuild build_label_sequences(const PerspectiveInstance& instance,
                                 const TokenizedDialogue& dialogue);

// Label at the final token for each target image; throws IntegrityError if
// any target is still undecided.
std::map<int, Mark> end_of_dialogue_labels(std::span<const LabelSequence> sequences);

// Column dump: t, utterance, speaker, token, one label column per target.
std::string format_trace(const TokenizedDialogue& dialogue, std::span<const LabelSequence> labels);

}  // namespace pbl
