// SPDX-License-Identifier: Apache-2.0
//
// External command adapters (encoder, decoder, post-processor).
//
// A command template is a whitespace-separated argument list. Tokens of the
// form {name} are placeholders; a token consisting only of a placeholder may
// expand to several arguments (used for effect lists). Commands run without a
// shell.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defectkit/mp3.hpp"
#include "defectkit/wave.hpp"

namespace defectkit {

class CommandTemplate {
 public:
  CommandTemplate() = default;
  explicit CommandTemplate(const std::string& text);

  static CommandTemplate parse(const std::string& text) { return CommandTemplate(text); }

  std::vector<std::string> expand(const std::map<std::string, std::vector<std::string>>& vars) const;
  const std::string& text() const { return text_; }
  bool empty() const { return tokens_.empty(); }
  const std::string& program() const;

 private:
  std::string text_;
  std::vector<std::string> tokens_;
};

struct ProcessResult {
  int exit_status = -1;
  std::string stderr_text;
};

/// Runs argv[0] (looked up on PATH) and waits. Throws AdapterError when the
/// program cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv);

/// Scoped temporary directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "defectkit");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct AdapterConfig {
  CommandTemplate command;
  CommandTemplate probe;  ///< e.g. "ffmpeg -version"; empty skips probing
};

/// Runs the probe command; throws AdapterError with an actionable message on failure.
void probe_adapter(const AdapterConfig& cfg, const std::string& role);

/// Default templates, built around ffmpeg. The program token "ffmpeg" is
/// replaced by $DEFECTKIT_FFMPEG when set; $DEFECTKIT_ENCODER,
/// $DEFECTKIT_DECODER and $DEFECTKIT_POSTPROCESSOR override whole templates.
AdapterConfig default_encoder();
AdapterConfig default_decoder();
AdapterConfig default_postprocessor();

/// Applies the environment overrides described above to a template string.
std::string apply_env_override(const std::string& role, const std::string& text);

/// Decoder that writes the stream to a temp file and runs {in} -> {out} (WAV).
class CommandDecoder final : public mp3::Decoder {
 public:
  explicit CommandDecoder(AdapterConfig cfg) : cfg_(std::move(cfg)) {}
  std::optional<Waveform> decode(mp3::ByteView mp3) const override;

 private:
  AdapterConfig cfg_;
};

/// Encoder producing 128 kbps CBR mono MP3 from a WAV file.
class CommandEncoder {
 public:
  explicit CommandEncoder(AdapterConfig cfg) : cfg_(std::move(cfg)) {}
  mp3::Bytes encode(const Waveform& w) const;

 private:
  AdapterConfig cfg_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace defectkit
