// SPDX-License-Identifier: Apache-2.0

#include "defectkit/adapter.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "defectkit/error.hpp"

extern char** environ;

namespace defectkit {

CommandTemplate::CommandTemplate(const std::string& text) : text_(text) {
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) tokens_.push_back(tok);
}

const std::string& CommandTemplate::program() const {
  static const std::string empty;
  return tokens_.empty() ? empty : tokens_.front();
}

std::vector<std::string> CommandTemplate::expand(
    const std::map<std::string, std::vector<std::string>>& vars) const {
  std::vector<std::string> out;
  for (const auto& tok : tokens_) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      const auto it = vars.find(tok.substr(1, tok.size() - 2));
      if (it != vars.end()) {
        out.insert(out.end(), it->second.begin(), it->second.end());
        continue;
      }
    }
    std::string s = tok;
    for (const auto& [name, values] : vars) {
      if (values.size() != 1) continue;
      const std::string key = "{" + name + "}";
      for (auto p = s.find(key); p != std::string::npos; p = s.find(key, p + values[0].size())) {
        s.replace(p, key.size(), values[0]);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

ProcessResult run_process(const std::vector<std::string>& argv) {
  if (argv.empty()) throw AdapterError("adapter", "empty command");
  TempDir scratch("defectkit-proc");
  const auto err_path = scratch.path() / "stderr.txt";

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0600);

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw AdapterError("adapter", "cannot start '" + argv[0] + "': " + std::strerror(rc));
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw AdapterError("adapter", "waitpid failed for '" + argv[0] + "'");
  }
  ProcessResult result;
  result.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  std::ifstream err(err_path);
  result.stderr_text.assign(std::istreambuf_iterator<char>(err), std::istreambuf_iterator<char>());
  if (result.exit_status == 127 && result.stderr_text.empty()) {
    throw AdapterError("adapter", "cannot execute '" + argv[0] + "'");
  }
  return result;
}

TempDir::TempDir(const std::string& prefix) {
  std::string templ = (std::filesystem::temp_directory_path() / (prefix + "-XXXXXX")).string();
  if (mkdtemp(templ.data()) == nullptr) {
    throw AdapterError("adapter", "cannot create temporary directory: " + std::string(std::strerror(errno)));
  }
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void probe_adapter(const AdapterConfig& cfg, const std::string& role) {
  if (cfg.command.empty()) {
    throw AdapterError("adapter", role + " command is not configured");
  }
  if (cfg.probe.empty()) return;
  ProcessResult r;
  try {
    r = run_process(cfg.probe.expand({}));
  } catch (const AdapterError& e) {
    throw AdapterError("adapter", role + " probe failed (" + std::string(e.what()) +
                                      "); install the tool or set DEFECTKIT_" + role +
                                      " / DEFECTKIT_FFMPEG to a working command");
  }
  if (r.exit_status != 0) {
    throw AdapterError("adapter", role + " probe '" + cfg.probe.text() + "' exited with status " +
                                      std::to_string(r.exit_status));
  }
}

std::string apply_env_override(const std::string& role, const std::string& text) {
  if (const char* full = std::getenv(("DEFECTKIT_" + role).c_str()); full && *full) return full;
  const char* ffmpeg = std::getenv("DEFECTKIT_FFMPEG");
  if (ffmpeg && *ffmpeg && text.rfind("ffmpeg ", 0) == 0) return std::string(ffmpeg) + text.substr(6);
  return text;
}

namespace {

AdapterConfig make_default(const std::string& role, const std::string& command) {
  AdapterConfig cfg;
  cfg.command = CommandTemplate(apply_env_override(role, command));
  cfg.probe = CommandTemplate(cfg.command.program() + " -version");
  return cfg;
}

}  // namespace

AdapterConfig default_encoder() {
  return make_default("ENCODER",
                      "ffmpeg -nostdin -v error -y -i {in} -ac 1 -ar 44100 -c:a libmp3lame -b:a 128k {out}");
}

AdapterConfig default_decoder() {
  return make_default("DECODER", "ffmpeg -nostdin -v error -y -i {in} -f wav -c:a pcm_f32le {out}");
}

AdapterConfig default_postprocessor() {
  return make_default("POSTPROCESSOR",
                      "ffmpeg -nostdin -v error -y -i {in} -af {effects} -c:a pcm_f32le {out}");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("io", "cannot write " + path.string());
}

std::optional<Waveform> CommandDecoder::decode(mp3::ByteView mp3) const {
  TempDir dir("defectkit-dec");
  const auto in = dir.path() / "in.mp3";
  const auto out = dir.path() / "out.wav";
  write_file_bytes(in, mp3);
  const auto r = run_process(cfg_.command.expand({{"in", {in.string()}}, {"out", {out.string()}}}));
  if (r.exit_status != 0 || !std::filesystem::exists(out)) return std::nullopt;
  try {
    auto w = read_audio(out);
    if (w.samples.empty()) return std::nullopt;
    return w;
  } catch (const WavError&) {
    return std::nullopt;
  }
}

mp3::Bytes CommandEncoder::encode(const Waveform& w) const {
  TempDir dir("defectkit-enc");
  const auto in = dir.path() / "in.wav";
  const auto out = dir.path() / "out.mp3";
  write_audio(w, in, SampleFormat::Float32);
  const auto r = run_process(cfg_.command.expand({{"in", {in.string()}}, {"out", {out.string()}}}));
  if (r.exit_status != 0 || !std::filesystem::exists(out)) {
    throw AdapterError("adapter", "encoder failed with status " + std::to_string(r.exit_status) + ": " +
                                      r.stderr_text);
  }
  return read_file_bytes(out);
}

}  // namespace defectkit
