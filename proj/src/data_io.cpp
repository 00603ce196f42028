#include "svgpcr/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace svgpcr {

namespace {

constexpr char kFeatureMagic[9] = "SVGPFEAT";
constexpr char kCheckpointMagic[9] = "SVGPCRCK";
constexpr std::uint32_t kFormatVersion = 1;

std::string read_entire_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<std::string> read_nonempty_lines(const std::string& path) {
  const std::string blob = read_entire_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (char c : blob) {
    if (c == '\n') {
      if (!trim(cur).empty()) lines.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) lines.push_back(cur);
  return lines;
}

bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size() && errno != ERANGE;
}

bool parse_int64(const std::string& tok, std::int64_t& out) {
  if (tok.empty()) return false;
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) return false;
  out = v;
  return true;
}

bool line_is_numeric(const std::string& line) {
  double ignored;
  for (const std::string& tok : split_csv_line(line)) {
    if (!parse_double(tok, ignored)) return false;
  }
  return true;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- little binary stream with a running CRC32 -----------------------------

class BinaryWriter {
 public:
  void raw(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  template <typename T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    raw(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  void matrix(const Eigen::MatrixXd& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void vec(const Eigen::VectorXd& v) {
    pod<std::int64_t>(v.size());
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void idvec(const std::vector<std::int64_t>& v) {
    pod<std::int64_t>(static_cast<std::int64_t>(v.size()));
    raw(v.data(), sizeof(std::int64_t) * v.size());
  }
  void intvec(const std::vector<int>& v) {
    pod<std::int64_t>(static_cast<std::int64_t>(v.size()));
    for (int x : v) pod<std::int32_t>(x);
  }

  void write_file(const std::string& path, const char* magic) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(magic, 8);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()),
              static_cast<uInt>(buf_.size())));
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!out) throw DataError("write failed: " + path);
  }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  // Validates magic and the trailing CRC32 over everything between them.
  BinaryReader(const std::string& path, const char* magic) : blob_(read_entire_file(path)) {
    if (blob_.size() < 12 || std::memcmp(blob_.data(), magic, 8) != 0) {
      throw DataError("unrecognized file format: " + path);
    }
    const std::size_t payload = blob_.size() - 12;
    std::uint32_t stored;
    std::memcpy(&stored, blob_.data() + 8 + payload, 4);
    const std::uint32_t computed = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob_.data() + 8),
              static_cast<uInt>(payload)));
    if (stored != computed) throw DataError("integrity check failed (corrupt or truncated): " + path);
    pos_ = 8;
    end_ = 8 + payload;
  }

  void raw(void* data, std::size_t n) {
    if (pos_ + n > end_) throw DataError("truncated payload");
    std::memcpy(data, blob_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (pos_ + n > end_) throw DataError("truncated payload");
    std::string s(blob_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd matrix() {
    const auto rows = pod<std::int64_t>();
    const auto cols = pod<std::int64_t>();
    if (rows < 0 || cols < 0) throw DataError("negative matrix shape");
    Eigen::MatrixXd m(rows, cols);
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  Eigen::VectorXd vec() {
    const auto n = pod<std::int64_t>();
    if (n < 0) throw DataError("negative vector length");
    Eigen::VectorXd v(n);
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(n));
    return v;
  }
  std::vector<std::int64_t> idvec() {
    const auto n = pod<std::int64_t>();
    if (n < 0) throw DataError("negative vector length");
    std::vector<std::int64_t> v(static_cast<std::size_t>(n));
    raw(v.data(), sizeof(std::int64_t) * v.size());
    return v;
  }
  std::vector<int> intvec() {
    const auto n = pod<std::int64_t>();
    if (n < 0) throw DataError("negative vector length");
    std::vector<int> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = pod<std::int32_t>();
    return v;
  }

 private:
  std::string blob_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace

// --- features ---------------------------------------------------------------

Eigen::MatrixXd load_features_csv(const std::string& path, HeaderMode header) {
  const std::vector<std::string> lines = read_nonempty_lines(path);
  if (lines.empty()) throw DataError("empty dataset: " + path);
  std::size_t first = 0;
  if (header == HeaderMode::Present) {
    first = 1;
  } else if (header == HeaderMode::Auto && !line_is_numeric(lines[0])) {
    first = 1;
  }
  if (first >= lines.size()) throw DataError("empty dataset (header only): " + path);

  const std::size_t D = split_csv_line(lines[first]).size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(lines.size() - first), static_cast<Eigen::Index>(D));
  for (std::size_t r = first; r < lines.size(); ++r) {
    const std::vector<std::string> toks = split_csv_line(lines[r]);
    if (toks.size() != D) {
      throw DataError("row " + std::to_string(r + 1) + " has " + std::to_string(toks.size()) +
                      " columns, expected " + std::to_string(D) + ": " + path);
    }
    for (std::size_t c = 0; c < D; ++c) {
      double v;
      if (!parse_double(toks[c], v)) {
        throw DataError("cannot parse '" + toks[c] + "' at row " + std::to_string(r + 1) +
                        ", column " + std::to_string(c + 1) + ": " + path);
      }
      if (!std::isfinite(v)) {
        throw DataError("non-finite value at row " + std::to_string(r + 1) + ", column " +
                        std::to_string(c + 1) + ": " + path);
      }
      X(static_cast<Eigen::Index>(r - first), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return X;
}

Eigen::MatrixXd load_features_binary(const std::string& path) {
  BinaryReader in(path, kFeatureMagic);
  const auto version = in.pod<std::uint32_t>();
  if (version != kFormatVersion) {
    throw DataError("feature file version " + std::to_string(version) + " not supported: " + path);
  }
  const auto N = in.pod<std::int64_t>();
  const auto D = in.pod<std::int64_t>();
  if (N < 1 || D < 1) throw DataError("empty dataset: " + path);
  Eigen::MatrixXd X(N, D);
  // stored row-major
  for (std::int64_t r = 0; r < N; ++r) {
    for (std::int64_t c = 0; c < D; ++c) X(r, c) = in.pod<double>();
  }
  if (!X.allFinite()) throw DataError("non-finite feature values: " + path);
  return X;
}

Eigen::MatrixXd load_features(const std::string& path, HeaderMode header) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot open file: " + path);
    char magic[8] = {};
    probe.read(magic, 8);
    if (probe.gcount() == 8 && std::memcmp(magic, kFeatureMagic, 8) == 0) {
      return load_features_binary(path);
    }
  }
  return load_features_csv(path, header);
}

void save_features_csv(const std::string& path, const Eigen::MatrixXd& X) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (Eigen::Index c = 0; c < X.cols(); ++c) out << (c ? "," : "") << "x" << c;
  out << "\n";
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      out << (c ? "," : "") << format_double(X(r, c));
    }
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

void save_features_binary(const std::string& path, const Eigen::MatrixXd& X) {
  BinaryWriter out;
  out.pod<std::uint32_t>(kFormatVersion);
  out.pod<std::int64_t>(X.rows());
  out.pod<std::int64_t>(X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) out.pod<double>(X(r, c));
  }
  out.write_file(path, kFeatureMagic);
}

// --- annotations and labels --------------------------------------------------

AnnotationSet load_annotations(const std::string& path, std::int64_t num_instances,
                               int num_classes) {
  const std::vector<std::string> lines = read_nonempty_lines(path);
  if (lines.empty()) throw DataError("empty annotation file: " + path);
  std::size_t first = line_is_numeric(lines[0]) ? 0 : 1;
  if (first >= lines.size()) throw DataError("annotation file has no rows: " + path);

  struct Row {
    std::int64_t instance, annotator, label;
  };
  std::vector<Row> rows;
  rows.reserve(lines.size() - first);
  int max_label = -1;
  for (std::size_t r = first; r < lines.size(); ++r) {
    const std::vector<std::string> toks = split_csv_line(lines[r]);
    if (toks.size() != 3) {
      throw DataError("row " + std::to_string(r + 1) + " must have 3 columns: " + path);
    }
    Row row;
    if (!parse_int64(toks[0], row.instance) || !parse_int64(toks[1], row.annotator) ||
        !parse_int64(toks[2], row.label)) {
      throw DataError("non-integer value at row " + std::to_string(r + 1) + ": " + path);
    }
    if (row.instance < 0 || row.instance >= num_instances) {
      throw DataError("instance_id " + std::to_string(row.instance) + " at row " +
                      std::to_string(r + 1) + " is outside [0, " + std::to_string(num_instances) +
                      "): " + path);
    }
    if (row.label < 0) {
      throw DataError("negative label at row " + std::to_string(r + 1) + ": " + path);
    }
    max_label = std::max(max_label, static_cast<int>(row.label));
    rows.push_back(row);
  }
  if (num_classes < 0) {
    num_classes = std::max(2, max_label + 1);
  } else if (max_label >= num_classes) {
    throw DataError("label " + std::to_string(max_label) + " exceeds num_classes " +
                    std::to_string(num_classes) + ": " + path);
  }

  AnnotationSet ann(num_instances, num_classes);
  std::map<std::int64_t, int> dense;  // first-appearance order
  for (const Row& row : rows) {
    auto it = dense.find(row.annotator);
    if (it == dense.end()) {
      it = dense.emplace(row.annotator, static_cast<int>(ann.external_annotator_ids().size()))
               .first;
      ann.external_annotator_ids().push_back(row.annotator);
    }
    ann.add(row.instance, it->second, static_cast<int>(row.label));
  }
  return ann;
}

void save_annotations_csv(const std::string& path, const AnnotationSet& ann) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << "instance_id,annotator_id,label\n";
  const auto& ext = ann.external_annotator_ids();
  for (std::int64_t n = 0; n < ann.num_instances(); ++n) {
    for (const AnnotationRecord& r : ann.records(n)) {
      const std::int64_t ext_id =
          r.annotator < static_cast<int>(ext.size()) ? ext[r.annotator] : r.annotator;
      for (int c = 0; c < r.count; ++c) {
        out << n << "," << ext_id << "," << r.label << "\n";
      }
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<int> load_labels(const std::string& path, std::int64_t expected_rows) {
  const std::vector<std::string> lines = read_nonempty_lines(path);
  if (lines.empty()) throw DataError("empty label file: " + path);
  std::size_t first = line_is_numeric(lines[0]) ? 0 : 1;
  std::vector<int> labels;
  labels.reserve(lines.size() - first);
  for (std::size_t r = first; r < lines.size(); ++r) {
    std::int64_t v;
    if (!parse_int64(trim(lines[r]), v) || v < 0) {
      throw DataError("invalid label at row " + std::to_string(r + 1) + ": " + path);
    }
    labels.push_back(static_cast<int>(v));
  }
  if (expected_rows >= 0 && static_cast<std::int64_t>(labels.size()) != expected_rows) {
    throw DataError("label file has " + std::to_string(labels.size()) + " rows, expected " +
                    std::to_string(expected_rows) + ": " + path);
  }
  return labels;
}

void save_labels_csv(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << "label\n";
  for (int v : labels) out << v << "\n";
  if (!out) throw DataError("write failed: " + path);
}

void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                     const std::vector<std::string>& column_names) {
  if (static_cast<Eigen::Index>(column_names.size()) != m.cols()) {
    throw std::invalid_argument("save_matrix_csv: header size mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (std::size_t c = 0; c < column_names.size(); ++c) {
    out << (c ? "," : "") << column_names[c];
  }
  out << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out << (c ? "," : "") << format_double(m(r, c));
    }
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

// --- sampler ------------------------------------------------------------------

MinibatchSampler::MinibatchSampler(std::int64_t n, int batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n < 1) throw std::invalid_argument("sampler: need at least one instance");
  if (batch_size < 1 || batch_size > n) {
    throw std::invalid_argument("sampler: batch size must lie in [1, n]");
  }
  permutation_.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) permutation_[static_cast<std::size_t>(i)] = i;
  shuffle_inplace(permutation_, rng_);
}

std::vector<std::int64_t> MinibatchSampler::next() {
  if (cursor_ >= n_) {
    shuffle_inplace(permutation_, rng_);
    cursor_ = 0;
  }
  const std::int64_t take = std::min<std::int64_t>(batch_size_, n_ - cursor_);
  std::vector<std::int64_t> batch(permutation_.begin() + cursor_,
                                  permutation_.begin() + cursor_ + take);
  cursor_ += take;
  return batch;
}

std::int64_t MinibatchSampler::steps_per_epoch() const {
  return (n_ + batch_size_ - 1) / batch_size_;
}

SamplerState MinibatchSampler::state() const {
  return {permutation_, cursor_, serialize_rng(rng_)};
}

void MinibatchSampler::restore(const SamplerState& s) {
  if (static_cast<std::int64_t>(s.permutation.size()) != n_) {
    throw std::invalid_argument("sampler: state population mismatch");
  }
  permutation_ = s.permutation;
  cursor_ = s.cursor;
  rng_ = deserialize_rng(s.rng);
}

// --- checkpoint -----------------------------------------------------------------

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  BinaryWriter out;
  out.pod<std::uint32_t>(kFormatVersion);

  const TrainConfig& c = ckpt.config;
  out.pod<std::int32_t>(c.minibatch_size);
  out.pod<double>(c.learning_rate);
  out.pod<double>(c.adam_beta1);
  out.pod<double>(c.adam_beta2);
  out.pod<double>(c.adam_eps);
  out.pod<std::int32_t>(c.epochs);
  out.pod<std::uint64_t>(c.seed);
  out.pod<std::int32_t>(c.quadrature_points);
  out.pod<double>(c.jitter);
  out.pod<std::int32_t>(c.num_inducing);
  out.pod<std::int32_t>(c.eval_every);
  out.pod<double>(c.robustmax_epsilon);
  out.pod<double>(c.prior_diag_boost);

  out.matrix(ckpt.gp.inducing_inputs);
  out.pod<double>(ckpt.gp.kernel.log_variance);
  out.pod<double>(ckpt.gp.kernel.log_lengthscale);
  out.matrix(ckpt.gp.mean);
  out.pod<std::int32_t>(ckpt.gp.num_classes());
  for (int k = 0; k < ckpt.gp.num_classes(); ++k) out.matrix(ckpt.gp.scale_raw[k]);
  out.pod<double>(ckpt.gp.jitter);

  out.pod<std::int32_t>(ckpt.crowd.num_annotators());
  out.pod<std::int32_t>(ckpt.crowd.num_classes());
  out.matrix(ckpt.crowd.prior());
  for (int a = 0; a < ckpt.crowd.num_annotators(); ++a) out.matrix(ckpt.crowd.log_alpha(a));

  out.idvec(ckpt.annotator_external_ids);
  out.matrix(ckpt.responsibilities);
  out.intvec(ckpt.gold_labels);

  out.pod<std::int64_t>(ckpt.adam.step);
  out.vec(ckpt.adam.first_moment);
  out.vec(ckpt.adam.second_moment);

  out.idvec(ckpt.sampler.permutation);
  out.pod<std::int64_t>(ckpt.sampler.cursor);
  out.str(ckpt.sampler.rng);
  out.pod<std::int64_t>(ckpt.steps_taken);

  out.write_file(path, kCheckpointMagic);
}

Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader in(path, kCheckpointMagic);
  const auto version = in.pod<std::uint32_t>();
  if (version != kFormatVersion) {
    throw DataError("checkpoint version " + std::to_string(version) +
                    " is not readable by this build (expected " +
                    std::to_string(kFormatVersion) + "): " + path);
  }
  Checkpoint ckpt;
  TrainConfig& c = ckpt.config;
  c.minibatch_size = in.pod<std::int32_t>();
  c.learning_rate = in.pod<double>();
  c.adam_beta1 = in.pod<double>();
  c.adam_beta2 = in.pod<double>();
  c.adam_eps = in.pod<double>();
  c.epochs = in.pod<std::int32_t>();
  c.seed = in.pod<std::uint64_t>();
  c.quadrature_points = in.pod<std::int32_t>();
  c.jitter = in.pod<double>();
  c.num_inducing = in.pod<std::int32_t>();
  c.eval_every = in.pod<std::int32_t>();
  c.robustmax_epsilon = in.pod<double>();
  c.prior_diag_boost = in.pod<double>();

  ckpt.gp.inducing_inputs = in.matrix();
  ckpt.gp.kernel.log_variance = in.pod<double>();
  ckpt.gp.kernel.log_lengthscale = in.pod<double>();
  ckpt.gp.mean = in.matrix();
  const int K = in.pod<std::int32_t>();
  ckpt.gp.scale_raw.resize(K);
  for (int k = 0; k < K; ++k) ckpt.gp.scale_raw[k] = in.matrix();
  ckpt.gp.jitter = in.pod<double>();

  const int A = in.pod<std::int32_t>();
  const int crowd_K = in.pod<std::int32_t>();
  const Eigen::MatrixXd prior = in.matrix();
  ckpt.crowd = CrowdModel(A, crowd_K, prior);
  for (int a = 0; a < A; ++a) ckpt.crowd.log_alpha(a) = in.matrix();

  ckpt.annotator_external_ids = in.idvec();
  ckpt.responsibilities = in.matrix();
  ckpt.gold_labels = in.intvec();

  ckpt.adam.step = in.pod<std::int64_t>();
  ckpt.adam.first_moment = in.vec();
  ckpt.adam.second_moment = in.vec();

  ckpt.sampler.permutation = in.idvec();
  ckpt.sampler.cursor = in.pod<std::int64_t>();
  ckpt.sampler.rng = in.str();
  ckpt.steps_taken = in.pod<std::int64_t>();
  return ckpt;
}

}  // namespace svgpcr
