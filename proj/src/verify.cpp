#include "trajprint/verify.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "trajprint/error.hpp"
#include "trajprint/parallel.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

double bit_accuracy(const Message& a, const Message& b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch,
          "bit_accuracy: message lengths " + std::to_string(a.size()) + " and " +
              std::to_string(b.size()));
  require(a.size() > 0, ErrorCode::InvalidArgument, "bit_accuracy: empty messages");
  std::size_t wrong = 0;
  for (std::size_t j = 0; j < a.size(); ++j) wrong += a.bits[j] != b.bits[j] ? 1 : 0;
  return 1.0 - static_cast<double>(wrong) / static_cast<double>(a.size());
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) return h;
  }
  fail(ErrorCode::NonFinite, "incomplete beta continued fraction did not converge");
}

// I_x(a, b) with 1 - x supplied separately to avoid cancellation.
double incomplete_beta(double a, double b, double x, double one_minus_x) {
  if (x <= 0.0) return 0.0;
  if (one_minus_x <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log(one_minus_x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, one_minus_x) / b;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorCode::InvalidArgument, "incomplete beta needs a, b > 0");
  require(x >= 0.0 && x <= 1.0, ErrorCode::InvalidArgument, "incomplete beta needs x in [0, 1]");
  return incomplete_beta(a, b, x, 1.0 - x);
}

double student_t_upper_tail(double t, double dof) {
  require(dof > 0.0, ErrorCode::InvalidArgument, "Student-t needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double t2 = t * t;
  const double x = dof / (dof + t2);
  const double one_minus_x = t2 / (dof + t2);
  const double half_tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x, one_minus_x);
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

TTestResult t_test(std::span<const double> samples, double mu0, Tail tail) {
  require(samples.size() >= 2, ErrorCode::InvalidArgument,
          "t_test needs at least 2 samples, got " + std::to_string(samples.size()));
  TTestResult r;
  r.n = samples.size();
  const double n = static_cast<double>(r.n);
  for (double v : samples) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / (n - 1.0));

  if (r.stddev == 0.0) {
    if (r.mean == mu0) {
      r.t = 0.0;
      r.p = tail == Tail::Upper ? 0.5 : 1.0;
    } else {
      r.t = r.mean > mu0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
      if (tail == Tail::Upper) {
        r.p = r.mean > mu0 ? 0.0 : 1.0;
      } else {
        r.p = 0.0;
      }
    }
    return r;
  }
  r.t = (r.mean - mu0) / (r.stddev / std::sqrt(n));
  if (tail == Tail::Upper) {
    r.p = student_t_upper_tail(r.t, n - 1.0);
  } else {
    r.p = std::min(1.0, 2.0 * student_t_upper_tail(std::abs(r.t), n - 1.0));
  }
  return r;
}

SamplingClosure black_box(const DenoiserModel& model, LatentCodec codec) {
  return [model, codec = std::move(codec)](std::span<const double> z) {
    return codec.decode(sample(model, z));
  };
}

SamplingClosure black_box(const DenoiserModel& model) {
  return black_box(model, LatentCodec::identity(model.dim()));
}

std::string verdict_name(Verdict v) {
  return v == Verdict::Infringing ? "infringing" : "not-proven";
}

namespace {

nlohmann::json number_or_tag(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

double read_number_or_tag(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    fail(ErrorCode::Parse, "unexpected numeric tag '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

nlohmann::json VerificationReport::to_json() const {
  return {{"format", "trajprint-verification"},
          {"suspect_id", suspect_id},
          {"record_models", record_models},
          {"bit_accuracies", bit_accuracies},
          {"mean", mean},
          {"stddev", stddev},
          {"t", number_or_tag(t)},
          {"p", p},
          {"alpha", alpha},
          {"tail", tail == Tail::Upper ? "upper" : "two-sided"},
          {"verdict", verdict_name(verdict)},
          {"n", n}};
}

VerificationReport VerificationReport::from_json(const nlohmann::json& j) {
  VerificationReport r;
  r.suspect_id = j.at("suspect_id").get<std::string>();
  r.record_models = j.value("record_models", std::vector<std::string>{});
  r.bit_accuracies = j.at("bit_accuracies").get<std::vector<double>>();
  r.mean = j.at("mean").get<double>();
  r.stddev = j.at("stddev").get<double>();
  r.t = read_number_or_tag(j.at("t"));
  r.p = j.at("p").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.tail = j.value("tail", std::string("upper")) == "upper" ? Tail::Upper : Tail::TwoSided;
  r.verdict = j.at("verdict").get<std::string>() == "infringing" ? Verdict::Infringing
                                                                 : Verdict::NotProven;
  r.n = j.at("n").get<std::size_t>();
  return r;
}

VerificationReport verify(const SamplingClosure& suspect, const std::string& suspect_id,
                          std::span<const FingerprintRecord> records, const WatermarkKey& key,
                          double alpha, Tail tail) {
  require(!records.empty(), ErrorCode::InvalidArgument, "verify needs at least one record");
  require(records.size() >= 2, ErrorCode::InvalidArgument,
          "verify needs at least 2 records for the t-test");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  VerificationReport rep;
  rep.suspect_id = suspect_id;
  rep.alpha = alpha;
  rep.tail = tail;
  for (const auto& rec : records) {
    require(rec.noise.size() == key.dim, ErrorCode::DimensionMismatch,
            "record noise of dimension " + std::to_string(rec.noise.size()) +
                " for key dimension " + std::to_string(key.dim));
    const auto image = suspect(rec.noise);
    require(image.size() == key.dim, ErrorCode::DimensionMismatch,
            "suspect returned dimension " + std::to_string(image.size()));
    rep.bit_accuracies.push_back(bit_accuracy(decode_hard(image, key), rec.anchor.message));
    rep.record_models.push_back(rec.model_id);
  }
  rep.n = records.size();
  const auto tt = t_test(rep.bit_accuracies, 0.5, tail);
  rep.mean = tt.mean;
  rep.stddev = tt.stddev;
  rep.t = tt.t;
  rep.p = tt.p;
  rep.verdict = rep.p < alpha ? Verdict::Infringing : Verdict::NotProven;
  return rep;
}

nlohmann::json CrossMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : cells) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& c : row) r.push_back(c.to_json());
    rows.push_back(std::move(r));
  }
  return {{"model_ids", model_ids}, {"orientation", "rows=verifier,columns=source"},
          {"cells", rows}};
}

namespace {

// Shortest text that reads back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string CrossMatrix::to_csv() const {
  std::ostringstream out;
  out << "verifier\\source";
  for (const auto& id : model_ids) out << ',' << id << ":ba," << id << ":p";
  out << '\n';
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out << model_ids[r];
    for (const auto& c : cells[r]) out << ',' << shortest(c.mean) << ',' << shortest(c.p);
    out << '\n';
  }
  return out.str();
}

CrossMatrix cross_matrix(std::span<const DenoiserModel> models,
                         std::span<const std::vector<FingerprintRecord>> record_sets,
                         const WatermarkKey& key, double alpha, Tail tail, std::size_t workers) {
  require(models.size() == record_sets.size(), ErrorCode::InvalidArgument,
          "cross_matrix needs one record set per model");
  require(!models.empty(), ErrorCode::InvalidArgument, "cross_matrix needs at least one model");
  const std::size_t m = models.size();
  CrossMatrix out;
  for (const auto& model : models) out.model_ids.push_back(model.model_id());
  out.cells.assign(m, std::vector<VerificationReport>(m));
  std::vector<SamplingClosure> suspects;
  for (const auto& model : models) suspects.push_back(black_box(model));
  parallel_for(m * m, workers, [&](std::size_t i) {
    const std::size_t row = i / m;
    const std::size_t col = i % m;
    out.cells[row][col] =
        verify(suspects[row], out.model_ids[row], record_sets[col], key, alpha, tail);
  });
  return out;
}

double null_rejection_rate(std::uint64_t seed, std::size_t trials, std::size_t records,
                           std::size_t bits, double alpha) {
  require(records >= 2 && bits >= 1 && trials >= 1, ErrorCode::InvalidArgument,
          "null simulation needs trials >= 1, records >= 2, bits >= 1");
  Rng rng(derive_seed(seed, "null-simulation"));
  std::size_t rejections = 0;
  std::vector<double> ba(records);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (std::size_t r = 0; r < records; ++r) {
      const auto got = rng.bits(bits);
      const auto want = rng.bits(bits);
      std::size_t correct = 0;
      for (std::size_t j = 0; j < bits; ++j) correct += got[j] == want[j] ? 1 : 0;
      ba[r] = static_cast<double>(correct) / static_cast<double>(bits);
    }
    if (t_test(ba).p < alpha) ++rejections;
  }
  return static_cast<double>(rejections) / static_cast<double>(trials);
}

}  // namespace trajprint
