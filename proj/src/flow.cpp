#include "ide/flow.hpp"

namespace ide {

using ad::Var;

namespace {

// Bin index per element from the forward values of the knot matrix.
std::vector<Eigen::Index> locate_bins(const Matrix& knots, const Matrix& v) {
  const bool broadcast = knots.rows() == 1;
  std::vector<Eigen::Index> idx(static_cast<size_t>(v.rows()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const Eigen::Index r = broadcast ? 0 : i;
    Eigen::Index lo = 0, hi = knots.cols() - 1;
    const double x = v(i, 0);
    while (hi - lo > 1) {
      const Eigen::Index mid = (lo + hi) / 2;
      if (x < knots(r, mid))
        hi = mid;
      else
        lo = mid;
    }
    idx[static_cast<size_t>(i)] = std::min(lo, knots.cols() - 2);
  }
  return idx;
}

std::vector<Eigen::Index> shifted(const std::vector<Eigen::Index>& idx) {
  std::vector<Eigen::Index> out(idx);
  for (auto& v : out) ++v;
  return out;
}

// Normalized bin sizes from raw parameters: min size plus scaled softmax.
// The per-row max shift is a constant, which leaves the softmax gradient exact.
Var constrained_bins_ad(const Var& raw, double bound) {
  const double k = static_cast<double>(raw.cols());
  Matrix shift = raw.value().rowwise().maxCoeff().replicate(1, raw.cols());
  Var e = ad::exp(raw - ad::constant(std::move(shift)));
  Var soft = ad::div_colvec(e, ad::row_sum(e));
  return soft * (2.0 * bound - k * kMinBinSize) + kMinBinSize;
}

// Knot positions: -B followed by the running sum of bin sizes.
Var knot_positions_ad(const Var& bins, double bound) {
  const Eigen::Index k = bins.cols();
  Matrix tri = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j) tri(i, j) = 1.0;
  Var cum = ad::matmul(bins, ad::constant(tri)) - bound;
  return ad::concat_cols(ad::constant(Matrix::Constant(bins.rows(), 1, -bound)), cum);
}

Var derivatives_ad(const Var& raw_d) {
  Var ones = ad::constant(Matrix::Ones(raw_d.rows(), 1));
  Var interior = ad::softplus(raw_d) + kMinDerivative;
  return ad::concat_cols(ad::concat_cols(ones, interior), ones);
}

}  // namespace

SplineAdResult spline_apply_ad(const Var& x, const Var& raw_w, const Var& raw_h,
                               const Var& raw_d, double bound, bool inverse) {
  check(x.cols() == 1, "spline_apply_ad: x must be a column");
  check(raw_w.rows() == 1 || raw_w.rows() == x.rows(),
        "spline_apply_ad: parameter rows must be 1 or match x");
  check(raw_w.cols() == raw_h.cols() && raw_d.cols() == raw_w.cols() - 1,
        "spline_apply_ad: inconsistent parameter widths");
  check(x.value().allFinite(), "spline_apply_ad: non-finite input");

  Var knot_x = knot_positions_ad(constrained_bins_ad(raw_w, bound), bound);
  Var knot_y = knot_positions_ad(constrained_bins_ad(raw_h, bound), bound);
  Var deriv = derivatives_ad(raw_d);

  const Matrix& locate_in = inverse ? knot_y.value() : knot_x.value();
  Matrix mask = ((x.value().array() > -bound) && (x.value().array() < bound))
                    .select(Matrix::Ones(x.rows(), 1), Matrix::Zero(x.rows(), 1));
  Var xc = ad::clamp(x, -bound, bound);
  const auto idx = locate_bins(locate_in, xc.value());
  const auto idx1 = shifted(idx);

  Var xk = ad::gather_cols(knot_x, idx), xk1 = ad::gather_cols(knot_x, idx1);
  Var yk = ad::gather_cols(knot_y, idx), yk1 = ad::gather_cols(knot_y, idx1);
  Var dk = ad::gather_cols(deriv, idx), dk1 = ad::gather_cols(deriv, idx1);

  Var w = xk1 - xk, h = yk1 - yk;
  Var s = h / w;
  Var t = dk1 + dk - 2.0 * s;

  Var out_in, logdet_in;
  if (!inverse) {
    Var xi = (xc - xk) / w;
    Var xi1m = xi * (1.0 - xi);
    Var den = s + t * xi1m;
    Var num = h * (s * ad::square(xi) + dk * xi1m);
    out_in = yk + num / den;
    Var dnum = ad::square(s) * (dk1 * ad::square(xi) + 2.0 * s * xi1m + dk * ad::square(1.0 - xi));
    logdet_in = ad::log(dnum) - 2.0 * ad::log(den);
  } else {
    Var dy = xc - yk;
    Var qa = h * (s - dk) + dy * t;
    Var qb = h * dk - dy * t;
    Var qc = -1.0 * (s * dy);
    Var disc = ad::square(qb) - 4.0 * (qa * qc);
    check_runtime(disc.value().minCoeff() >= 0.0, "spline inverse: negative discriminant");
    Var xi = 2.0 * qc / (-1.0 * qb - ad::sqrt(disc));
    Var xi1m = xi * (1.0 - xi);
    Var den = s + t * xi1m;
    out_in = xk + xi * w;
    Var dnum = ad::square(s) * (dk1 * ad::square(xi) + 2.0 * s * xi1m + dk * ad::square(1.0 - xi));
    logdet_in = 2.0 * ad::log(den) - ad::log(dnum);
  }

  Var zero = ad::constant(Matrix::Zero(x.rows(), 1));
  return {ad::where(mask, out_in, x), ad::where(mask, logdet_in, zero)};
}

RQSplineParams split_raw_params(const Vector& theta, int n_bins, double bound) {
  check(theta.size() == spline_param_count(n_bins), "split_raw_params: wrong length");
  RQSplineParams p;
  p.raw_widths = theta.segment(0, n_bins);
  p.raw_heights = theta.segment(n_bins, n_bins);
  p.raw_derivs = theta.segment(2 * n_bins, n_bins - 1);
  p.bound = bound;
  return p;
}

// ----------------------------- AffineLayer --------------------------------

SplineAdResult AffineLayer::apply_ad(const Var& x, bool inverse) const {
  Var ls_bcast = ad::matmul(ad::constant(Matrix::Ones(x.rows(), 1)), log_scale_);
  Var sh_bcast = ad::matmul(ad::constant(Matrix::Ones(x.rows(), 1)), shift_);
  if (!inverse) return {x * ad::exp(ls_bcast) + sh_bcast, ls_bcast};
  return {(x - sh_bcast) * ad::exp(-1.0 * ls_bcast), -1.0 * ls_bcast};
}

nlohmann::json AffineLayer::to_json() const {
  return {{"type", "affine"}, {"shift", shift()}, {"log_scale", log_scale()}};
}

AffineLayer AffineLayer::from_json(const nlohmann::json& j) {
  AffineLayer l;
  l.shift_.mutable_value()(0, 0) = j.at("shift").get<double>();
  l.log_scale_.mutable_value()(0, 0) = j.at("log_scale").get<double>();
  return l;
}

nlohmann::json SplineLayer::to_json() const {
  auto row_to_vec = [](const Matrix& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  return {{"type", "rq_spline"},
          {"bound", bound_},
          {"raw_widths", row_to_vec(raw_w_.value())},
          {"raw_heights", row_to_vec(raw_h_.value())},
          {"raw_derivs", row_to_vec(raw_d_.value())}};
}

SplineLayer SplineLayer::from_json(const nlohmann::json& j) {
  const auto w = j.at("raw_widths").get<std::vector<double>>();
  const auto h = j.at("raw_heights").get<std::vector<double>>();
  const auto d = j.at("raw_derivs").get<std::vector<double>>();
  SplineLayer l(static_cast<int>(w.size()), j.at("bound").get<double>());
  for (size_t i = 0; i < w.size(); ++i) {
    l.raw_w_.mutable_value()(0, static_cast<Eigen::Index>(i)) = w[i];
    l.raw_h_.mutable_value()(0, static_cast<Eigen::Index>(i)) = h[i];
  }
  for (size_t i = 0; i < d.size(); ++i)
    l.raw_d_.mutable_value()(0, static_cast<Eigen::Index>(i)) = d[i];
  return l;
}

// -------------------------------- Flow ------------------------------------

Flow Flow::make_1d(int n_bins, double bound, int n_spline_layers, bool with_affine) {
  check(n_spline_layers >= 1, "flow: need at least one layer");
  Flow f;
  f.dim_ = 1;
  for (int l = 0; l < n_spline_layers; ++l) f.layers_.emplace_back(SplineLayer(n_bins, bound));
  if (with_affine) f.layers_.emplace_back(AffineLayer());
  return f;
}

Flow Flow::make_2d(int n_bins, double bound_dim1, double bound_dim2, int cond_hidden, Rng& rng) {
  Flow f;
  f.dim_ = 2;
  f.layers_.emplace_back(SplineLayer(n_bins, bound_dim1));
  f.n_bins2_ = n_bins;
  f.bound2_ = bound_dim2;
  f.conditioner_ = Mlp({1, cond_hidden, spline_param_count(n_bins)}, Activation::LeakySoftplus, rng);
  return f;
}

namespace {
Var std_normal_log_pdf_ad(const Var& z) {
  return ad::square(z) * -0.5 + kLogStdNormalAtZero;
}
}  // namespace

ad::Var Flow::log_prob_ad(const Matrix& y) const {
  check(y.cols() == dim_, "flow log_prob: dimension mismatch");
  check(y.allFinite(), "flow log_prob: non-finite input");
  Var y1 = ad::constant(y.col(0));
  Var z = y1;
  Var logdet = ad::constant(Matrix::Zero(y.rows(), 1));
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto res = std::visit([&](const auto& l) { return l.apply_ad(z, true); }, *it);
    z = res.out;
    logdet = logdet + res.log_deriv;
  }
  Var lp = std_normal_log_pdf_ad(z) + logdet;
  if (dim_ == 2) {
    Var raw2 = conditioner_.forward(y1);
    const int k = n_bins2_;
    Var rw = ad::slice_cols(raw2, 0, k);
    Var rh = ad::slice_cols(raw2, k, k);
    Var rd = ad::slice_cols(raw2, 2 * k, k - 1);
    auto res2 = spline_apply_ad(ad::constant(y.col(1)), rw, rh, rd, bound2_, true);
    lp = lp + std_normal_log_pdf_ad(res2.out) + res2.log_deriv;
  }
  return lp;
}

Vector Flow::log_prob(const Matrix& y) const {
  check(y.cols() == dim_, "flow log_prob: dimension mismatch");
  Vector lp(y.rows());
  // Collect plain knot snapshots once.
  std::vector<SplineKnots> kn1;
  std::vector<const AffineLayer*> aff1;
  std::vector<bool> is_spline;
  for (const auto& t : layers_) {
    if (std::holds_alternative<SplineLayer>(t)) {
      kn1.push_back(std::get<SplineLayer>(t).knots());
      aff1.push_back(nullptr);
      is_spline.push_back(true);
    } else {
      kn1.push_back({});
      aff1.push_back(&std::get<AffineLayer>(t));
      is_spline.push_back(false);
    }
  }
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double z = y(i, 0), total = 0.0, ld = 0.0;
    for (size_t l = layers_.size(); l-- > 0;) {
      if (is_spline[l]) {
        z = rq_inverse(kn1[l], z, &ld);
      } else {
        const double s = std::exp(aff1[l]->log_scale());
        z = (z - aff1[l]->shift()) / s;
        ld = -aff1[l]->log_scale();
      }
      total += ld;
    }
    lp(i) = normal_log_pdf(z) + total;
    if (dim_ == 2) {
      Matrix in(1, 1);
      in(0, 0) = y(i, 0);
      const Vector theta = conditioner_.forward_plain(in).row(0).transpose();
      const SplineKnots kn2 = make_knots(split_raw_params(theta, n_bins2_, bound2_));
      const double z2 = rq_inverse(kn2, y(i, 1), &ld);
      lp(i) += normal_log_pdf(z2) + ld;
    }
  }
  return lp;
}

double Flow::log_prob_scalar(const Vector& y) const {
  Matrix m(1, dim_);
  for (int j = 0; j < dim_; ++j) m(0, j) = y(j);
  return log_prob(m)(0);
}

Matrix Flow::sample(int n, Rng& rng) const {
  Matrix out(n, dim_);
  std::vector<SplineKnots> kn1;
  for (const auto& t : layers_)
    kn1.push_back(std::holds_alternative<SplineLayer>(t) ? std::get<SplineLayer>(t).knots()
                                                         : SplineKnots{});
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    const double z2 = dim_ == 2 ? rng.normal() : 0.0;
    for (size_t l = 0; l < layers_.size(); ++l) {
      if (std::holds_alternative<SplineLayer>(layers_[l])) {
        z = rq_forward(kn1[l], z, nullptr);
      } else {
        const auto& a = std::get<AffineLayer>(layers_[l]);
        z = z * std::exp(a.log_scale()) + a.shift();
      }
    }
    out(i, 0) = z;
    if (dim_ == 2) {
      Matrix in(1, 1);
      in(0, 0) = z;
      const Vector theta = conditioner_.forward_plain(in).row(0).transpose();
      const SplineKnots kn2 = make_knots(split_raw_params(theta, n_bins2_, bound2_));
      out(i, 1) = rq_forward(kn2, z2, nullptr);
    }
  }
  return out;
}

double Flow::quantile(double q) const {
  check(dim_ == 1, "flow quantile: one-dimensional flows only");
  double z = normal_quantile(q);
  for (const auto& t : layers_) {
    if (std::holds_alternative<SplineLayer>(t)) {
      z = rq_forward(std::get<SplineLayer>(t).knots(), z, nullptr);
    } else {
      const auto& a = std::get<AffineLayer>(t);
      z = z * std::exp(a.log_scale()) + a.shift();
    }
  }
  return z;
}

std::vector<ad::Var> Flow::parameters() const {
  std::vector<ad::Var> out;
  for (const auto& t : layers_) {
    auto ps = std::visit([](const auto& l) { return l.parameters(); }, t);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  if (dim_ == 2) {
    auto ps = conditioner_.parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

nlohmann::json Flow::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& t : layers_)
    layers.push_back(std::visit([](const auto& l) { return l.to_json(); }, t));
  nlohmann::json j = {{"dim", dim_}, {"layers", layers}};
  if (dim_ == 2) {
    j["n_bins2"] = n_bins2_;
    j["bound2"] = bound2_;
    nlohmann::json mats = nlohmann::json::array();
    for (const auto& p : conditioner_.parameters()) {
      mats.push_back({{"rows", p.rows()},
                      {"cols", p.cols()},
                      {"data", std::vector<double>(p.value().data(),
                                                   p.value().data() + p.value().size())}});
    }
    j["conditioner"] = mats;
    j["conditioner_hidden"] = conditioner_.weight_vars()[0].cols();
  }
  return j;
}

Flow Flow::from_json(const nlohmann::json& j) {
  Flow f;
  f.dim_ = j.at("dim").get<int>();
  for (const auto& lj : j.at("layers")) {
    if (lj.at("type") == "rq_spline")
      f.layers_.emplace_back(SplineLayer::from_json(lj));
    else
      f.layers_.emplace_back(AffineLayer::from_json(lj));
  }
  if (f.dim_ == 2) {
    f.n_bins2_ = j.at("n_bins2").get<int>();
    f.bound2_ = j.at("bound2").get<double>();
    Rng rng(0);
    f.conditioner_ = Mlp({1, j.at("conditioner_hidden").get<int>(),
                          spline_param_count(f.n_bins2_)},
                         Activation::LeakySoftplus, rng);
    auto ps = f.conditioner_.parameters();
    const auto& mats = j.at("conditioner");
    check(mats.size() == ps.size(), "flow from_json: conditioner layout mismatch");
    for (size_t i = 0; i < ps.size(); ++i) {
      const auto data = mats[i].at("data").get<std::vector<double>>();
      Matrix& m = ps[i].mutable_value();
      check(static_cast<size_t>(m.size()) == data.size(), "flow from_json: size mismatch");
      std::copy(data.begin(), data.end(), m.data());
    }
  }
  return f;
}

Flow flow_with_parameters(const Flow& flow, const std::vector<Matrix>& values) {
  Flow copy = Flow::from_json(flow.to_json());
  auto ps = copy.parameters();
  check(ps.size() == values.size(), "flow_with_parameters: count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) ps[i].mutable_value() = values[i];
  return copy;
}

}  // namespace ide
