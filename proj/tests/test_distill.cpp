// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "caninelab/distill.hpp"
#include "caninelab/error.hpp"
#include "caninelab/random.hpp"

using namespace caninelab;
using namespace caninelab::distill;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::IoError;
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

VectorXd random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

VectorXd random_distribution(Rng& rng) {
  VectorXd p(kClasses);
  for (Eigen::Index i = 0; i < kClasses; ++i) p[i] = rng.uniform(0.05, 1.0);
  return p / p.sum();
}

}  // namespace

TEST_CASE("one-hot and softmax") {
  CHECK(one_hot(0) == vec({1, 0, 0}));
  CHECK(one_hot(2) == vec({0, 0, 1}));
  CHECK(kind_of([] { one_hot(3); }) == ErrorKind::LabelOutOfRange);

  const auto p = softmax(vec({std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(p[0] == doctest::Approx(1.0 / 6));
  CHECK(p[1] == doctest::Approx(2.0 / 6));
  CHECK(p[2] == doctest::Approx(3.0 / 6));

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto q = softmax(random_vector(rng, 3, 50.0));
    CHECK(std::abs(q.sum() - 1.0) < 1e-12);
    CHECK((q.array() >= 0.0).all());
  }
  const auto moderate = softmax(vec({3, -2, 0.5}));
  CHECK((moderate.array() > 0.0).all());
}

TEST_CASE("forward pass") {
  const auto zero = MlpModel::zeros({4, 5, 3});
  const auto out = zero.forward(vec({1, 2, 3, 4}));
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(out.probabilities[i] == doctest::Approx(1.0 / 3));

  auto identity = MlpModel::zeros({3, 3});
  identity.weight(0) = MatrixXd::Identity(3, 3);
  const auto id = identity.forward(vec({std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(id.probabilities[2] == doctest::Approx(0.5));

  CHECK(kind_of([&] { zero.forward(vec({1, 2})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("distillation loss values") {
  const VectorXd uniform_logits = VectorXd::Zero(3);
  CHECK(kd_loss(uniform_logits, softmax(uniform_logits), one_hot(0), 2.0, 1.0).loss ==
        doctest::Approx(std::log(3.0)));
  const auto logits = vec({0.3, -1.2, 2.0});
  CHECK(std::abs(kd_loss(logits, softmax(logits), one_hot(1), 1.0, 0.0).loss) < 1e-15);

  // KL((0.7,0.2,0.1) || uniform) = sum p ln p + ln 3.
  const auto teacher = vec({0.7, 0.2, 0.1});
  const double kl = 0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1) + std::log(3.0);
  const auto mixed = kd_loss(uniform_logits, teacher, one_hot(0), 1.0, 0.5);
  CHECK(mixed.loss == doctest::Approx(0.5 * std::log(3.0) + 0.5 * kl).epsilon(1e-14));
  CHECK(kl == doctest::Approx(0.296793).epsilon(1e-6));

  CHECK(kind_of([&] { kd_loss(logits, teacher, one_hot(0), 0.0, 0.5); }) == ErrorKind::InvalidTemperature);
  CHECK(kind_of([&] { kd_loss(logits, teacher, one_hot(0), -1.0, 0.5); }) == ErrorKind::InvalidTemperature);
  CHECK(kind_of([&] { kd_loss(logits, teacher, one_hot(0), 1.0, 1.5); }) == ErrorKind::InvalidParameter);

  Rng rng(derive_seed(4, 4));
  for (int i = 0; i < 200; ++i) {
    const auto z = random_vector(rng, 3, 3.0);
    const auto t = random_distribution(rng);
    CHECK(kd_loss(z, t, one_hot(static_cast<int>(rng.below(3))), rng.uniform(0.5, 5.0), rng.uniform()).loss >= 0.0);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(derive_seed(8, 8));
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> sizes{1 + static_cast<int>(rng.below(6))};
    const auto hidden = rng.below(3);
    for (std::uint64_t h = 0; h < hidden; ++h) sizes.push_back(2 + static_cast<int>(rng.below(6)));
    sizes.push_back(kClasses);
    // Random biases keep hidden pre-activations off the rectifier kink,
    // where finite differences are meaningless.
    auto model = MlpModel::initialize(sizes, rng.below(1u << 30));
    model.set_parameters(random_vector(rng, static_cast<Eigen::Index>(model.parameter_count()), 0.7));
    const auto input = random_vector(rng, sizes.front());
    const int label = static_cast<int>(rng.below(3));
    const double l2 = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 0.1);
    const auto teacher = random_distribution(rng);
    const double t = rng.uniform(0.5, 4.0);
    const double alpha = rng.uniform();
    LogitLoss ce = [&](const VectorXd& z) { return cross_entropy(z, one_hot(label)); };
    LogitLoss kd = [&](const VectorXd& z) { return kd_loss(z, teacher, one_hot(label), t, alpha); };
    CHECK(gradient_check(model, ce, input, l2) < 1e-4);
    CHECK(gradient_check(model, kd, input, l2) < 1e-4);
  }
  const auto bias_only = MlpModel::zeros({0, 3});
  LogitLoss ce = [](const VectorXd& z) { return cross_entropy(z, one_hot(1)); };
  CHECK(gradient_check(bias_only, ce, VectorXd(0)) < 1e-6);
}

TEST_CASE("config validation and round trip") {
  DistillConfig c;
  c.validate();
  c.seed = 42;
  c.student_hidden = {8, 4};
  const auto back = distill_config_from_json(to_json(c));
  CHECK(back.seed == 42);
  CHECK(back.student_hidden == std::vector<int>{8, 4});
  CHECK(back.temperature == c.temperature);

  DistillConfig bad = c;
  bad.temperature = 0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidTemperature);
  bad = c;
  bad.alpha = 1.5;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidConfig);
  bad = c;
  bad.batch_size = 0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { distill_config_from_json(nlohmann::json{{"temprature", 2.0}}); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("split") {
  Dataset data(1528);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].label = static_cast<int>(i % 3);
  const auto idx = split_indices(data, {0.8, false, 5});
  CHECK(idx.train.size() == 1222);
  CHECK(idx.validation.size() == 306);
  std::set<std::size_t> all(idx.train.begin(), idx.train.end());
  all.insert(idx.validation.begin(), idx.validation.end());
  CHECK(all.size() == 1528);
  CHECK(std::is_sorted(idx.train.begin(), idx.train.end()));
  const auto again = split_indices(data, {0.8, false, 5});
  CHECK(again.train == idx.train);
  CHECK(split_indices(data, {0.8, false, 6}).train != idx.train);

  for (std::size_t n = 1; n <= 60; ++n) {
    Dataset d(n);
    for (std::size_t i = 0; i < n; ++i) d[i].label = static_cast<int>((i * 7) % 3);
    for (bool stratified : {false, true}) {
      const auto s = split_indices(d, {0.8, stratified, n});
      CHECK(s.train.size() == static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n))));
      std::set<std::size_t> u(s.train.begin(), s.train.end());
      u.insert(s.validation.begin(), s.validation.end());
      CHECK(u.size() == n);
      CHECK(s.train.size() + s.validation.size() == n);
    }
  }

  Dataset ten(10);
  const int labels[] = {0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
  for (std::size_t i = 0; i < 10; ++i) ten[i].label = labels[i];
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_indices(ten, {0.8, true, seed});
    int per[3] = {0, 0, 0};
    for (auto i : s.train) ++per[ten[i].label];
    CHECK(per[0] == 3);
    CHECK(per[1] + per[2] == 5);
    CHECK(std::abs(per[1] - per[2]) == 1);
  }
  CHECK(kind_of([] { split_indices(Dataset{}, {}); }) == ErrorKind::EmptyDataset);
}

TEST_CASE("synthetic generator") {
  SynthConfig c;
  c.n = 400;
  c.seed = 3;
  const auto d = synth_generate(c);
  REQUIRE(d.samples.size() == 400);
  const auto merge = geometry::MergeMap3::preset(c.preset);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(geometry::classify(d.sources[i].annotation, geometry::Space::Three, merge).index() == d.samples[i].label);
    CHECK(d.samples[i].image_features.size() == 16);
  }
  const auto again = synth_generate(c);
  CHECK(write_manifest(again.samples) == write_manifest(d.samples));

  SynthConfig bad;
  bad.proportions = {0.5, 0.6, 0.2};
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidProportions);
  bad.proportions = {1.2, -0.1, -0.1};
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidProportions);

  SynthConfig favorable = c;
  favorable.preset = "distal-favorable";
  const auto f = synth_generate(favorable);
  const auto fmerge = geometry::MergeMap3::preset("distal-favorable");
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    CHECK(geometry::classify(f.sources[i].annotation, geometry::Space::Three, fmerge).index() == f.samples[i].label);
  }
}

TEST_CASE("noiseless features determine the label through a linear probe") {
  SynthConfig c;
  c.n = 600;
  c.noise_sigma = 0.0;
  c.seed = 17;
  const auto d = synth_generate(c);
  const auto n = static_cast<Eigen::Index>(d.samples.size());
  MatrixXd features(n, 16), distances(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    features.row(i) = d.samples[static_cast<std::size_t>(i)].image_features.transpose();
    for (Eigen::Index k = 0; k < 4; ++k) distances(i, k) = d.sources[static_cast<std::size_t>(i)].distances[k];
  }
  const MatrixXd probe = features.colPivHouseholderQr().solve(distances);
  const MatrixXd recovered = features * probe;
  CHECK((recovered - distances).cwiseAbs().maxCoeff() < 1e-6);
  const auto merge = geometry::MergeMap3::preset(c.preset);
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const geometry::Distances delta{recovered(i, 0), recovered(i, 1), recovered(i, 2), recovered(i, 3)};
    correct += geometry::merge_to3(geometry::classify5(delta, 1e-6), merge).index() ==
               d.samples[static_cast<std::size_t>(i)].label;
  }
  CHECK(correct == n);
}

TEST_CASE("manifest round trip") {
  SynthConfig c;
  c.n = 50;
  const auto d = synth_generate(c);
  const auto text = write_manifest(d.samples);
  const auto back = parse_manifest(text);
  REQUIRE(back.size() == d.samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].case_id == d.samples[i].case_id);
    CHECK(back[i].label == d.samples[i].label);
    CHECK(back[i].image_features == d.samples[i].image_features);
    CHECK(back[i].clinical.angle_deg == d.samples[i].clinical.angle_deg);
  }
  CHECK(write_manifest(back) == text);
  CHECK(kind_of([] { parse_manifest("case_id,label\n"); }) == ErrorKind::ParseError);
  CHECK(kind_of([&] { parse_manifest(text + "x,Q,1,2,3\n"); }) == ErrorKind::ParseError);
}

TEST_CASE("training") {
  SynthConfig sc;
  sc.seed = 2;
  sc.n = 600;
  const auto data = synth_generate(sc).samples;
  const auto [train, validation] = split(data, {0.8, false, 2});

  DistillConfig config;
  config.seed = 2;
  config.max_epochs = 40;

  SUBCASE("determinism") {
    const auto a = train_teacher(train, validation, config);
    const auto b = train_teacher(train, validation, config);
    CHECK(a.model == b.model);
    CHECK(model_archive(a, config).dump() == model_archive(b, config).dump());
    const auto restored = model_from_archive(model_archive(a, config));
    CHECK(restored.model == a.model);
    CHECK(restored.predict_label(validation[0]) == a.predict_label(validation[0]));
    CHECK(accuracy(a, validation) > 0.8);
  }
  SUBCASE("alpha = 1 reproduces the baseline bit for bit") {
    DistillConfig one = config;
    one.alpha = 1.0;
    const auto teacher = train_teacher(train, validation, one);
    const auto student = distill_student(teacher, train, validation, one);
    const auto baseline = train_baseline(train, validation, one);
    CHECK(student.model == baseline.model);
    CHECK(student.best_epoch == baseline.best_epoch);
    REQUIRE(student.log.size() == baseline.log.size());
    for (std::size_t i = 0; i < student.log.size(); ++i) CHECK(student.log[i].train_loss == baseline.log[i].train_loss);
  }
  SUBCASE("zero epochs leave the initialization") {
    DistillConfig none = config;
    none.max_epochs = 0;
    const auto t = train_teacher(train, validation, none);
    CHECK(t.log.empty());
    const int in = t.model.input_dim();
    const auto init = MlpModel::initialize({in, 32, 32, 3}, 0);
    CHECK(t.model.layer_sizes() == init.layer_sizes());
  }
  SUBCASE("errors") {
    CHECK(kind_of([&] { train_teacher({}, validation, config); }) == ErrorKind::EmptyDataset);
    DistillConfig hot = config;
    hot.temperature = 0;
    CHECK(kind_of([&] { train_teacher(train, validation, hot); }) == ErrorKind::InvalidTemperature);
    DistillConfig wild = config;
    wild.learning_rate = 1e6;
    CHECK(kind_of([&] { train_teacher(train, validation, wild); }) == ErrorKind::NonFiniteLoss);
  }
}

TEST_CASE("low-noise teacher separates the classes") {
  SynthConfig sc;
  sc.noise_sigma = 0.01;
  sc.seed = 9;
  const auto data = synth_generate(sc).samples;
  const auto [train, validation] = split(data, {0.8, false, 9});
  DistillConfig config;
  config.seed = 9;
  config.early_stopping = false;
  const auto teacher = train_teacher(train, validation, config);
  CHECK(accuracy(teacher, validation) >= 0.98);
}
