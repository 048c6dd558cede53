#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "vgdial/corpus.h"
#include "vgdial/retriever.h"

using namespace vgdial;

namespace {

Tokenizer toy_tokenizer() {
  std::vector<Dialog> dialogs;
  Dialog d;
  d.id = "d0";
  d.context = {"red fish swims", "blue bird flies"};
  d.response = "green frog jumps high";
  dialogs.push_back(d);
  return build_vocabulary(dialogs, {"fish", "bird", "frog"}, 1);
}

TowerConfig small_config(int image_dim) {
  TowerConfig cfg;
  cfg.text_encoder_dim = 8;
  cfg.image_encoder_dim = image_dim;
  cfg.projection_dims = {16, 8};
  cfg.epochs = 4;
  cfg.batch_size = 4;
  return cfg;
}

ImageRecord make_image(const std::string& id, const Eigen::MatrixXd& f) {
  ImageRecord img;
  img.id = id;
  img.regions.image_id = id;
  img.regions.features = f;
  img.regions.concepts.assign(static_cast<size_t>(f.rows()), "thing");
  return img;
}

}  // namespace

TEST_CASE("config validation") {
  TowerConfig cfg = small_config(4);
  CHECK_NOTHROW(validate_tower_config(cfg));
  cfg.margin = -0.1;
  CHECK_THROWS_AS(validate_tower_config(cfg), std::invalid_argument);
  cfg = small_config(4);
  cfg.projection_dims = {};
  CHECK_THROWS_AS(validate_tower_config(cfg), std::invalid_argument);
  cfg = small_config(4);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(validate_tower_config(cfg), std::invalid_argument);
}

TEST_CASE("text embeddings are unit and deterministic") {
  Tokenizer tok = toy_tokenizer();
  Retriever r(tok, small_config(4));

  Eigen::VectorXd a = r.encode_text("red fish");
  CHECK(a.size() == 8);
  CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((r.encode_text("red fish") - a).norm() == 0.0);

  Eigen::VectorXd b = r.encode_text("blue bird");
  CHECK((a - b).norm() > 1e-8);

  CHECK_THROWS_WITH_AS(r.encode_text(""), "empty query", std::runtime_error);
  CHECK_THROWS_WITH_AS(r.encode_text("   "), "empty query",
                       std::runtime_error);
}

TEST_CASE("image embeddings are unit and order invariant") {
  Tokenizer tok = toy_tokenizer();
  Retriever r(tok, small_config(3));

  Eigen::MatrixXd f(4, 3);
  f << 1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 1, 1;
  Eigen::VectorXd e = r.encode_image(make_image("i0", f));
  CHECK(e.norm() == doctest::Approx(1.0).epsilon(1e-6));

  Eigen::MatrixXd permuted(4, 3);
  permuted.row(0) = f.row(2);
  permuted.row(1) = f.row(0);
  permuted.row(2) = f.row(3);
  permuted.row(3) = f.row(1);
  Eigen::VectorXd ep = r.encode_image(make_image("i1", permuted));
  CHECK((e - ep).norm() < 1e-12);

  Eigen::MatrixXd repeated = Eigen::MatrixXd::Ones(5, 3);
  Eigen::MatrixXd single = Eigen::MatrixXd::Ones(1, 3);
  CHECK((r.encode_image(make_image("i2", repeated)) -
         r.encode_image(make_image("i3", single)))
            .norm() < 1e-12);
}

TEST_CASE("relevance is the inner product with symmetry") {
  Eigen::VectorXd t(3), v(3);
  t << 1, 0, 0;
  v << 1, 0, 0;
  CHECK(Retriever::relevance(t, v) == doctest::Approx(1.0));
  v << 0, 1, 0;
  CHECK(Retriever::relevance(t, v) == doctest::Approx(0.0));
  CHECK(Retriever::relevance(t, -t) == doctest::Approx(-1.0));
  CHECK(Retriever::relevance(t, v) == Retriever::relevance(v, t));

  Eigen::VectorXd wrong(4);
  wrong.setZero();
  CHECK_THROWS_AS(Retriever::relevance(t, wrong), std::invalid_argument);
}

TEST_CASE("hinge loss hand cases") {
  CHECK(Retriever::hinge_loss(1.0, {0.0}, 0.5) == doctest::Approx(0.0));
  CHECK(Retriever::hinge_loss(0.2, {0.2}, 0.5) == doctest::Approx(0.5));
  CHECK(Retriever::hinge_loss(0.4, {0.3, 0.0}, 0.5) ==
        doctest::Approx(0.5));
  CHECK(Retriever::hinge_loss(-1.0, {1.0}, 0.5) == doctest::Approx(2.5));
  CHECK_THROWS_AS(Retriever::hinge_loss(0.0, {}, 0.5),
                  std::invalid_argument);

  for (double s_pos : {0.0, 0.3, 0.9}) {
    CHECK(Retriever::hinge_loss(s_pos, {0.1, 0.5}, 0.5) >= 0.0);
    CHECK(Retriever::hinge_loss(s_pos, {0.1, 0.5}, 0.5) >=
          Retriever::hinge_loss(s_pos + 0.1, {0.1, 0.5}, 0.5));
  }
  CHECK(Retriever::hinge_loss(0.7, {0.2, 0.1}, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("query construction joins utterances with the separator") {
  Dialog d;
  d.id = "d";
  d.context = {"a", "b"};
  d.response = "c";
  CHECK(Retriever::build_query(d, QueryMode::kTrain) == "a [SEP] b [SEP] c");
  CHECK(Retriever::build_query(d, QueryMode::kInfer) == "a [SEP] b");

  Dialog single;
  single.id = "s";
  single.context = {"only line"};
  single.response = "reply";
  CHECK(Retriever::build_query(single, QueryMode::kInfer) == "only line");
}

TEST_CASE("batch hinge gradients match finite differences") {
  Tokenizer tok = toy_tokenizer();
  TowerConfig cfg = small_config(3);
  Retriever r(tok, cfg);

  std::vector<RetrievalPair> batch(2);
  batch[0].text = "red fish";
  batch[0].image_feature = Eigen::Vector3d(1.0, 0.0, 0.5);
  batch[0].image_id = "i0";
  batch[1].text = "blue bird flies";
  batch[1].image_feature = Eigen::Vector3d(-0.5, 1.0, 0.0);
  batch[1].image_id = "i1";

  auto loss_at = [&] {
    nn::Graph g;
    return r.batch_loss(g, batch)->value(0, 0);
  };

  r.params().zero_grad();
  {
    nn::Graph g;
    g.backward(r.batch_loss(g, batch));
  }

  const double h = 1e-5;
  for (auto* p : r.params().all()) {
    for (Eigen::Index i = 0; i < p->value.size(); i += 7) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = loss_at();
      p->value.data()[i] = orig - h;
      const double down = loss_at();
      p->value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = p->grad.data()[i];
      const double denom =
          std::max({std::abs(numeric), std::abs(exact), 1e-4});
      CAPTURE(p->name);
      CAPTURE(i);
      CHECK(std::abs(numeric - exact) / denom < 1e-4);
    }
  }
}

TEST_CASE("training learns the synthetic pairing") {
  SyntheticWorld w = generate_synthetic_world(24, 12, 48, 8, 3, 0.0, 33, 12);
  Tokenizer tok = build_vocabulary(w.dialogs, w.concept_tags, 1);

  TowerConfig cfg;
  cfg.text_encoder_dim = 16;
  cfg.image_encoder_dim = 8;
  cfg.projection_dims = {32, 16};
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.seed = 3;

  std::vector<RetrievalPair> pairs;
  std::vector<Dialog> train_dialogs, test_dialogs;
  std::vector<std::pair<std::string, std::string>> train_truth, test_truth;
  for (size_t i = 0; i < w.dialogs.size(); ++i) {
    const bool test = w.dialogs[i].id.rfind("test_", 0) == 0;
    (test ? test_dialogs : train_dialogs).push_back(w.dialogs[i]);
    (test ? test_truth : train_truth).push_back(w.ground_truth[i]);
    if (test) continue;
    RetrievalPair p;
    p.text = Retriever::build_query(w.dialogs[i], QueryMode::kTrain);
    p.image_id = w.ground_truth[i].second;
    p.image_feature = w.image_by_id(p.image_id).mean_feature();
    pairs.push_back(std::move(p));
  }

  Retriever r(tok, cfg);
  auto curve = r.train(pairs);
  REQUIRE(curve.size() == 60);
  CHECK(curve.back() < curve.front());

  double train_recall = recall_at_k(r, train_dialogs, w.images, train_truth,
                                    1, QueryMode::kTrain);
  CHECK(train_recall >= 0.9);
  double test_recall = recall_at_k(r, test_dialogs, w.images, test_truth, 1,
                                   QueryMode::kInfer);
  CHECK(test_recall >= 0.7);

  CHECK_THROWS_AS(r.train({}), std::invalid_argument);
  CHECK_THROWS_AS(r.train({pairs[0]}), std::invalid_argument);
}

TEST_CASE("frozen embeddings still learn the pairing") {
  SyntheticWorld w = generate_synthetic_world(12, 8, 32, 8, 3, 0.0, 44, 8);
  Tokenizer tok = build_vocabulary(w.dialogs, w.concept_tags, 1);

  TowerConfig cfg;
  cfg.text_encoder_dim = 16;
  cfg.image_encoder_dim = 8;
  cfg.projection_dims = {32, 16};
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.freeze_embeddings = true;

  std::vector<RetrievalPair> pairs;
  for (size_t i = 0; i < w.dialogs.size(); ++i) {
    if (w.dialogs[i].id.rfind("test_", 0) == 0) continue;
    RetrievalPair p;
    p.text = Retriever::build_query(w.dialogs[i], QueryMode::kTrain);
    p.image_id = w.ground_truth[i].second;
    p.image_feature = w.image_by_id(p.image_id).mean_feature();
    pairs.push_back(std::move(p));
  }

  Retriever r(tok, cfg);
  Eigen::MatrixXd embed_before = r.params().find("text.embed")->value;
  r.train(pairs);
  CHECK(r.params().find("text.embed")->value == embed_before);

  std::vector<Dialog> train_dialogs;
  std::vector<std::pair<std::string, std::string>> truth;
  for (size_t i = 0; i < w.dialogs.size(); ++i) {
    if (w.dialogs[i].id.rfind("test_", 0) == 0) continue;
    train_dialogs.push_back(w.dialogs[i]);
    truth.push_back(w.ground_truth[i]);
  }
  CHECK(recall_at_k(r, train_dialogs, w.images, truth, 1,
                    QueryMode::kTrain) >= 0.8);
}

TEST_CASE("training is deterministic under a fixed seed") {
  SyntheticWorld w = generate_synthetic_world(10, 6, 12, 6, 2, 0.05, 9, 3);
  Tokenizer tok = build_vocabulary(w.dialogs, w.concept_tags, 1);
  TowerConfig cfg = small_config(6);
  cfg.epochs = 3;

  std::vector<RetrievalPair> pairs;
  for (size_t i = 0; i < w.dialogs.size(); ++i) {
    RetrievalPair p;
    p.text = Retriever::build_query(w.dialogs[i], QueryMode::kTrain);
    p.image_id = w.ground_truth[i].second;
    p.image_feature = w.image_by_id(p.image_id).mean_feature();
    pairs.push_back(std::move(p));
  }

  Retriever a(tok, cfg), b(tok, cfg);
  auto ca = a.train(pairs);
  auto cb = b.train(pairs);
  CHECK(ca == cb);
  CHECK(a.params().find("text.proj0.W")->value ==
        b.params().find("text.proj0.W")->value);
}

TEST_CASE("checkpoint round-trips and rejects a mismatched tokenizer") {
  Tokenizer tok = toy_tokenizer();
  TowerConfig cfg = small_config(5);
  Retriever r(tok, cfg);

  const std::string path =
      (std::filesystem::temp_directory_path() / "vgdial_retr_test.mrt")
          .string();
  r.save(path);
  Retriever back = Retriever::load(path, tok);
  CHECK((back.encode_text("red fish") - r.encode_text("red fish")).norm() ==
        0.0);
  CHECK(back.config().projection_dims == cfg.projection_dims);
  CHECK(back.config().margin == cfg.margin);

  std::vector<Dialog> other = {Dialog{"x", {"totally different words"},
                                      "another reply"}};
  Tokenizer wrong = build_vocabulary(other, {"cat"}, 1);
  CHECK_THROWS_AS(Retriever::load(path, wrong), std::runtime_error);
  std::remove(path.c_str());
}
