// cxr: train, evaluate, query and serve the chest X-ray classifier.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cxrnet/cxrnet.hpp"

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

struct TrainArgs {
  std::string data_dir;
  std::string output;
  std::string history;
  std::string optimizer = "adam";
  cxr::TrainConfig config;
  double test_fraction = 0.2;
  std::size_t image_size = cxr::kInputSide;
};

struct EvalArgs {
  std::string model;
  std::string data_dir;
  std::string report;
  bool holdout = false;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::size_t batch_size = 32;
};

struct PredictArgs {
  std::string model;
  std::string image;
  bool json = false;
};

struct ServeArgs {
  std::string model;
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t max_body_bytes = cxr::kDefaultMaxBodyBytes;
  std::string cors_origin = "*";
};

void print_warnings(const cxr::DatasetManifest& m) {
  for (const auto& w : m.warnings()) std::cerr << "warning: " << w << '\n';
}

std::string counts_text(const cxr::DatasetManifest& m) {
  const auto c = m.class_counts();
  std::string out;
  for (std::size_t k = 0; k < cxr::kNumClasses; ++k) {
    if (k) out += ", ";
    out += cxr::class_names()[k] + " " + std::to_string(c[k]);
  }
  return out;
}

cxr::SplitDataset balanced_split(const std::string& root, double test_fraction, std::uint64_t seed) {
  const auto scanned = cxr::scan_directory(root);
  print_warnings(scanned);
  std::cout << "scanned " << scanned.size() << " images (" << counts_text(scanned) << ")\n";
  const auto balanced = cxr::balance_classes(scanned, seed);
  std::cout << "balanced to " << balanced.size() << " images (" << counts_text(balanced) << ")\n";
  return cxr::stratified_split(balanced, test_fraction, seed);
}

cxr::ConfusionMatrix evaluate(const cxr::Model<float>& model, const std::string& root,
                              const cxr::DatasetManifest& manifest, std::size_t batch_size) {
  const cxr::FileSamples samples(root, manifest, model.input_shape()[0]);
  const auto pred = cxr::predict_all(model, samples, batch_size);
  std::vector<std::size_t> truth(samples.size());
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = samples.label(i);
  return cxr::confusion_matrix(truth, pred, model.num_classes(), model.class_labels());
}

int run_train(TrainArgs a) {
  a.config.optimizer = a.optimizer == "sgd" ? cxr::OptimizerKind::sgd_momentum : cxr::OptimizerKind::adam;
  a.config.validate();
  const auto split = balanced_split(a.data_dir, a.test_fraction, a.config.seed);
  std::cout << "train " << split.train.size() << ", test " << split.test.size() << '\n';

  auto model = cxr::build_scaled_model<float>(a.image_size, a.config.seed);
  std::cout << "model input " << cxr::to_string(model.input_shape()) << ", " << model.parameter_count()
            << " parameters\n";
  const cxr::FileSamples train(a.data_dir, split.train, a.image_size);
  const auto history = cxr::fit<float>(model, train, a.config, [](const cxr::Model<float>&, const cxr::EpochRecord& r) {
    std::printf("epoch %zu  loss %.4f  acc %.4f", r.epoch, r.train_loss, r.train_accuracy);
    if (r.val_loss) std::printf("  val_loss %.4f  val_acc %.4f", *r.val_loss, *r.val_accuracy);
    std::printf("  %.1fs\n", r.seconds);
    std::fflush(stdout);
    return true;
  });
  cxr::save_model(model, a.output);
  std::cout << "saved " << a.output << '\n';
  if (!a.history.empty()) {
    std::ofstream(a.history) << history.to_csv();
    std::cout << "history written to " << a.history << '\n';
  }
  const auto cm = evaluate(model, a.data_dir, split.test, a.config.batch_size);
  std::cout << "\nheld-out test set\n" << cxr::format_confusion_matrix(cm) << '\n' << cxr::format_metrics(cxr::metrics(cm));
  return 0;
}

int run_eval(const EvalArgs& a) {
  const auto bytes = cxr::read_binary_file(a.model);
  const auto model = cxr::deserialize_model(bytes);
  cxr::DatasetManifest manifest;
  if (a.holdout) {
    manifest = balanced_split(a.data_dir, a.test_fraction, a.seed).test;
  } else {
    manifest = cxr::scan_directory(a.data_dir);
    print_warnings(manifest);
  }
  std::cout << "evaluating " << manifest.size() << " images\n";
  const auto cm = evaluate(model, a.data_dir, manifest, a.batch_size);
  const auto report = cxr::metrics(cm);
  std::cout << cxr::format_confusion_matrix(cm) << '\n' << cxr::format_metrics(report);
  if (!a.report.empty()) {
    const nlohmann::json j{{"model_version", cxr::model_version_tag(bytes)},
                           {"data_dir", a.data_dir},
                           {"holdout", a.holdout},
                           {"confusion_matrix", cxr::to_json(cm)},
                           {"metrics", cxr::to_json(report)}};
    std::ofstream out(a.report);
    if (!out) throw cxr::IoError("cannot write " + a.report);
    out << j.dump(2) << '\n';
    std::cout << "report written to " << a.report << '\n';
  }
  return 0;
}

int run_predict(const PredictArgs& a) {
  cxr::PredictionService svc;
  svc.load_file(a.model);
  const auto r = svc.handle_predict(cxr::read_file_bytes(a.image));
  if (a.json) {
    std::cout << r.body.dump(2) << '\n';
  } else if (r.status == 200) {
    std::cout << r.body["predicted_label"].get<std::string>() << '\n';
    for (const auto& [label, p] : r.body["probabilities"].items()) std::printf("  %-20s %.4f\n", label.c_str(), p.get<double>());
  } else {
    std::cerr << "error: " << r.body.value("message", r.body["error"].get<std::string>()) << '\n';
  }
  return r.status == 200 ? 0 : 1;
}

int run_serve(const ServeArgs& a) {
  cxr::ServiceConfig cfg;
  cfg.max_body_bytes = a.max_body_bytes;
  cfg.cors_origin = a.cors_origin;
  cxr::PredictionService svc(cfg);
  svc.load_file(a.model);
  httplib::Server server;
  svc.mount(server);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << "serving " << a.model << " on http://" << a.host << ':' << a.port << "/api/v1" << std::endl;
  if (!server.listen(a.host, a.port)) {
    std::cerr << "error: cannot listen on " << a.host << ':' << a.port << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray pneumonia classifier"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a class-directory dataset");
  train->add_option("--data-dir", ta.data_dir, "Dataset root with normal/, influenza_pneumonia/, covid19_pneumonia/")->required();
  train->add_option("--output", ta.output, "Model file to write (.cxrm)")->required();
  train->add_option("--epochs", ta.config.epochs)->capture_default_str();
  train->add_option("--batch-size", ta.config.batch_size)->capture_default_str();
  train->add_option("--lr", ta.config.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--seed", ta.config.seed)->capture_default_str();
  train->add_option("--optimizer", ta.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  train->add_option("--momentum", ta.config.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--test-fraction", ta.test_fraction, "Per-class share held out for testing")->capture_default_str();
  train->add_option("--validation-fraction", ta.config.validation_fraction, "Share of training data used for validation")
      ->capture_default_str();
  train->add_option("--image-size", ta.image_size, "Square input side; 300 gives the full-size network")
      ->check(CLI::Range(12, 4096))
      ->capture_default_str();
  train->add_option("--history", ta.history, "Write per-epoch history as CSV");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a model and write a metrics report");
  eval->add_option("--model", ea.model)->required()->check(CLI::ExistingFile);
  eval->add_option("--data-dir", ea.data_dir)->required();
  eval->add_option("--report", ea.report, "JSON report path");
  eval->add_flag("--holdout", ea.holdout, "Evaluate only the test split that train held out (same --seed/--test-fraction)");
  eval->add_option("--seed", ea.seed)->capture_default_str();
  eval->add_option("--test-fraction", ea.test_fraction)->capture_default_str();
  eval->add_option("--batch-size", ea.batch_size)->capture_default_str();

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--model", pa.model)->required()->check(CLI::ExistingFile);
  predict->add_option("--image", pa.image)->required()->check(CLI::ExistingFile);
  predict->add_flag("--json", pa.json, "Print the HTTP response body");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP inference API");
  serve->add_option("--model", sa.model)->envname("CXR_MODEL_PATH")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", sa.host)->envname("CXR_HOST")->capture_default_str();
  serve->add_option("--port", sa.port)->envname("CXR_PORT")->check(CLI::Range(0, 65535))->capture_default_str();
  serve->add_option("--max-body-bytes", sa.max_body_bytes)->capture_default_str();
  serve->add_option("--cors-origin", sa.cors_origin, "Access-Control-Allow-Origin value; empty disables CORS")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  cxr::set_num_threads(threads);
  try {
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*predict) return run_predict(pa);
    if (*serve) return run_serve(sa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
