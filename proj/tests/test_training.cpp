#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <numeric>

#include "temprox/synth.hpp"
#include "temprox/training.hpp"
#include "test_helpers.hpp"

using namespace temprox;
using namespace temprox::train;
using autodiff::TensorPtr;

namespace {

data::Dataset small_synth(std::uint64_t seed = 5) {
    data::SynthConfig cfg;
    cfg.num_users = 120;
    cfg.num_items = 60;
    cfg.horizon_days = 40;
    cfg.num_trends = 3;
    cfg.trend_window = 10;
    cfg.pool_size = 8;
    cfg.p_trend = 0.7;
    cfg.events_min = 5;
    cfg.events_max = 14;
    cfg.seed = seed;
    return data::preprocess(data::synth_generate(cfg), 2, 2);
}

model::ModelConfig small_model(const data::Dataset& ds) {
    model::ModelConfig mc;
    mc.num_items = ds.num_items();
    mc.num_days = static_cast<std::size_t>(ds.day_span());
    mc.d = 16;
    mc.layers = 1;
    mc.n = 12;
    mc.k_t = 16;
    mc.k_p = 2;
    mc.dropout_rate = 0.2;
    return mc;
}

TrainConfig small_train(std::size_t epochs) {
    TrainConfig tc;
    tc.batch_size = 32;
    tc.epochs = epochs;
    tc.patience = epochs;  // no early exit unless requested
    tc.seed = 11;
    tc.rho = 0.3;
    tc.delta = 10;
    tc.tau = 0.1;
    tc.lambda = 0.3;
    tc.eval_num_neg = 30;
    return tc;
}

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

double cosine(const double* a, const double* b, std::size_t d) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < d; ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return aa == 0 || bb == 0 ? 0.0 : ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("adam first step moves by about -lr in the gradient direction") {
    auto t = autodiff::make_tensor({2}, {1.0, -2.0}, true);
    t->ensure_grad();
    t->grad = {0.5, -0.25};
    std::vector<std::pair<std::string, TensorPtr>> params{{"p", t}};
    AdamState state;
    state.init(params);
    TrainConfig cfg;
    cfg.lr = 0.01;
    adam_step(params, state, cfg);
    // bias correction makes mhat=g, vhat=g^2 on step 1, so the update is
    // -lr * g/(|g|+eps) ~= -lr * sign(g)
    REQUIRE(t->values[0] == Catch::Approx(1.0 - 0.01).margin(1e-6));
    REQUIRE(t->values[1] == Catch::Approx(-2.0 + 0.01).margin(1e-6));
}

TEST_CASE("adam leaves parameters alone on zero gradient") {
    auto t = autodiff::make_tensor({3}, {1.0, 2.0, 3.0}, true);
    t->ensure_grad();
    std::vector<std::pair<std::string, TensorPtr>> params{{"p", t}};
    AdamState state;
    state.init(params);
    TrainConfig cfg;  // weight_decay = 0
    adam_step(params, state, cfg);
    REQUIRE(t->values == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("adam descends the quadratic bowl monotonically after warm-up") {
    auto x = autodiff::make_tensor({1}, {1.0}, true);
    std::vector<std::pair<std::string, TensorPtr>> params{{"x", x}};
    AdamState state;
    state.init(params);
    TrainConfig cfg;
    cfg.lr = 0.01;
    double prev = std::fabs(x->values[0]);
    for (int step = 1; step <= 100; ++step) {
        x->ensure_grad();
        x->grad[0] = 2.0 * x->values[0];  // f(x) = x^2
        adam_step(params, state, cfg);
        const double cur = std::fabs(x->values[0]);
        if (step > 5) REQUIRE(cur <= prev + 1e-12);
        prev = cur;
    }
    REQUIRE(prev < 0.5);
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
    auto t = autodiff::make_tensor({2}, {1.0, 2.0}, true);
    t->ensure_grad();
    t->grad = {0.0, std::numeric_limits<double>::quiet_NaN()};
    std::vector<std::pair<std::string, TensorPtr>> params{{"item_table", t}};
    AdamState state;
    state.init(params);
    TrainConfig cfg;
    try {
        adam_step(params, state, cfg);
        FAIL("expected contract_error");
    } catch (const contract_error& e) {
        REQUIRE(std::string(e.what()).find("item_table") != std::string::npos);
    }
}

TEST_CASE("ablation names round-trip and reject unknowns") {
    for (auto a : {Ablation::full, Ablation::no_tcl, Ablation::no_abs_mhar, Ablation::no_rel_mhar,
                   Ablation::no_mhar})
        REQUIRE(ablation_from_name(ablation_name(a)) == a);
    REQUIRE_THROWS_AS(ablation_from_name("redacted"), config_error);
}

TEST_CASE("no_mhar forward ignores the days matrix") {
    auto ds = small_synth();
    auto mc = small_model(ds);
    TrainConfig tc = small_train(1);
    apply_ablation(Ablation::no_mhar, mc, tc);
    model::Model m(mc, 3);
    auto rows = data::build_sequences(ds, mc.n);
    auto batch = data::make_batch(rows, 0, 8);
    auto shuffled = batch;
    auto rng = make_rng(1);
    std::shuffle(shuffled.days.begin(), shuffled.days.end(), rng);
    auto r1 = make_rng(0), r2 = make_rng(0);
    auto h1 = m.forward(nullptr, batch, false, r1);
    auto h2 = m.forward(nullptr, shuffled, false, r2);
    REQUIRE(h1->values == h2->values);
}

TEST_CASE("no_abs_mhar forward only sees day differences") {
    auto ds = small_synth();
    auto mc = small_model(ds);
    TrainConfig tc = small_train(1);
    apply_ablation(Ablation::no_abs_mhar, mc, tc);
    REQUIRE(mc.head_plan.size() == 2);  // d over two heads
    model::Model m(mc, 3);
    auto rows = data::build_sequences(ds, mc.n);
    auto batch = data::make_batch(rows, 0, 8);
    auto shifted = batch;
    for (auto& d : shifted.days) d += 5;
    auto r1 = make_rng(0), r2 = make_rng(0);
    auto h1 = m.forward(nullptr, batch, false, r1);
    auto h2 = m.forward(nullptr, shifted, false, r2);
    for (std::size_t i = 0; i < h1->size(); ++i)
        REQUIRE(h1->values[i] == Catch::Approx(h2->values[i]).margin(1e-9));
}

TEST_CASE("training runs are bit-exact under identical seeds") {
    auto ds = small_synth();
    const std::string p1 = temp_file("temprox_train1.ckpt"), p2 = temp_file("temprox_train2.ckpt");
    for (const std::string& path : {p1, p2}) {
        Trainer trainer(ds, small_model(ds), small_train(2));
        trainer.fit();
        trainer.model().save_checkpoint(path);
    }
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(!s1.empty());
    REQUIRE(s1 == s2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("no_tcl trajectory equals the lambda=0 trajectory exactly") {
    auto ds = small_synth();
    auto tc_zero = small_train(2);
    tc_zero.lambda = 0.0;
    Trainer a(ds, small_model(ds), tc_zero);
    a.fit();

    auto tc_ablate = small_train(2);
    tc_ablate.ablation = Ablation::no_tcl;  // forces lambda 0 through wiring
    Trainer b(ds, small_model(ds), tc_ablate);
    b.fit();

    auto pa = a.model().named_parameters(), pb = b.model().named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i].second->values == pb[i].second->values);
}

TEST_CASE("a lambda>0 run differs from the pure-MLM run") {
    auto ds = small_synth();
    Trainer a(ds, small_model(ds), small_train(1));
    a.train_epoch(1);
    auto tc0 = small_train(1);
    tc0.lambda = 0.0;
    Trainer b(ds, small_model(ds), tc0);
    b.train_epoch(1);
    double diff = 0.0;
    auto pa = a.model().named_parameters(), pb = b.model().named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pa[i].second->size(); ++j)
            diff = std::max(diff, std::fabs(pa[i].second->values[j] - pb[i].second->values[j]));
    REQUIRE(diff > 0.0);
}

TEST_CASE("training loss decreases over a short synthetic run") {
    auto ds = small_synth();
    Trainer trainer(ds, small_model(ds), small_train(8));
    std::vector<double> totals;
    for (std::size_t e = 1; e <= 8; ++e) totals.push_back(trainer.train_epoch(e).total_loss);
    REQUIRE(totals.back() < totals.front());
}

TEST_CASE("fit writes one metrics line per epoch and keeps the best checkpoint") {
    auto ds = small_synth();
    auto tc = small_train(5);
    Trainer trainer(ds, small_model(ds), tc);
    std::ostringstream log;
    auto result = trainer.fit(&log);
    REQUIRE(result.epochs_run == 5);
    std::size_t lines = 0;
    std::string line;
    std::istringstream in(log.str());
    double best_logged = -1.0;
    while (std::getline(in, line)) {
        ++lines;
        auto j = nlohmann::json::parse(line);
        REQUIRE(j.contains("mlm_loss"));
        REQUIRE(j.contains("tcl_loss"));
        REQUIRE(j.contains("val_ndcg_at_k"));
        best_logged = std::max(best_logged, j["val_ndcg_at_k"].get<double>());
    }
    REQUIRE(lines == 5);
    REQUIRE(result.best_val_ndcg == Catch::Approx(best_logged));
    // the returned model really is the best checkpoint: re-evaluating with
    // the fit-internal seed reproduces the best logged NDCG
    auto val = eval::evaluate(trainer.model(), ds, data::EvalSplit::validation, tc.eval_k,
                              tc.eval_num_neg, derive_seed(tc.seed, 0xE7A1F));
    REQUIRE(val.ndcg_at_k == Catch::Approx(result.best_val_ndcg));
}

TEST_CASE("early stopping halts after patience epochs without improvement") {
    auto ds = small_synth();
    auto tc = small_train(50);
    tc.patience = 2;
    tc.lr = 0.0001;
    Trainer trainer(ds, small_model(ds), tc);
    auto result = trainer.fit();
    REQUIRE(result.epochs_run < 50);
    REQUIRE(result.epochs_run >= result.best_epoch);
    REQUIRE(result.epochs_run - result.best_epoch <= 2);
}

TEST_CASE("pseudo-positive stays closer to its anchor than strangers after training") {
    auto ds = small_synth();
    auto mc = small_model(ds);
    Trainer trainer(ds, mc, small_train(3));
    for (std::size_t e = 1; e <= 3; ++e) trainer.train_epoch(e);
    const auto& m = trainer.model();

    auto rows = data::build_training_rows(ds, mc.n);
    double cos_pseudo = 0.0, cos_stranger = 0.0;
    std::size_t anchors = 0;
    auto stranger_rng = make_rng(17);
    for (std::size_t start = 0; start + 40 <= rows.size(); start += 40) {
        auto batch = data::make_batch(rows, start, 40);
        auto r1 = make_rng(derive_seed(100, start));
        auto r2 = make_rng(derive_seed(200, start));
        auto h1 = m.forward(nullptr, batch, true, r1);
        auto h2 = m.forward(nullptr, batch, true, r2);
        for (std::size_t b = 0; b < batch.size; ++b) {
            const std::size_t pos = batch.last_real(b);
            const double* anchor = h1->values.data() + (b * batch.n + pos) * mc.d;
            const double* pseudo = h2->values.data() + (b * batch.n + pos) * mc.d;
            std::size_t other = std::uniform_int_distribution<std::size_t>(0, batch.size - 1)(stranger_rng);
            if (other == b) other = (other + 1) % batch.size;
            const double* stranger =
                h1->values.data() + (other * batch.n + batch.last_real(other)) * mc.d;
            cos_pseudo += cosine(anchor, pseudo, mc.d);
            cos_stranger += cosine(anchor, stranger, mc.d);
            ++anchors;
        }
    }
    REQUIRE(anchors >= 100);
    REQUIRE(cos_pseudo / static_cast<double>(anchors) >
            cos_stranger / static_cast<double>(anchors));
}

TEST_CASE("sweep of one cell equals a single fit, and rows match the grid") {
    auto ds = small_synth();
    auto mc = small_model(ds);
    auto tc = small_train(2);

    SweepGrid unit_grid;  // all dims default to the base config
    auto results = sweep(ds, mc, tc, unit_grid, 2);
    REQUIRE(results.size() == 1);
    Trainer single(ds, mc, tc);
    auto fit = single.fit();
    REQUIRE(results[0].val_ndcg == Catch::Approx(fit.best_val_ndcg));
    REQUIRE(results[0].val_hr == Catch::Approx(fit.best_val_hr));

    SweepGrid grid;
    grid.delta = {5, 10};
    grid.lambda = {0.1, 0.3};
    grid.seeds = {1, 2, 3};
    auto multi = sweep(ds, mc, tc, grid, 1, 2);
    REQUIRE(multi.size() == 2 * 2 * 3);
    const std::string csv = temp_file("temprox_sweep.csv");
    write_sweep_csv(multi, csv);
    std::ifstream in(csv);
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == multi.size() + 1);  // header + one row per cell
    std::remove(csv.c_str());
}
