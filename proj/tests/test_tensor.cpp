#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "zidian/adamw.hpp"
#include "zidian/checkpoint.hpp"
#include "zidian/gradcheck.hpp"
#include "zidian/tensor.hpp"

using namespace zidian;

TEST_CASE("softmax basics") {
    auto t = Tensor<double>::from({3}, {0, 0, 0});
    auto y = softmax_lastdim(t);
    for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // Max subtraction keeps huge logits finite.
    auto big = Tensor<double>::from({2}, {1000, 1000});
    auto yb = softmax_lastdim(big);
    CHECK(yb.data()[0] == doctest::Approx(0.5));
    CHECK(yb.data()[1] == doctest::Approx(0.5));
    CHECK(std::isfinite(yb.data()[0]));

    auto bigf = Tensor<float>::from({2}, {1000.0f, 1000.0f});
    auto ybf = softmax_lastdim(bigf);
    CHECK(ybf.data()[0] == doctest::Approx(0.5f));
}

TEST_CASE("softmax rows sum to one and are positive (random property)") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int rows = 1 + static_cast<int>(rng.below(4));
        const int cols = 2 + static_cast<int>(rng.below(6));
        Tensor<float> x = randn<float>({rows, cols}, rng, 5.0);
        Tensor<float> y = softmax_lastdim(x);
        for (int r = 0; r < rows; ++r) {
            double sum = 0;
            for (int c = 0; c < cols; ++c) {
                const float v = y.data()[r * cols + c];
                CHECK(v > 0.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("dot") {
    auto a = Tensor<double>::from({2}, {1, 2});
    auto b = Tensor<double>::from({2}, {3, 4});
    CHECK(dot(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("cross entropy closed forms") {
    auto logits = Tensor<double>::from({1, 3}, {0, 0, 0});
    CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    auto sat = Tensor<double>::from({1, 2}, {30, -30});
    CHECK(cross_entropy(sat, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy matches brute-force log softmax oracle") {
    // Oracle: -log(exp(x_t) / sum exp(x_j)) accumulated in double, no
    // max-subtraction tricks.
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int B = 1 + static_cast<int>(rng.below(4));
        const int C = 2 + static_cast<int>(rng.below(7));
        Tensor<double> logits = randn<double>({B, C}, rng, 2.0);
        std::vector<int> targets;
        for (int r = 0; r < B; ++r) targets.push_back(static_cast<int>(rng.below(C)));
        double expect = 0;
        for (int r = 0; r < B; ++r) {
            double denom = 0;
            for (int c = 0; c < C; ++c) denom += std::exp(logits.data()[r * C + c]);
            expect += -std::log(std::exp(logits.data()[r * C + targets[r]]) / denom);
        }
        expect /= B;
        CHECK(cross_entropy(logits, targets).item() == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("cross entropy rejects out-of-range targets") {
    auto logits = Tensor<double>::from({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(cross_entropy(logits, {3}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(logits, {-1}), ShapeError);
}

TEST_CASE("shape mismatches are structured faults") {
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, Tensor<double>::from({3, 1}, {1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(dot(b, Tensor<double>::from({2}, {1, 2})), ShapeError);
}

TEST_CASE("backward linear and mean rules") {
    Tape<double> tape;
    auto w = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
    w.set_requires_grad(true);
    auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
    {
        TapeScope<double> scope(tape);
        auto loss = dot(w, x);
        tape.backward(loss);
    }
    for (int i = 0; i < 3; ++i) CHECK(w.grad_at(i) == doctest::Approx(x.data()[i]));

    Tape<double> tape2;
    auto w2 = Tensor<double>::from({4}, {1, 2, 3, 4});
    w2.set_requires_grad(true);
    {
        TapeScope<double> scope(tape2);
        auto loss = mean(w2);
        tape2.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(w2.grad_at(i) == doctest::Approx(0.25));
}

TEST_CASE("backward requires a scalar") {
    Tape<double> tape;
    auto w = Tensor<double>::from({2}, {1, 2});
    w.set_requires_grad(true);
    TapeScope<double> scope(tape);
    auto y = scale(w, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("gradients not reachable from the loss stay zero") {
    Tape<double> tape;
    auto used = Tensor<double>::from({2}, {1, 2});
    used.set_requires_grad(true);
    auto unused = Tensor<double>::from({2}, {3, 4});
    unused.set_requires_grad(true);
    {
        TapeScope<double> scope(tape);
        auto probe = scale(unused, 2.0);  // recorded but never reaches the loss
        auto loss = mean(used);
        tape.backward(loss);
        (void)probe;
    }
    CHECK(unused.grad_at(0) == 0.0);
    CHECK(unused.grad_at(1) == 0.0);
    CHECK(used.grad_at(0) == doctest::Approx(0.5));
}

TEST_CASE("finite-difference gradcheck for every op") {
    for (const GradcheckResult& r : op_gradchecks(20240601)) {
        INFO(r.name);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("adamw fixed point and descent") {
    // Zero grad + zero weight decay leaves parameters untouched.
    auto w = Tensor<float>::from({2}, {1.0f, -2.0f});
    w.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW<float> opt({w}, cfg);
    opt.step();
    CHECK(w.data()[0] == 1.0f);
    CHECK(w.data()[1] == -2.0f);

    // One step on f(w) = w^2 from w = 1 with lr = 0.1 decreases w.
    auto w2 = Tensor<double>::from({1}, {1.0});
    w2.set_requires_grad(true);
    AdamWConfig cfg2;
    cfg2.lr = 0.1;
    cfg2.weight_decay = 0.0;
    AdamW<double> opt2({w2}, cfg2);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = mul(w2, w2);
        tape.backward(loss);
    }
    opt2.step();
    CHECK(w2.data()[0] < 1.0);
}

TEST_CASE("adamw drives a 2-d quadratic to convergence") {
    // f(w) = (w0 - 3)^2 + 2 (w1 + 1)^2, 200 steps.
    auto w = Tensor<double>::from({2}, {0.0, 0.0});
    w.set_requires_grad(true);
    auto target = Tensor<double>::from({2}, {3.0, -1.0});
    auto coeff = Tensor<double>::from({2}, {1.0, 2.0});
    AdamWConfig cfg;
    cfg.lr = 0.08;
    cfg.weight_decay = 0.0;
    AdamW<double> opt({w}, cfg);
    auto eval = [&] {
        auto diff = sub(w, target);
        return dot(mul(diff, coeff), diff);
    };
    const double initial = eval().item();
    for (int i = 0; i < 200; ++i) {
        Tape<double> tape;
        {
            TapeScope<double> scope(tape);
            auto loss = eval();
            tape.backward(loss);
        }
        opt.step();
        opt.zero_grad();
    }
    CHECK(eval().item() < 1e-3 * initial);
}

TEST_CASE("checkpoint round trip is byte-identical") {
    Rng rng(5);
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.emplace_back("alpha", randn<float>({3, 4}, rng, 1.0));
    tensors.emplace_back("beta", randn<float>({7}, rng, 1.0));
    nlohmann::json meta;
    meta["note"] = "round-trip";

    const std::string p1 = "ck_a.bin", p2 = "ck_b.bin";
    save_checkpoint(p1, tensors, meta);
    auto loaded = load_checkpoint<float>(p1);
    CHECK(loaded.meta.at("note") == "round-trip");
    REQUIRE(loaded.tensors.size() == 2);
    CHECK(loaded.tensors[0].first == "alpha");
    save_checkpoint(p2, loaded.tensors, loaded.meta);

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint header validation") {
    const std::string p = "ck_bad.bin";
    {
        std::ofstream out(p, std::ios::binary);
        out << "NOPE" << std::string(12, '\0');
    }
    CHECK_THROWS_AS(load_checkpoint<float>(p), CheckpointError);
    std::remove(p.c_str());
    CHECK_THROWS_AS(load_checkpoint<float>("does_not_exist.bin"), CheckpointError);
}

TEST_CASE("checkpoint converts between storage scalars") {
    std::vector<std::pair<std::string, Tensor<double>>> tensors;
    tensors.emplace_back("x", Tensor<double>::from({2}, {1.5, -2.25}));
    save_checkpoint("ck_f64.bin", tensors);
    auto as_float = load_checkpoint<float>("ck_f64.bin");
    CHECK(as_float.tensors[0].second.data()[0] == 1.5f);
    CHECK(as_float.tensors[0].second.data()[1] == -2.25f);
    std::remove("ck_f64.bin");
}

TEST_CASE("identical seeds give bit-identical initialization") {
    Rng a(99), b(99);
    Tensor<float> ta = randn<float>({4, 4}, a, 0.02);
    Tensor<float> tb = randn<float>({4, 4}, b, 0.02);
    for (int64_t i = 0; i < ta.numel(); ++i) CHECK(ta.data()[i] == tb.data()[i]);

    // Forked substreams are independent of sibling consumption.
    Rng root1(5), root2(5);
    Rng m1 = root1.fork("mem", 0);
    (void)root1.fork("cl4sa", 0).next_u64();
    Rng m2 = root2.fork("mem", 0);
    CHECK(m1.next_u64() == m2.next_u64());
}
