#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vat/grad_check.hpp"
#include "vat/ops.hpp"
#include "vat/rng.hpp"

using namespace vat;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
    return t;
}

// Independent triple-nested-loop reference for C = A * B.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t l = 0; l < k; ++l)
                c[static_cast<size_t>(i * n + j)] += a.at({i, l}) * b.at({l, j});
    return c;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {3.5, -1.25, 2.0, 7.75});
    Tensor out = matmul(eye, m);
    for (int64_t i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);

    Tensor a = Tensor::from_data({1, 1}, {2.0});
    Tensor b = Tensor::from_data({1, 1}, {3.0});
    CHECK(matmul(a, b).item() == 6.0);
}

TEST_CASE("matmul matches the loop oracle") {
    Rng rng(101);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor c = matmul(a, b);
    const std::vector<double> ref = matmul_oracle(a, b);
    for (int64_t i = 0; i < c.numel(); ++i)
        CHECK(std::abs(c.data()[i] - ref[static_cast<size_t>(i)]) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("matmul backward accumulates dA = dC B^T and dB = A^T dC") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum_all(matmul(a, b, &tape), &tape);
    backward(loss, tape);
    // dC is all-ones, so dA[i,l] = sum_j B[l,j], dB[l,j] = sum_i A[i,l].
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t l = 0; l < 4; ++l) {
            double want = 0.0;
            for (int64_t j = 0; j < 2; ++j) want += b.at({l, j});
            CHECK(a.grad()[static_cast<size_t>(i * 4 + l)] == doctest::Approx(want).epsilon(1e-12));
        }
    for (int64_t l = 0; l < 4; ++l)
        for (int64_t j = 0; j < 2; ++j) {
            double want = 0.0;
            for (int64_t i = 0; i < 3; ++i) want += a.at({i, l});
            CHECK(b.grad()[static_cast<size_t>(l * 2 + j)] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("softmax basics") {
    Tensor x = Tensor::from_data({2}, {0.0, 0.0});
    Tensor s = softmax_lastdim(x);
    CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.data()[1] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor y = Tensor::from_data({2}, {0.0, std::log(3.0)});
    Tensor sy = softmax_lastdim(y);
    CHECK(sy.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sy.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and row normalization") {
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({4, 7}, rng, 3.0);
        const double c = rng.uniform(-50.0, 50.0);
        Tensor shifted = add_scalar(x, c);
        Tensor s0 = softmax_lastdim(x);
        Tensor s1 = softmax_lastdim(shifted);
        for (int64_t i = 0; i < s0.numel(); ++i)
            CHECK(std::abs(s0.data()[i] - s1.data()[i]) < 1e-12);
        for (int64_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int64_t j = 0; j < 7; ++j) sum += s0.at({r, j});
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("layer_norm limit cases") {
    Tensor gain = Tensor::from_data({3}, {1, 1, 1});
    Tensor beta = Tensor::from_data({3}, {2.5, -1.0, 0.25});
    Tensor constant = Tensor::from_data({1, 3}, {4.0, 4.0, 4.0});
    Tensor out = layer_norm(constant, gain, beta, 1e-6);
    for (int64_t j = 0; j < 3; ++j)
        CHECK(out.data()[j] == doctest::Approx(beta.data()[j]).epsilon(1e-9));

    Tensor gain2 = Tensor::from_data({2}, {1, 1});
    Tensor zero2 = Tensor::from_data({2}, {0, 0});
    Tensor pm = Tensor::from_data({1, 2}, {1.0, -1.0});
    Tensor out2 = layer_norm(pm, gain2, zero2, 1e-12);
    CHECK(out2.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out2.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm output statistics") {
    Rng rng(9);
    Tensor x = random_tensor({1, 16}, rng, 2.0);
    Tensor gain = Tensor::full({16}, 1.0);
    Tensor bias = Tensor::zeros({16});
    Tensor out = layer_norm(x, gain, bias, 1e-10);
    double mean = 0.0;
    for (int64_t j = 0; j < 16; ++j) mean += out.data()[j];
    mean /= 16.0;
    CHECK(std::abs(mean) < 1e-10);
    double var = 0.0;
    for (int64_t j = 0; j < 16; ++j) var += (out.data()[j] - mean) * (out.data()[j] - mean);
    var /= 16.0;
    CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("gelu exact values") {
    Tensor x = Tensor::from_data({3}, {0.0, 10.0, 1.0});
    Tensor out = gelu(x);
    CHECK(out.data()[0] == 0.0);
    CHECK(std::abs(out.data()[1] - 10.0) < 1e-9);
    const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(out.data()[2] == doctest::Approx(phi1).epsilon(1e-12));
}

TEST_CASE("attention with identical keys averages the values") {
    // 1 head, 2 queries, 3 identical keys.
    Tensor q = Tensor::from_data({1, 2, 2}, {1, 0, 0, 1});
    Tensor k = Tensor::from_data({1, 3, 2}, {0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
    Tensor v = Tensor::from_data({1, 3, 2}, {1, 2, 3, 4, 5, 6});
    auto [out, scores] = scaled_dot_attention(q, k, v);
    for (int64_t i = 0; i < scores.numel(); ++i)
        CHECK(scores.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(out.at({0, 0, 0}) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out.at({0, 1, 1}) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("attention matches a brute-force oracle") {
    Rng rng(31);
    const int64_t h = 2, nq = 3, nk = 5, dh = 4;
    Tensor q = random_tensor({h, nq, dh}, rng);
    Tensor k = random_tensor({h, nk, dh}, rng);
    Tensor v = random_tensor({h, nk, dh}, rng);
    auto [out, scores] = scaled_dot_attention(q, k, v);

    for (int64_t hh = 0; hh < h; ++hh)
        for (int64_t i = 0; i < nq; ++i) {
            std::vector<double> logits(static_cast<size_t>(nk), 0.0);
            for (int64_t j = 0; j < nk; ++j) {
                double dot = 0.0;
                for (int64_t d = 0; d < dh; ++d) dot += q.at({hh, i, d}) * k.at({hh, j, d});
                logits[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
            }
            double mx = logits[0];
            for (double l : logits) mx = std::max(mx, l);
            double denom = 0.0;
            for (double l : logits) denom += std::exp(l - mx);
            double row_sum = 0.0;
            for (int64_t j = 0; j < nk; ++j) {
                const double sij = std::exp(logits[static_cast<size_t>(j)] - mx) / denom;
                CHECK(std::abs(scores.at({hh, i, j}) - sij) < 1e-10);
                row_sum += scores.at({hh, i, j});
            }
            CHECK(std::abs(row_sum - 1.0) < 1e-9);
            for (int64_t d = 0; d < dh; ++d) {
                double o = 0.0;
                for (int64_t j = 0; j < nk; ++j) o += scores.at({hh, i, j}) * v.at({hh, j, d});
                CHECK(std::abs(out.at({hh, i, d}) - o) < 1e-10);
            }
        }
}

TEST_CASE("attention rejects head mismatches") {
    Tensor q = Tensor::zeros({2, 3, 4});
    Tensor k = Tensor::zeros({3, 5, 4});
    Tensor v = Tensor::zeros({3, 5, 4});
    CHECK_THROWS_AS(scaled_dot_attention(q, k, v), DimensionError);
    Tensor k2 = Tensor::zeros({2, 5, 3});
    CHECK_THROWS_AS(scaled_dot_attention(q, k2, v), DimensionError);
}

TEST_CASE("backward through squares and inner products") {
    Tensor x = Tensor::from_data({1}, {3.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum_all(mul(x, x, &tape), &tape);
    backward(loss, tape);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

    Tensor a = Tensor::from_data({3, 1}, {1.5, -2.0, 0.5});
    Tensor b = Tensor::from_data({3, 1}, {4.0, 1.0, -1.0});
    b.set_requires_grad(true);
    Tape tape2;
    Tensor ip = sum_all(mul(a, b, &tape2), &tape2);
    backward(ip, tape2);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(b.grad()[static_cast<size_t>(i)] == doctest::Approx(a.data()[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::zeros({2, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = add_scalar(x, 1.0, &tape);
    CHECK_THROWS_AS(backward(y, tape), ContractError);
}

TEST_CASE("tape reset empties the op list") {
    Tensor x = Tensor::from_data({1}, {2.0});
    x.set_requires_grad(true);
    Tape tape;
    sum_all(mul(x, x, &tape), &tape);
    CHECK(tape.size() > 0);
    tape.reset();
    CHECK(tape.empty());
}

TEST_CASE("gradient accumulation is additive over backward runs") {
    Rng rng(77);
    Tensor w = random_tensor({4, 4}, rng);
    w.set_requires_grad(true);
    Tensor x1 = random_tensor({2, 4}, rng);
    Tensor x2 = random_tensor({2, 4}, rng);

    auto loss_of = [&w](const Tensor& x, Tape* tape) {
        return sum_all(gelu(matmul(x, w, tape), tape), tape);
    };

    // Combined: backward of l1 + l2 on one tape.
    Tape tape;
    Tensor combined = add(loss_of(x1, &tape), loss_of(x2, &tape), &tape);
    backward(combined, tape);
    std::vector<double> g_combined = w.grad();

    // Separate runs accumulate into the same grad buffer.
    w.zero_grad();
    Tape t1, t2;
    backward(loss_of(x1, &t1), t1);
    backward(loss_of(x2, &t2), t2);
    for (size_t i = 0; i < g_combined.size(); ++i)
        CHECK(std::abs(g_combined[i] - w.grad()[i]) < 1e-12);
}

TEST_CASE("grad_check on simple functions") {
    Tensor x = Tensor::from_data({1}, {3.0});
    x.set_requires_grad(true);
    auto square = [&x](Tape* tape) { return sum_all(mul(x, x, tape), tape); };
    GradCheckReport r = grad_check(square, {{"x", x}}, {});
    CHECK(r.max_rel_error < 1e-8);

    Rng rng(5);
    Tensor theta = random_tensor({6, 1}, rng);
    theta.set_requires_grad(true);
    Tensor coef = random_tensor({6, 1}, rng);
    auto lin = [&theta, &coef](Tape* tape) { return sum_all(mul(coef, theta, tape), tape); };
    GradCheckReport r2 = grad_check(lin, {{"theta", theta}}, {});
    CHECK(r2.max_rel_error < 1e-10);
}

TEST_CASE("grad_check detects non-determinism") {
    Tensor x = Tensor::from_data({1}, {1.0});
    x.set_requires_grad(true);
    int calls = 0;
    auto f = [&x, &calls](Tape* tape) {
        ++calls;
        return sum_all(add_scalar(x, 0.001 * calls, tape), tape);
    };
    CHECK_THROWS_AS(grad_check(f, {{"x", x}}, {}), ContractError);
}

TEST_CASE("grad_check validates eps range") {
    Tensor x = Tensor::from_data({1}, {1.0});
    x.set_requires_grad(true);
    auto f = [&x](Tape* tape) { return sum_all(x.requires_grad() ? mul(x, x, tape) : x, tape); };
    GradCheckOptions opt;
    opt.eps = 1e-2;
    CHECK_THROWS_AS(grad_check(f, {{"x", x}}, opt), ContractError);
}

TEST_CASE("seeded generator reproduces bit-identical streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(123), d(124);
    bool differ = false;
    for (int i = 0; i < 10; ++i) differ = differ || (c.next_u64() != d.next_u64());
    CHECK(differ);

    Rng n1(9), n2(9);
    for (int i = 0; i < 100; ++i) {
        const double v1 = n1.normal(), v2 = n2.normal();
        CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
    }
}

TEST_CASE("op sequences are bit-deterministic") {
    auto run = [] {
        Rng rng(2024);
        Tensor a = random_tensor({8, 8}, rng);
        Tensor b = random_tensor({8, 8}, rng);
        Tensor out = softmax_lastdim(gelu(matmul(a, b)));
        return out.values();
    };
    const std::vector<double> r1 = run(), r2 = run();
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}
