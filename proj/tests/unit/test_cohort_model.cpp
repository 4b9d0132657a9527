#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cohort/cohort_model.hpp"
#include "cohort/errors.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cohort;
using namespace cohort::testing;

namespace {

Mat integer_points(Eigen::Index rows, Eigen::Index cols, Rng& rng, int range = 3) {
    Mat m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        m(k) = static_cast<double>(static_cast<int>(rng.below(2 * range + 1)) - range);
    }
    return m;
}

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

void randomize(FusionParams& p, Rng& rng, double scale = 0.5) {
    for (ad::Param* q : p.parameters()) q->value = random_mat(q->value.rows(), q->value.cols(), rng, scale);
}

double mlp_score(const ScoringMLP& m, const Vec& a, const Vec& b) {
    Vec cat(a.size() + b.size());
    cat << a, b;
    const Vec h = (m.W1.value * cat + m.b1.value.col(0)).array().tanh().matrix();
    return (m.W2.value * h)(0) + m.b2.value(0, 0);
}

}  // namespace

TEST_CASE("select_neighbors: strict threshold and zero capacity") {
    Rng rng(1);
    Mat f = Mat::Identity(6, 6) + 0.05 * random_mat(6, 6, rng);
    std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
    CHECK(select_neighbors(0, all, f, 0.99, 5).neighbors.empty());
    const Mat same = Mat::Ones(3, 6);
    CHECK(select_neighbors(2, all, same, 0.5, 0).neighbors.empty());
    CHECK(select_neighbors(2, all, same, 0.5, 3).neighbors == std::vector<std::size_t>{0, 1, 3});
    CHECK_THROWS_AS(select_neighbors(2, all, same, 0.5, -1), ValidationError);
}

TEST_CASE("select_neighbors matches the greedy oracle") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const Mat f = integer_points(3, 6, rng, 2);
        std::vector<std::size_t> members{0, 1, 2, 3, 4, 5};
        const std::size_t anchor = rng.below(6);
        const auto got = select_neighbors(anchor, members, f, 0.9 - 0.5 * (seed % 3), 3);
        CHECK(got.neighbors == oracle::greedy_neighbors(anchor, members, f, 0.9 - 0.5 * (seed % 3), 3));
        CHECK(got.neighbors.size() <= 3);
        CHECK(std::is_sorted(got.similarity.rbegin(), got.similarity.rend()));
        CHECK(std::find(got.neighbors.begin(), got.neighbors.end(), anchor) == got.neighbors.end());
        // Input order of the members does not change the result.
        rng.shuffle(members);
        CHECK(select_neighbors(anchor, members, f, 0.9 - 0.5 * (seed % 3), 3).neighbors == got.neighbors);
    }
}

TEST_CASE("select_neighbors skips same-group candidates") {
    const Mat f = Mat::Ones(2, 4);
    const auto sel = select_neighbors(0, {0, 1, 2, 3}, f, 0.5, 5, {7, 7, 8, 8});
    CHECK(sel.neighbors == std::vector<std::size_t>{2, 3});
}

TEST_CASE("intra_aggregate") {
    const Vec anchor = (Vec(2) << 1, 0).finished();
    CHECK(intra_aggregate(anchor, {}) == anchor);
    CHECK(intra_aggregate(anchor, {anchor}) == anchor);
    const Vec out = intra_aggregate(anchor, {(Vec(2) << 0, 1).finished(), (Vec(2) << 1, 1).finished()});
    CHECK(out(0) == doctest::Approx(2.0 / 3.0));
    CHECK(out(1) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(intra_aggregate(anchor, {Vec::Zero(3)}), ValidationError);
}

TEST_CASE("inter graph: saturation, centroids and errors") {
    Rng rng(2);
    const Mat reps = random_mat(3, 6, rng);
    const auto g = build_inter_graph({0, 1, 2, 0, 1, 2}, 3, reps, 2);
    CHECK(g.edges == std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}});
    const Mat same = Mat::Constant(2, 3, 0.4);
    const auto g2 = build_inter_graph({0, 0, 1}, 2, same, 1);
    CHECK(g2.centroids.col(0) == Vec::Constant(2, 0.4));
    CHECK_THROWS_AS(build_inter_graph({0, 1, 2, 0, 1, 2}, 3, reps, 3), ValidationError);
    CHECK_THROWS_AS(build_inter_graph({0, 0, 0, 0, 0, 2}, 3, reps, 1), ValidationError);
}

TEST_CASE("inter graph matches brute-force S nearest neighbours") {
    const Mat known = (Mat(2, 5) << 0, 1, 5, 6, 20, 0, 0, 0, 1, 0).finished();
    const auto g = build_inter_graph({0, 1, 2, 3, 4}, 5, known, 2);
    // 0:{1,2} 1:{0,2} 2:{3,1} 3:{2,1} 4:{3,2}
    CHECK(g.edges == std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}, {2, 3}, {1, 3}, {3, 4}, {2, 4}});
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(9));
        std::vector<int> cohort;
        for (int i = 0; i < n; ++i) cohort.push_back(i);
        for (int extra = 0; extra < 8; ++extra) cohort.push_back(static_cast<int>(rng.below(n)));
        const Mat reps = integer_points(2, static_cast<Eigen::Index>(cohort.size()), rng);
        const int S = static_cast<int>(rng.below(n));
        const auto got = build_inter_graph(cohort, n, reps, S);
        const Mat cents = oracle::centroids(cohort, n, reps);
        CHECK((got.centroids - cents).norm() < 1e-12);
        CHECK(got.edges == oracle::snn_edges(cents, S));
        for (const auto& [a, b] : got.edges) CHECK(a < b);
    }
}

TEST_CASE("normalized adjacency") {
    InterCohortGraph g;
    g.centroids = Mat::Zero(1, 3);
    g.edges = {{0, 1}};
    const Mat a = g.normalized_adjacency();
    CHECK(a(0, 0) == doctest::Approx(0.5));
    CHECK(a(0, 1) == doctest::Approx(0.5));
    CHECK(a(2, 2) == doctest::Approx(1.0));
    CHECK(a(0, 2) == 0.0);
    CHECK(a.isApprox(a.transpose()));
}

TEST_CASE("gcn with identity weights") {
    Rng rng(3);
    GCNParams gcn(3, rng);
    gcn.W1.value = Mat::Identity(3, 3);
    gcn.W2.value = Mat::Identity(3, 3);

    InterCohortGraph edgeless;
    edgeless.centroids = random_mat(3, 4, rng);
    CHECK((gcn_forward(edgeless, gcn) - relu(edgeless.centroids)).norm() < 1e-12);

    InterCohortGraph two;
    two.centroids = (Mat(3, 2) << 1, -2, 3, 0.5, -1, -1).finished();
    two.edges = {{0, 1}};
    // Both degrees are 2, so every entry of Â is 1/2.
    const Mat Ahat = Mat::Constant(2, 2, 0.5);
    const Mat expected = relu(two.centroids * Ahat) * Ahat;
    CHECK((gcn_forward(two, gcn) - expected).norm() < 1e-12);

    InterCohortGraph tri;
    tri.centroids = random_mat(3, 3, rng);
    tri.edges = {{0, 1}, {0, 2}, {1, 2}};
    const Mat A3 = Mat::Constant(3, 3, 1.0 / 3.0);
    CHECK((gcn_forward(tri, gcn) - relu(tri.centroids * A3) * A3).norm() < 1e-12);
}

TEST_CASE("gcn gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const int d = 5;
        GCNParams gcn(d, rng);
        InterCohortGraph g;
        g.centroids = random_mat(d, 4, rng);
        g.edges = {{0, 1}, {1, 2}, {0, 3}};
        const Mat target = random_mat(d, 4, rng);
        const auto r = check_gradients(gcn.parameters(), [&](ad::Tape& tape) {
            return ad::sum_all(ad::cmul(gcn_forward(tape, g, gcn), tape.constant(target)));
        });
        CHECK(r.worst <= 1e-3);
    }
}

TEST_CASE("fuse: symmetric scores and zero branches") {
    Rng rng(4);
    const int d = 3;
    FusionParams p(d, rng);
    for (ad::Param* q : p.attention_parameters()) q->value.setZero();
    const Vec a = random_mat(d, 1, rng).col(0), b = random_mat(d, 1, rng).col(0), c = random_mat(d, 1, rng).col(0);
    const auto even = fuse(a, b, c, p);
    CHECK(even.att_intra == doctest::Approx(0.5));
    CHECK(even.att_inter == doctest::Approx(0.5));
    CHECK((even.R_final - (a + 0.5 * b + 0.5 * c)).norm() < 1e-12);

    randomize(p, rng, 2.0);
    const auto zero = fuse(a, Vec::Zero(d), Vec::Zero(d), p);
    CHECK(zero.R_final == a);
    CHECK_THROWS_AS(fuse(a, Vec::Zero(d + 1), c, p), ValidationError);
}

TEST_CASE("fuse matches a concat-mlp-softmax oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const int d = 4;
        FusionParams p(d, rng);
        randomize(p, rng);
        const Vec a = random_mat(d, 1, rng).col(0), b = random_mat(d, 1, rng).col(0), c = random_mat(d, 1, rng).col(0);
        const double sa = mlp_score(p.intra, a, b), sb = mlp_score(p.inter, a, c);
        const double wa = 1.0 / (1.0 + std::exp(sb - sa));
        const auto got = fuse(a, b, c, p);
        CHECK(got.att_intra == doctest::Approx(wa).epsilon(1e-12));
        CHECK(got.att_inter == doctest::Approx(1.0 - wa).epsilon(1e-12));
        CHECK((got.R_final - (a + wa * b + (1.0 - wa) * c)).norm() < 1e-12);
        CHECK(std::abs(got.att_intra + got.att_inter - 1.0) <= 1e-6);
    }
}

TEST_CASE("branch mask removes a branch from the softmax") {
    Rng rng(5);
    const int d = 3;
    FusionParams p(d, rng);
    randomize(p, rng);
    ad::Tape tape;
    const Mat R = random_mat(d, 3, rng), I = random_mat(d, 3, rng), E = random_mat(d, 3, rng);
    const Mat mask = (Mat(2, 3) << 1, 0, 0, 1, 1, 0).finished();
    const auto out = fuse(tape, tape.constant(R), tape.constant(I), tape.constant(E), mask, p);
    const Mat att = out.attention.value();
    CHECK(att(0, 1) == 0.0);
    CHECK(att(1, 1) == doctest::Approx(1.0));
    CHECK(att.col(2).isZero());
    CHECK(out.R_final.value().col(2) == R.col(2));
}

TEST_CASE("total loss") {
    const std::vector<double> preds{0.8, 0.3, 0.6};
    const std::vector<int> labels{1, 0, 1};
    const double bce = -(std::log(0.8) + std::log(0.7) + std::log(0.6)) / 3.0;
    CHECK(total_loss(preds, labels, 0.9, 0.0) == doctest::Approx(bce));
    CHECK(total_loss({1.0 - 1e-12, 1e-12}, {1, 0}, 0.0, 0.1) < 1e-9);
    CHECK_THROWS_AS(total_loss({1.0}, {1}, 0.0, 0.1), ValidationError);

    ad::Tape tape;
    // Negative label with logit ln(e^0.5 - 1) has BCE exactly 0.5.
    Mat logits(1, 1), y(1, 1);
    logits << std::log(std::exp(0.5) - 1.0);
    y << 0;
    ad::Var L = total_loss(tape.constant(logits), y, tape.constant(Mat::Constant(1, 1, 0.7)), 0.1);
    CHECK(L.value()(0, 0) == doctest::Approx(0.57));
}

TEST_CASE("end-to-end cohort path gradient") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const int d = 4, n = 8, cohorts = 3;
        ad::Param R_src("R_src", random_mat(d, n, rng));
        GCNParams gcn(d, rng);
        FusionParams fusion(d, rng);
        randomize(fusion, rng);
        const std::vector<int> cohort{0, 1, 2, 0, 1, 2, 0, 1};
        const Mat ref = R_src.value;
        const auto graph = build_inter_graph(cohort, cohorts, ref, 1);
        std::vector<int> cohort_cols(cohort.begin(), cohort.end());
        const Mat y = (Mat(1, n) << 1, 0, 1, 1, 0, 0, 1, 0).finished();
        // Intra: mean of self and one fixed neighbour per sample.
        std::vector<int> partner{3, 4, 5, 6, 7, 2, 0, 1};
        std::vector<ad::Param*> params{&R_src};
        for (auto* q : gcn.parameters()) params.push_back(q);
        for (auto* q : fusion.parameters()) params.push_back(q);
        const auto r = check_gradients(params, [&](ad::Tape& tape) {
            ad::Var R = ad::tanh(tape.param(R_src));
            ad::Var intra = ad::scale(ad::add(R, ad::gather_cols(R, partner)), 0.5);
            ad::Var inter = ad::gather_cols(gcn_forward(tape, graph, gcn), cohort_cols);
            auto fused = fuse(tape, R, intra, inter, Mat::Ones(2, n), fusion);
            ad::Var logits = classifier_logits(tape, fused.R_final, fusion);
            return total_loss(logits, y, tape.constant(Mat::Constant(1, 1, 0.3)), 0.1);
        });
        CHECK_MESSAGE(r.worst <= 1e-3, r.where);
    }
}

TEST_CASE("degradation: strict gamma, edgeless graph, zero gcn") {
    Rng rng(9);
    const int d = 4;
    const Mat R = random_mat(d, 12, rng);
    const Mat F = random_mat(3, 12, rng);
    std::vector<int> cohort;
    for (int i = 0; i < 12; ++i) cohort.push_back(i % 3);
    GCNParams gcn(d, rng, true);
    FusionParams fusion(d, rng);
    randomize(fusion, rng, 1.0);
    CohortEnhanceOptions opts;
    opts.gamma = 1.0;
    opts.S = 0;
    for (const auto& b : enhance_with_cohorts(R, F, cohort, 3, opts, gcn, fusion)) {
        CHECK(b.R_final == b.R_ini);
        CHECK(std::abs(b.att_intra + b.att_inter - 1.0) <= 1e-6);
    }
}

TEST_CASE("graph and attention CSV dumps") {
    const auto dir = std::filesystem::temp_directory_path() / "cohort_unit";
    std::filesystem::create_directories(dir);
    InterCohortGraph g;
    g.centroids = Mat::Zero(1, 3);
    g.edges = {{0, 2}, {1, 2}};
    save_inter_graph_csv(g, dir / "graph.csv");
    save_attention_csv({{"p/1", 0.25, 0.75}}, dir / "att.csv");
    std::ifstream gi(dir / "graph.csv"), ai(dir / "att.csv");
    std::string l1, l2, l3;
    std::getline(gi, l1);
    std::getline(gi, l2);
    std::getline(gi, l3);
    CHECK(l1 == "cohort_i,cohort_j");
    CHECK(l2 == "0,2");
    CHECK(l3 == "1,2");
    std::getline(ai, l1);
    std::getline(ai, l2);
    CHECK(l1 == "sample_id,att_intra,att_inter");
    CHECK(l2.rfind("p/1,0.25,0.75", 0) == 0);
}
