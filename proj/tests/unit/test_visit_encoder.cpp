#include <doctest.h>

#include "cohort/errors.hpp"
#include "cohort/visit_encoder.hpp"
#include "test_support.hpp"

using namespace cohort;
using namespace cohort::testing;

namespace {

Visit make_visit(CodeSet dx, CodeSet rx, CodeSet lab) {
    Visit v;
    v.visit_id = "v";
    v.diagnosis_codes = std::move(dx);
    v.medication_codes = std::move(rx);
    v.lab_codes = std::move(lab);
    return v;
}

// f^D as the mean of fixed per-code columns.
DiagnosisAggregate column_mean(const Mat& table) {
    return [table](const CodeSet& s) {
        Vec out = Vec::Zero(table.rows());
        for (auto i : s) out += table.col(i);
        return Vec(out / static_cast<double>(s.size()));
    };
}

void randomize(VisitEncoderParams& p, Rng& rng) {
    for (ad::Param* q : p.parameters()) q->value = random_mat(q->value.rows(), q->value.cols(), rng, 0.5);
}

}  // namespace

TEST_CASE("multi-hot encoding") {
    CHECK(encode_code_multihot({}, CodeKind::medication, 4) == Vec::Zero(4));
    const MedicalCode a{CodeKind::lab, "a", 0}, d{CodeKind::lab, "d", 3};
    Vec expected(5);
    expected << 1, 0, 0, 1, 0;
    CHECK(encode_code_multihot({a, d}, CodeKind::lab, 5) == expected);
    CHECK(encode_code_multihot({a, d, d}, CodeKind::lab, 5) == expected);
    CHECK_THROWS_AS(encode_code_multihot({a}, CodeKind::diagnosis, 5), ValidationError);
    CHECK_THROWS_AS(encode_code_multihot({MedicalCode{CodeKind::lab, "z", 9}}, CodeKind::lab, 5), ValidationError);
}

TEST_CASE("zero weights give the output bias") {
    Rng rng(1);
    VisitEncoderParams p(4, 3, 2, 5, rng);
    for (ad::Param* q : p.parameters()) q->value.setZero();
    p.b_V.value = Mat::Constant(4, 1, 0.7);
    const Mat table = random_mat(5, 6, rng);
    for (const auto& v : {make_visit({0}, {1}, {0}), make_visit({2, 4}, {}, {1}), make_visit({5}, {0, 2}, {})}) {
        CHECK(encode_visit(v, p, column_mean(table)).vector == Vec::Constant(4, 0.7));
    }
}

TEST_CASE("empty medication and lab vocabularies reduce to the biases") {
    Rng rng(2);
    VisitEncoderParams p(3, 0, 0, 4, rng);
    randomize(p, rng);
    const Mat table = random_mat(4, 3, rng);
    const Visit v = make_visit({0, 2}, {}, {});
    const Vec out = encode_visit(v, p, column_mean(table)).vector;
    CHECK(out.allFinite());

    const Vec fD = column_mean(table)(v.diagnosis_codes);
    Vec ml(6);
    ml << p.b_M.value.col(0), p.b_L.value.col(0);
    const Vec inter = p.W_Vi.value * ml + p.b_Vi.value.col(0);
    Vec cat(6);
    cat << inter, p.W_D.value * fD + p.b_D.value.col(0);
    CHECK((out - (p.W_V.value * cat + p.b_V.value.col(0))).norm() < 1e-12);
}

TEST_CASE("encode_visit matches a hand chain of the affine maps") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const int d = 4, nm = 5, nl = 3, nd = 6;
        VisitEncoderParams p(d, nm, nl, nd, rng);
        randomize(p, rng);
        const Mat table = random_mat(nd, 7, rng);
        const Visit v = make_visit({1, 3, 6}, {0, 4}, {2});

        Vec m = Vec::Zero(nm), l = Vec::Zero(nl);
        m(0) = m(4) = 1.0;
        l(2) = 1.0;
        const Vec fD = (table.col(1) + table.col(3) + table.col(6)) / 3.0;
        const Vec FM = p.W_M.value * m + p.b_M.value.col(0);
        const Vec FL = p.W_L.value * l + p.b_L.value.col(0);
        const Vec FD = p.W_D.value * fD + p.b_D.value.col(0);
        Vec ml(2 * d);
        ml << FM, FL;
        const Vec inter = p.W_Vi.value * ml + p.b_Vi.value.col(0);
        Vec cat(2 * d);
        cat << inter, FD;
        const Vec expected = p.W_V.value * cat + p.b_V.value.col(0);

        CHECK((encode_visit(v, p, column_mean(table)).vector - expected).norm() < 1e-12);
    }
}

TEST_CASE("identical code sets give identical features") {
    Rng rng(3);
    VisitEncoderParams p(4, 4, 4, 3, rng);
    const Mat table = random_mat(3, 5, rng);
    const auto a = encode_visit(make_visit({0, 2}, {1, 3}, {0}), p, column_mean(table));
    const auto b = encode_visit(make_visit({0, 2}, {1, 3}, {0}), p, column_mean(table));
    CHECK(a.vector == b.vector);
}

TEST_CASE("code order inside a set does not matter") {
    Rng rng(4);
    VisitEncoderParams p(4, 5, 5, 3, rng);
    randomize(p, rng);
    const Mat table = random_mat(3, 6, rng);
    const auto agg = column_mean(table);
    const Vec ref = encode_visit(make_visit({0, 2, 5}, {1, 3, 4}, {0, 4}), p, agg).vector;
    const Vec perm = encode_visit(make_visit({5, 0, 2}, {4, 1, 3}, {4, 0}), p, agg).vector;
    CHECK((ref - perm).norm() < 1e-12);
}

TEST_CASE("visits without diagnoses are rejected") {
    Rng rng(5);
    VisitEncoderParams p(2, 1, 1, 2, rng);
    CHECK_THROWS_AS(encode_visit(make_visit({}, {0}, {0}), p, column_mean(Mat::Zero(2, 1))), ValidationError);
}

TEST_CASE("optional tanh bounds the output") {
    Rng rng(6);
    VisitEncoderParams p(3, 2, 2, 2, rng);
    randomize(p, rng);
    p.b_V.value = Mat::Constant(3, 1, 50.0);
    p.tanh_visit = true;
    const Vec out = encode_visit(make_visit({0}, {1}, {0}), p, column_mean(Mat::Identity(2, 2))).vector;
    CHECK(out.maxCoeff() <= 1.0);
}

TEST_CASE("visit encoder gradients match finite differences") {
    for (bool with_tanh : {false, true}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed);
            const int d = 5;
            VisitEncoderParams p(d, 4, 3, 6, rng);
            randomize(p, rng);
            p.tanh_visit = with_tanh;
            HierEmbedParams hier(6, 7, rng);
            const Mat med = (random_mat(4, 3, rng).array() > 0).cast<double>();
            const Mat lab = (random_mat(3, 3, rng).array() > 0).cast<double>();
            const Mat dx_in = random_mat(7, 3, rng);
            const Mat target = random_mat(d, 3, rng);
            auto params = p.parameters();
            for (ad::Param* q : hier.parameters()) params.push_back(q);
            const auto r = check_gradients(params, [&](ad::Tape& tape) {
                ad::Var f = encode_visits(tape, med, lab, hierarchical_embed(tape, dx_in, hier), p);
                return ad::sum_all(ad::cmul(ad::sigmoid(f), tape.constant(target)));
            });
            CHECK_MESSAGE(r.worst <= 1e-3, r.where);
        }
    }
}

TEST_CASE("diagnosis input table means match per-code inputs") {
    const auto tree = small_tree(2, 2);
    Rng rng(8);
    NodeEmbeddingTable nodes;
    nodes.dim = 2;
    for (const auto& [id, n] : tree->nodes()) nodes.vectors[id] = random_mat(2, 1, rng).col(0);
    SemanticVocab words;
    words.dim = 3;
    for (const auto& [id, n] : tree->nodes()) {
        for (const auto& t : tokenize(n.semantic_text)) words.word_vectors[t] = random_mat(3, 1, rng).col(0);
    }
    const Vocabulary vocab({"B0.0", "B0.1", "B1.1"});
    const DiagnosisInputTable table(vocab, *tree, nodes, words);
    CHECK(table.width() == 5);
    const CodeSet s{0, 2};
    const Mat m = table.mean_inputs({&s});
    const Vec expected = 0.5 * (hier_input("B0.0", *tree, nodes, words) + hier_input("B1.1", *tree, nodes, words));
    CHECK((m.col(0) - expected).norm() < 1e-12);
    const CodeSet empty;
    CHECK_THROWS_AS(table.mean_inputs({&empty}), ValidationError);
}
