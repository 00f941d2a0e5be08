#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "capmoe/gating.hpp"
#include "capmoe/rng.hpp"
#include "fixtures.hpp"

using capmoe::Assignment;
using capmoe::AssignmentSet;
using capmoe::ScoreMatrix;

namespace {

// Reference top-k: full sort by (score desc, expert asc) per row, then the
// canonical (token, expert) output order.
AssignmentSet topk_reference(const ScoreMatrix& scores, int k) {
    AssignmentSet out;
    for (Eigen::Index t = 0; t < scores.rows(); ++t) {
        std::vector<Assignment> row;
        for (Eigen::Index e = 0; e < scores.cols(); ++e) {
            if (scores(t, e) > 0.0) {
                row.push_back({t, e, scores(t, e)});
            }
        }
        std::sort(row.begin(), row.end(), [](const Assignment& a, const Assignment& b) {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            return a.expert < b.expert;
        });
        if (static_cast<int>(row.size()) > k) {
            row.resize(static_cast<std::size_t>(k));
        }
        std::sort(row.begin(), row.end(), [](const Assignment& a, const Assignment& b) {
            return a.expert < b.expert;
        });
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

ScoreMatrix random_scores(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                          double mask_fraction) {
    ScoreMatrix scores(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto key = capmoe::rng::mix(seed, static_cast<std::uint64_t>(i * cols + j));
            const bool masked = capmoe::rng::uniform01(capmoe::rng::mix(key, 1)) < mask_fraction;
            scores(i, j) = masked ? 0.0 : capmoe::rng::uniform_pos(key);
        }
    }
    return scores;
}

}  // namespace

TEST_CASE("softmax of [ln 1, ln 3] recovers the 1:3 split") {
    Eigen::MatrixXd logits(1, 2);
    logits << std::log(1.0), std::log(3.0);
    const ScoreMatrix probs = capmoe::softmax_rows(logits);
    CHECK(probs(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(probs(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay strictly positive") {
    const ScoreMatrix probs = capmoe::softmax_rows(fixtures::six_token_trace().logits);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK((probs.array() > 0.0).all());
}

TEST_CASE("softmax never underflows to an exact zero") {
    // A spread of 1000 would underflow exp(-1000) to 0 without the clamp,
    // and an exact 0 would be indistinguishable from a masked entry.
    Eigen::MatrixXd logits(1, 3);
    logits << 1000.0, 0.0, -500.0;
    const ScoreMatrix probs = capmoe::softmax_rows(logits);
    CHECK((probs.array() > 0.0).all());
    CHECK(probs(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax is exactly shift invariant on representable logits") {
    Eigen::MatrixXd logits(3, 4);
    logits << 1, -2, 0, 3,  //
        2, 2, -1, 0,        //
        -3, 1, 1, 2;
    const ScoreMatrix base = capmoe::softmax_rows(logits);
    const ScoreMatrix shifted = capmoe::softmax_rows((logits.array() + 2.0).matrix());
    CHECK((base.array() == shifted.array()).all());
}

TEST_CASE("softmax is shift invariant to rounding on arbitrary logits") {
    Eigen::MatrixXd logits(4, 5);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            const auto key = capmoe::rng::mix(11, static_cast<std::uint64_t>(i * 5 + j));
            logits(i, j) = 4.0 * capmoe::rng::gaussian(key);
        }
    }
    const ScoreMatrix base = capmoe::softmax_rows(logits);
    const ScoreMatrix shifted =
        capmoe::softmax_rows((logits.array() + std::numbers::pi).matrix());
    CHECK(((base - shifted).array().abs() < 1e-15).all());
}

TEST_CASE("softmax rejects empty input and invalid traces") {
    CHECK_THROWS_AS(capmoe::softmax_rows(Eigen::MatrixXd(0, 3)), std::invalid_argument);
    capmoe::RoutingTrace bad = fixtures::six_token_trace();
    bad.top_k = 4;  // k exceeds n
    CHECK_THROWS_AS(capmoe::softmax_rows(bad), std::invalid_argument);
}

TEST_CASE("top-1 selection on the 6-token fixture") {
    const AssignmentSet picked = capmoe::topk_select(fixtures::six_token_scores(), 1);
    REQUIRE(picked.size() == 6);
    const Eigen::Index expected_experts[] = {0, 0, 0, 0, 1, 2};
    for (std::size_t i = 0; i < picked.size(); ++i) {
        CHECK(picked[i].token == static_cast<Eigen::Index>(i));
        CHECK(picked[i].expert == expected_experts[i]);
    }
    const capmoe::LoadVector loads = capmoe::expert_load(picked, 3);
    CHECK(loads(0) == 4);
    CHECK(loads(1) == 1);
    CHECK(loads(2) == 1);
}

TEST_CASE("top-k ties break toward the lower expert index") {
    ScoreMatrix scores(1, 4);
    scores << 0.25, 0.25, 0.25, 0.25;
    const AssignmentSet picked = capmoe::topk_select(scores, 2);
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].expert == 0);
    CHECK(picked[1].expert == 1);
}

TEST_CASE("top-k skips masked entries and accepts short rows") {
    ScoreMatrix scores(2, 3);
    scores << 0.0, 0.6, 0.4,  // only two live entries
        0.0, 0.0, 1.0;        // only one
    const AssignmentSet picked = capmoe::topk_select(scores, 2);
    REQUIRE(picked.size() == 3);
    CHECK(picked[0] == Assignment{0, 1, 0.6});
    CHECK(picked[1] == Assignment{0, 2, 0.4});
    CHECK(picked[2] == Assignment{1, 2, 1.0});
}

TEST_CASE("top-k output is sorted by token then expert") {
    const ScoreMatrix scores = random_scores(40, 9, 17, 0.2);
    const AssignmentSet picked = capmoe::topk_select(scores, 3);
    const bool sorted = std::is_sorted(
        picked.begin(), picked.end(), [](const Assignment& a, const Assignment& b) {
            return a.token != b.token ? a.token < b.token : a.expert < b.expert;
        });
    CHECK(sorted);
}

TEST_CASE("top-k matches a full-sort reference on random masked matrices") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const ScoreMatrix scores = random_scores(30, 8, seed, seed % 3 == 0 ? 0.4 : 0.0);
        for (int k : {1, 2, 5, 8}) {
            CHECK(capmoe::topk_select(scores, k) == topk_reference(scores, k));
        }
    }
}

TEST_CASE("top-k validates k") {
    const ScoreMatrix scores = fixtures::six_token_scores();
    CHECK_THROWS_AS(capmoe::topk_select(scores, 0), std::invalid_argument);
    CHECK_THROWS_AS(capmoe::topk_select(scores, 4), std::invalid_argument);
}

TEST_CASE("expert_load totals every assignment exactly once") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const ScoreMatrix scores = random_scores(25, 6, seed, 0.3);
        const AssignmentSet picked = capmoe::topk_select(scores, 2);
        const capmoe::LoadVector loads = capmoe::expert_load(picked, 6);
        CHECK(static_cast<std::size_t>(loads.sum()) == picked.size());
    }
}

TEST_CASE("expert_load rejects out-of-range experts") {
    AssignmentSet bad = {{0, 5, 0.5}};
    CHECK_THROWS_AS(capmoe::expert_load(bad, 3), std::invalid_argument);
}

TEST_CASE("expected load is kept as an exact real") {
    CHECK(capmoe::expected_load(7, 2, 3) == 14.0 / 3.0);
    CHECK(capmoe::expected_load(6, 1, 3) == 2.0);
    CHECK(capmoe::expected_load(4096, 8, 64) == 512.0);
}
