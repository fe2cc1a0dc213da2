#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "test_support.hpp"
#include "vizrisk/features.hpp"

using namespace vizrisk;

namespace {

std::vector<double> ln_row(const std::vector<double>& probs) {
    std::vector<double> row;
    for (double p : probs) row.push_back(p < 0 ? 0.0 : (p > 0 ? std::log(p) : -700.0));
    return row;
}

/// Published probabilities renormalized per task (the content column of the
/// third image sums to 1.01), with zeros for clusters that do not apply.
std::vector<double> expected_layout(const TaskSchema& s, const std::vector<double>& probs) {
    std::vector<double> out(probs.size(), 0.0);
    for (const auto& t : s.tasks()) {
        if (probs[t.offset] < 0) continue;
        double sum = 0;
        for (std::size_t c = t.offset; c < t.offset + t.size; ++c) sum += probs[c];
        for (std::size_t c = t.offset; c < t.offset + t.size; ++c) out[c] = probs[c] / sum;
    }
    return out;
}

std::vector<double> random_logits(std::mt19937_64& g, std::size_t n, double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(g);
    return v;
}

}  // namespace

TEST(TaskSoftmax, Examples) {
    const std::vector<double> zero = {0.0, 0.0};
    EXPECT_EQ(task_softmax(zero, 100.0), (std::vector<double>{0.5, 0.5}));
    const std::vector<double> bright = {std::log(0.79), std::log(0.21)};
    const auto p = task_softmax(bright, 1.0);
    EXPECT_NEAR(p[0], 0.79, 1e-12);
    EXPECT_NEAR(p[1], 0.21, 1e-12);
    const std::vector<double> dominant = {10.0, 0.0, 0.0};
    const auto q = task_softmax(dominant, 100.0);
    EXPECT_DOUBLE_EQ(q[0], 1.0);
    EXPECT_GE(q[1], 0.0);
    EXPECT_LT(q[1], 1e-300);
    for (double x : q) EXPECT_TRUE(std::isfinite(x));
}

TEST(TaskSoftmax, MatchesDirectOracleAndSumsToOne) {
    std::mt19937_64 g(1);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t n = 2 + g() % 6;
        const double tau = rep % 2 ? 1.0 : 7.5;
        const auto s = random_logits(g, n, 1.0);
        const auto p = task_softmax(s, tau);
        long double z = 0;
        for (double x : s) z += std::exp(static_cast<long double>(tau) * x);
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            EXPECT_NEAR(p[j], static_cast<double>(std::exp(static_cast<long double>(tau) * s[j]) / z), 1e-13);
            sum += p[j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                if (s[a] > s[b]) EXPECT_GE(p[a], p[b]);
    }
}

TEST(TaskSoftmax, Errors) {
    const std::vector<double> nan = {0.0, std::nan("")};
    EXPECT_THROW(task_softmax(nan, 1.0), input_error);
    const std::vector<double> inf = {0.0, INFINITY};
    EXPECT_THROW(task_softmax(inf, 1.0), input_error);
    const std::vector<double> ok = {0.0, 1.0};
    EXPECT_THROW(task_softmax(ok, 0.0), input_error);
    EXPECT_THROW(task_softmax(ok, -1.0), input_error);
}

TEST(ScoreImage, Table2Layouts) {
    const TaskSchema s = default_schema();
    const auto& published = testing_support::table2_probabilities();
    const std::vector<std::vector<std::string>> routed = {{"person characterization"}, {"person characterization"},
                                                          {"people characterization"}};
    for (std::size_t img = 0; img < 3; ++img) {
        const auto f = score_image("img", ln_row(published[img]), s, 1.0);
        const auto want = expected_layout(s, published[img]);
        EXPECT_EQ(f.routed_clusters, routed[img]);
        for (const auto& t : s.tasks()) {
            double sum = 0;
            for (std::size_t c = t.offset; c < t.offset + t.size; ++c) sum += published[img][c];
            for (std::size_t c = t.offset; c < t.offset + t.size; ++c) {
                EXPECT_NEAR(f.probs[c], want[c], 1e-9) << img << " " << s.column_ids()[c];
                if (published[img][c] < 0) EXPECT_EQ(f.probs[c], 0.0);
                else if (std::fabs(sum - 1.0) < 1e-9) EXPECT_NEAR(f.probs[c], published[img][c], 1e-9);
            }
        }
    }
    const auto first = score_image("image1", ln_row(published[0]), s, 1.0);
    EXPECT_NEAR(first.probs[*s.column_of("person.emotion.sad")], 0.99, 1e-9);
    const auto third = score_image("image3", ln_row(published[2]), s, 1.0);
    EXPECT_NEAR(third.probs[*s.column_of("people.relationship.family")], 0.96, 1e-9);
}

TEST(ScoreImage, NoRouteWhenAnimalWins) {
    const TaskSchema s = default_schema();
    std::vector<double> row(24, 0.0);
    row[*s.column_of("content.animal")] = 1.0;
    const auto f = score_image("a", row, s, 100.0);
    EXPECT_TRUE(f.routed_clusters.empty());
    std::size_t nonzero = 0;
    for (std::size_t c = 0; c < 24; ++c) {
        if (c >= 9) EXPECT_EQ(f.probs[c], 0.0);
        nonzero += f.probs[c] != 0.0;
    }
    EXPECT_EQ(nonzero, 9u);
}

TEST(ScoreImage, TiesRouteNowhere) {
    const TaskSchema s = default_schema();
    std::vector<double> row(24, 0.0);
    row[*s.column_of("content.person")] = 0.3;
    row[*s.column_of("content.people")] = 0.3;
    EXPECT_TRUE(score_image("t", row, s, 100.0).routed_clusters.empty());
    row[*s.column_of("content.people")] = 0.2999999;
    EXPECT_EQ(score_image("t", row, s, 100.0).routed_clusters, std::vector<std::string>{"person characterization"});
}

TEST(ScoreImage, InvariantsOnRandomRows) {
    const TaskSchema s = default_schema();
    std::mt19937_64 g(42);
    for (int rep = 0; rep < 2000; ++rep) {
        const double tau = rep % 3 == 0 ? 100.0 : 1.0;
        auto row = random_logits(g, 24, rep % 3 == 0 ? 0.05 : 2.0);
        const auto f = score_image("r", row, s, tau);
        for (std::size_t c = 0; c < s.cluster_layouts().size(); ++c) {
            const auto& cl = s.cluster_layouts()[c];
            const bool applied = !cl.source_task ||
                                 std::find(f.routed_clusters.begin(), f.routed_clusters.end(), s.clusters()[c].name) !=
                                     f.routed_clusters.end();
            for (std::size_t t = cl.first_task; t < cl.first_task + cl.task_count; ++t) {
                const auto& tl = s.tasks()[t];
                double sum = 0;
                for (std::size_t k = tl.offset; k < tl.offset + tl.size; ++k) {
                    EXPECT_GE(f.probs[k], 0.0);
                    EXPECT_LE(f.probs[k], 1.0);
                    if (!applied) EXPECT_EQ(f.probs[k], 0.0);
                    sum += f.probs[k];
                }
                if (applied) EXPECT_NEAR(sum, 1.0, 1e-9);
            }
        }
        // Adding a constant to the source task leaves routing unchanged.
        auto shifted = row;
        const double shift = static_cast<double>(g() % 1000) / 37.0 - 13.0;
        for (std::size_t k = 0; k < 5; ++k) shifted[k] += shift;
        EXPECT_EQ(score_image("r", shifted, s, tau).routed_clusters, f.routed_clusters);
    }
}

TEST(ScoreImage, Errors) {
    const TaskSchema s = default_schema();
    std::vector<double> row(23, 0.0);
    EXPECT_THROW(score_image("x", row, s, 1.0), input_error);
    row.assign(24, 0.0);
    row[3] = std::nan("");
    EXPECT_THROW(score_image("x", row, s, 1.0), input_error);
}

TEST(ScoreImages, ThreadInvariantAndColumnCheck) {
    const TaskSchema s = default_schema();
    std::mt19937_64 g(8);
    SimilarityMatrix m;
    m.query_ids = s.column_ids();
    for (int i = 0; i < 300; ++i) {
        m.image_ids.push_back("i" + std::to_string(i));
        const auto r = random_logits(g, 24, 0.1);
        m.sims.insert(m.sims.end(), r.begin(), r.end());
    }
    const auto a = score_images(m, s, 100.0, 1);
    const auto b = score_images(m, s, 100.0, 3);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].probs, b[i].probs);
        EXPECT_EQ(a[i].routed_clusters, b[i].routed_clusters);
    }
    std::swap(m.query_ids[0], m.query_ids[1]);
    EXPECT_THROW(score_images(m, s, 100.0), input_error);
}

TEST(AggregateUser, Examples) {
    const std::vector<double> v = {0.1, 0.2, 0.3, 0.7};
    std::vector<ImageFeatures> same(3, ImageFeatures{"i", v, {}});
    EXPECT_EQ(aggregate_user(same, "u", 1).mean_probs, v);

    std::vector<ImageFeatures> basis = {{"a", {1.0, 0.0}, {}}, {"b", {0.0, 1.0}, {}}};
    const auto u = aggregate_user(basis, "u", 0);
    EXPECT_EQ(u.mean_probs, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(u.n_images, 2u);
    EXPECT_EQ(u.label, 0);
}

TEST(AggregateUser, MatchesSummationOracle) {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<ImageFeatures> fs;
    for (int i = 0; i < 100; ++i) {
        ImageFeatures f{"i", std::vector<double>(24), {}};
        for (auto& x : f.probs) x = unif(g);
        fs.push_back(f);
    }
    const auto u = aggregate_user(fs, "u", 1);
    for (std::size_t j = 0; j < 24; ++j) {
        long double sum = 0;
        for (const auto& f : fs) sum += f.probs[j];
        EXPECT_NEAR(u.mean_probs[j], static_cast<double>(sum / 100), 1e-12);
        EXPECT_GE(u.mean_probs[j], 0.0);
        EXPECT_LE(u.mean_probs[j], 1.0);
    }
}

TEST(AggregateUser, UnconditionalPairsSumToOne) {
    const TaskSchema s = default_schema();
    std::mt19937_64 g(12);
    for (int user = 0; user < 50; ++user) {
        std::vector<ImageFeatures> fs;
        for (int i = 0; i < 150; ++i) fs.push_back(score_image("i", random_logits(g, 24, 0.05), s, 100.0));
        const auto u = aggregate_user(fs, "u", 0);
        for (const auto& t : s.tasks()) {
            if (t.size != 2 || s.clusters()[t.cluster].routed()) continue;
            EXPECT_NEAR(u.mean_probs[t.offset] + u.mean_probs[t.offset + 1], 1.0, 4 * DBL_EPSILON);
        }
    }
}

TEST(AggregateUser, Errors) {
    EXPECT_THROW(aggregate_user({}, "u", 0), input_error);
    std::vector<ImageFeatures> mixed = {{"a", {1.0, 0.0}, {}}, {"b", {1.0}, {}}};
    EXPECT_THROW(aggregate_user(mixed, "u", 0), input_error);
}

TEST(AggregateCohort, MissingImageIsFatal) {
    std::vector<ImageFeatures> fs = {{"a", {1.0}, {}}, {"b", {0.0}, {}}};
    CohortManifest m;
    m.users = {{"u1", 1, {"a", "b"}}, {"u2", 0, {"b"}}};
    const auto users = aggregate_cohort(fs, m);
    ASSERT_EQ(users.size(), 2u);
    EXPECT_EQ(users[0].mean_probs[0], 0.5);
    m.users.push_back({"u3", 0, {"zzz"}});
    EXPECT_THROW(aggregate_cohort(fs, m), input_error);
}

TEST(BuildDesignMatrix, CopyContract) {
    const TaskSchema s = default_schema();
    std::vector<UserVector> users(2);
    std::mt19937_64 g(2);
    for (std::size_t i = 0; i < 2; ++i) {
        users[i].user_id = "u" + std::to_string(i);
        users[i].label = static_cast<int>(i);
        users[i].mean_probs = random_logits(g, 24, 1.0);
    }
    const auto dm = build_design_matrix(users, s.column_ids());
    EXPECT_EQ(dm.X.rows(), 2);
    EXPECT_EQ(dm.X.cols(), 24);
    EXPECT_EQ(dm.y.size(), 2);
    EXPECT_EQ(dm.column_ids, s.column_ids());
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 24; ++j) EXPECT_EQ(dm.X(i, j), users[static_cast<std::size_t>(i)].mean_probs[static_cast<std::size_t>(j)]);
        EXPECT_EQ(dm.y(i), static_cast<double>(i));
    }
    users[1].mean_probs.pop_back();
    EXPECT_THROW(build_design_matrix(users, s.column_ids()), input_error);
}

TEST(UserVectorCsv, RoundTripBitExact) {
    testing_support::TempDir dir("uv");
    const TaskSchema s = default_schema();
    std::mt19937_64 g(6);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<UserVector> users;
    for (int i = 0; i < 30; ++i) {
        UserVector u{"user" + std::to_string(i), i % 3 == 0, static_cast<std::size_t>(i + 1), std::vector<double>(24)};
        for (auto& x : u.mean_probs) x = unif(g);
        users.push_back(u);
    }
    {
        std::ofstream out(dir / "uv.csv");
        write_user_vectors_csv(out, users, s.column_ids());
    }
    const auto back = read_user_vectors_csv(dir / "uv.csv");
    EXPECT_EQ(back.column_ids, s.column_ids());
    ASSERT_EQ(back.users.size(), users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
        EXPECT_EQ(back.users[i].user_id, users[i].user_id);
        EXPECT_EQ(back.users[i].label, users[i].label);
        EXPECT_EQ(back.users[i].n_images, users[i].n_images);
        EXPECT_EQ(back.users[i].mean_probs, users[i].mean_probs);
    }
}
