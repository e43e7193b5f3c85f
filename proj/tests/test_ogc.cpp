#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hvpl/detector.hpp"
#include "hvpl/linalg.hpp"
#include "hvpl/ogc.hpp"
#include "hvpl/rng.hpp"
#include "test_support.hpp"

using namespace hvpl;
using namespace hvpl::testing;
namespace fs = std::filesystem;

namespace {

Matrix low_rank(Rng& rng, int rows, int cols, int rank) {
    return matmul(rng.normal_matrix(rows, rank, 1.0), rng.normal_matrix(rank, cols, 1.0));
}

OrthoSpace make_space(const Matrix& o, double xi) {
    OrthoSpace s;
    s.o = o;
    s.xi = xi;
    svd_split(o, xi, s.v1, s.v0, s.s);
    return s;
}

struct ToyTask {
    Detector detector;
    Matrix prompts;
    std::vector<std::vector<int>> classes;

    ToyTask(uint64_t seed, int n_videos, std::vector<int> label_space, double sigma = 0.1,
            bool zero_velocity = false)
        : detector(
              [] {
                  DetectorConfig cfg;
                  cfg.d_model = 64;
                  cfg.n_heads = 4;
                  cfg.layers = 2;
                  cfg.n_frames = 4;
                  cfg.height = 16;
                  cfg.width = 16;
                  return cfg;
              }(),
              seed) {
        Rng rng(seed, "test/toytask");
        prompts = rng.normal_matrix(4, 64, 0.125);
        for (int i = 0; i < n_videos; ++i) {
            VideoSpec vs;
            vs.geom_stream = "vid/t1/train/" + std::to_string(i) + "/geom";
            vs.noise_stream = "vid/t1/train/" + std::to_string(i) + "/noise";
            vs.instance_classes = {label_space[i % label_space.size()]};
            vs.noise_sigma = sigma;
            vs.zero_velocity = zero_velocity;
            SyntheticVideo v = detector.make_video(vs);
            feats_store.push_back(detector.render_features(v, vs));
            classes.push_back(vs.instance_classes);
        }
        for (const auto& f : feats_store) feats.push_back(&f);
    }

    FeatureSpaceInputs inputs(int b, double xi, uint64_t seed, std::vector<int> label_space) {
        FeatureSpaceInputs in;
        in.detector = &detector;
        in.frame_prompts = prompts;
        in.features = feats;
        in.video_classes = classes;
        in.task_classes = std::move(label_space);
        in.b_videos = b;
        in.seed = seed;
        in.task_id = 1;
        in.xi = xi;
        return in;
    }

    std::vector<FrameFeatures> feats_store;
    std::vector<const FrameFeatures*> feats;
};

}  // namespace

TEST_CASE("svd_split boundaries: xi=1 annihilates, xi=0 is identity") {
    Rng rng(50, "test/split");
    Matrix o = low_rank(rng, 24, 16, 5);
    Matrix dp = rng.normal_matrix(6, 16, 1.0);

    OrthoSpace all = make_space(o, 1.0);
    CHECK(all.v0.cols() == 0);
    Matrix annihilated = project_gradient(dp, all);
    CHECK(frobenius_norm(annihilated) == 0.0);

    OrthoSpace none = make_space(o, 0.0);
    CHECK(none.v0.cols() == 16);
    Matrix identity = project_gradient(dp, none);
    CHECK(max_abs_diff(identity, dp) <= 1e-10);
}

TEST_CASE("rank-16 space with xi=0.7 annihilates gradients against O") {
    Rng rng(51, "test/split/rank16");
    Matrix o = low_rank(rng, 96, 64, 16);
    OrthoSpace space = make_space(o, 0.7);
    CHECK(space.v1.cols() == 44);
    CHECK(space.v0.cols() == 20);

    // ||O V0||_F small relative to ||O||_F: 44 kept columns >= rank 16.
    Matrix ov0 = matmul(o, space.v0);
    CHECK(frobenius_norm(ov0) <= 1e-8 * frobenius_norm(o));

    for (int trial = 0; trial < 10; ++trial) {
        Rng r2(100 + trial, "test/split/dp");
        Matrix dp = r2.normal_matrix(8, 64, 1.0);
        Matrix star = project_gradient(dp, space);
        CHECK(frobenius_norm(matmul_nt(star, o)) <=
              1e-8 * frobenius_norm(dp) * frobenius_norm(o));
    }
}

TEST_CASE("projection is idempotent and lands in the orthogonal complement") {
    Rng rng(52, "test/proj");
    Matrix o = low_rank(rng, 48, 32, 10);
    OrthoSpace space = make_space(o, 0.6);
    for (int trial = 0; trial < 20; ++trial) {
        Rng r2(300 + trial, "test/proj/dp");
        Matrix dp = r2.normal_matrix(5, 32, 1.0);
        Matrix once = project_gradient(dp, space);
        Matrix twice = project_gradient(once, space);
        CHECK(max_abs_diff(once, twice) <= 1e-12 * std::max(1.0, frobenius_norm(once)));
        CHECK(frobenius_norm(matmul(once, space.v1)) <= 1e-10 * std::max(1.0, frobenius_norm(dp)));
    }
}

TEST_CASE("projection fixed points and annihilation by span membership") {
    Rng rng(53, "test/proj/span");
    Matrix o = low_rank(rng, 48, 32, 8);
    OrthoSpace space = make_space(o, 0.5);

    // Rows in span(V0) are fixed points.
    Matrix coeff0 = rng.normal_matrix(4, space.v0.cols(), 1.0);
    Matrix in_v0 = matmul_nt(coeff0, space.v0);
    CHECK(max_abs_diff(project_gradient(in_v0, space), in_v0) <= 1e-10);

    // Rows in span(V1) vanish.
    Matrix coeff1 = rng.normal_matrix(4, space.v1.cols(), 1.0);
    Matrix in_v1 = matmul_nt(coeff1, space.v1);
    CHECK(frobenius_norm(project_gradient(in_v1, space)) <= 1e-10 * frobenius_norm(in_v1));
}

TEST_CASE("projected norm is non-increasing in xi") {
    Rng rng(54, "test/proj/mono");
    Matrix o = low_rank(rng, 40, 24, 12);
    Matrix dp = rng.normal_matrix(6, 24, 1.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double xi : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        OrthoSpace s = make_space(o, xi);
        const double norm = frobenius_norm(project_gradient(dp, s));
        CHECK(norm <= prev + 1e-12);
        prev = norm;
    }
}

TEST_CASE("comparative attention drift favors the projected update") {
    // Old-task features drawn from the row space of O; small step; the
    // projected gradient should move the frozen decoder's attention less.
    DetectorConfig cfg;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.layers = 2;
    cfg.height = 16;
    cfg.width = 16;
    Detector det(cfg, 42);
    Rng rng(55, "test/drift");
    Matrix o = low_rank(rng, 48, 64, 16);
    OrthoSpace space = make_space(o, 0.7);

    Matrix coeff = rng.normal_matrix(20, 48, 1.0);
    Matrix feats = scale(matmul(coeff, o), 1.0 / 48.0);
    Matrix prompts = rng.normal_matrix(6, 64, 0.125);
    Matrix base = det.cross_attention_scores(prompts, feats, 0, 0);

    const double eta = 1e-2;
    int strict = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng r2(800 + trial, "test/drift/dp");
        Matrix dp = r2.normal_matrix(6, 64, 1.0);
        Matrix star = project_gradient(dp, space);
        Matrix a_raw = det.cross_attention_scores(add(prompts, scale(dp, eta)), feats, 0, 0);
        Matrix a_star = det.cross_attention_scores(add(prompts, scale(star, eta)), feats, 0, 0);
        const double drift_raw = frobenius_norm(sub(a_raw, base));
        const double drift_star = frobenius_norm(sub(a_star, base));
        CHECK(drift_star <= drift_raw + 1e-15);
        if (drift_star < drift_raw) ++strict;
    }
    CHECK(strict >= 18);
}

TEST_CASE("build_feature_space: shape, determinism, coverage errors") {
    ToyTask task(42, 8, {1, 2});

    // B=1 with L=4, D=64 forces a 4x64 space; needs a 1-class label set.
    ToyTask single(43, 4, {9});
    OrthoSpace tiny = build_feature_space(single.inputs(1, 0.7, 43, {9}));
    CHECK(tiny.o.rows() == 4);
    CHECK(tiny.o.cols() == 64);

    OrthoSpace s1 = build_feature_space(task.inputs(4, 0.7, 42, {1, 2}));
    OrthoSpace s2 = build_feature_space(task.inputs(4, 0.7, 42, {1, 2}));
    CHECK(bitwise_equal(s1.o, s2.o));
    CHECK(s1.o.rows() == 4 * 4);

    CHECK_THROWS_AS(build_feature_space(task.inputs(1, 0.7, 42, {1, 2})), CoverageError);
}

TEST_CASE("noise-free single-class task yields a rank-deficient space") {
    ToyTask task(44, 6, {3}, /*sigma=*/0.0, /*zero_velocity=*/true);
    OrthoSpace s = build_feature_space(task.inputs(6, 0.7, 44, {3}));
    const int full = std::min(s.o.rows(), s.o.cols());
    CHECK(numerical_rank(s.s) < full);
}

TEST_CASE("optimizer: null update, sgd rule, hand-stepped adam") {
    OptimizerConfig sgd;
    sgd.kind = OptimizerConfig::Kind::Sgd;
    sgd.lr = 0.1;

    Matrix p = Matrix::filled(2, 2, 1.0);
    ParamState st;
    apply_projected_update(sgd, p, Matrix(2, 2), st, 2);
    CHECK(max_abs_diff(p, Matrix::filled(2, 2, 1.0)) == 0.0);

    apply_projected_update(sgd, p, Matrix::filled(2, 2, 1.0), st, 2);
    CHECK(max_abs_diff(p, Matrix::filled(2, 2, 0.9)) <= 1e-15);

    // Adam recurrence, two steps on a 2x2 case, hand evaluated.
    OptimizerConfig adam;
    adam.lr = 0.01;
    Matrix q = Matrix::from_rows(2, 2, {1.0, 2.0, -1.0, 0.5});
    Matrix g1 = Matrix::from_rows(2, 2, {0.5, -0.25, 1.0, 0.0});
    Matrix g2 = Matrix::from_rows(2, 2, {-0.5, 0.75, 0.25, -1.0});
    Matrix expect = q;
    Matrix m(2, 2), v(2, 2);
    ParamState ast;
    Matrix qq = q;
    int step = 0;
    for (const Matrix& g : {g1, g2}) {
        apply_projected_update(adam, qq, g, ast, 3);
        ++step;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                m(i, j) = 0.9 * m(i, j) + 0.1 * g(i, j);
                v(i, j) = 0.999 * v(i, j) + 0.001 * g(i, j) * g(i, j);
                const double mh = m(i, j) / (1.0 - std::pow(0.9, step));
                const double vh = v(i, j) / (1.0 - std::pow(0.999, step));
                expect(i, j) -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            }
        CHECK(max_abs_diff(qq, expect) <= 1e-14);
    }

    // Projection-aware updates are a t >= 2 operation.
    ParamState bad;
    CHECK_THROWS_AS(apply_projected_update(adam, q, g1, bad, 1), UsageError);
}

TEST_CASE("persist/load round trip, delete rule, and size budget") {
    const fs::path dir = fs::temp_directory_path() / "hvpl_ogc_test";
    fs::remove_all(dir);

    Rng rng(60, "test/persist");
    OrthoSpace s2;
    s2.task_id = 2;
    s2.o = low_rank(rng, 24, 16, 6);
    s2.xi = 0.7;
    s2.b_videos = 6;
    s2.seed = 42;
    svd_split(s2.o, s2.xi, s2.v1, s2.v0, s2.s);
    persist_space(s2, dir.string());

    OrthoSpace loaded = load_space((dir / "ortho_space_t2.hvpl").string());
    CHECK(bitwise_equal(loaded.o, s2.o));
    CHECK(bitwise_equal(loaded.v0, s2.v0));
    CHECK(bitwise_equal(loaded.v1, s2.v1));
    CHECK(loaded.xi == s2.xi);
    CHECK(loaded.task_id == 2);

    OrthoSpace s3 = s2;
    s3.task_id = 3;
    persist_space(s3, dir.string());
    CHECK(find_space_file(dir.string()).value() == (dir / "ortho_space_t3.hvpl").string());
    CHECK(!fs::exists(dir / "ortho_space_t2.hvpl"));
    CHECK(!fs::exists(dir / "ortho_space_t2.json"));

    // Larger-scale dims in f32 stay under the 0.5 MB ceiling:
    // B=10, L=10 -> N_o=100, D=256.
    OrthoSpace big;
    big.task_id = 1;
    big.o = Matrix(100, 256);
    big.xi = 0.7;
    svd_split(Matrix::identity(256), 0.7, big.v1, big.v0, big.s);  // placeholder split dims
    big.s.assign(100, 0.0);
    const size_t bytes = persist_space(big, dir.string(), MatDType::F32);
    CHECK(bytes <= 512u * 1024u);

    CHECK_THROWS_AS(load_space((dir / "missing.hvpl").string()), IoError);
    fs::remove_all(dir);
}
