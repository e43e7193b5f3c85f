#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hvpl/detector.hpp"
#include "hvpl/oracles.hpp"
#include "hvpl/rng.hpp"
#include "test_support.hpp"

using namespace hvpl;
using namespace hvpl::testing;

namespace {

DetectorConfig small_config() {
    DetectorConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.layers = 2;
    cfg.n_frames = 3;
    cfg.height = 16;
    cfg.width = 16;
    return cfg;
}

VideoSpec spec_for(const std::vector<int>& classes, double sigma = 0.1) {
    VideoSpec s;
    s.geom_stream = "vid/t1/train/0/geom";
    s.noise_stream = "vid/t1/train/0/noise";
    s.instance_classes = classes;
    s.noise_sigma = sigma;
    return s;
}

}  // namespace

TEST_CASE("synthetic features are bitwise deterministic per seed") {
    Detector det(small_config(), 42);
    VideoSpec vs = spec_for({3, 5});
    SyntheticVideo v1 = det.make_video(vs);
    SyntheticVideo v2 = det.make_video(vs);
    FrameFeatures f1 = det.render_features(v1, vs);
    FrameFeatures f2 = det.render_features(v2, vs);
    for (int f = 0; f < 3; ++f) {
        CHECK(bitwise_equal(f1.f_out[f], f2.f_out[f]));
        CHECK(bitwise_equal(f1.scale1[f], f2.scale1[f]));
    }
    CHECK(v1.instances.size() == 2);
    for (const auto& inst : v1.instances)
        for (const auto& m : inst.masks) CHECK(m.size() == 16u * 16u);
}

TEST_CASE("zero noise, full-frame instance: every pixel equals the mixed prototype") {
    DetectorConfig cfg = small_config();
    Detector det(cfg, 7);
    VideoSpec vs = spec_for({2}, 0.0);
    SyntheticVideo v = det.make_video(vs);
    // Force full coverage.
    for (auto& own : v.ownership) std::fill(own.begin(), own.end(), 0);
    FrameFeatures f = det.render_features(v, vs);
    const Matrix mixed = det.mixed_prototype(2);
    for (int p = 0; p < cfg.pixels(); ++p)
        for (int j = 0; j < cfg.d_model; ++j)
            CHECK(f.f_out[0](p, j) == doctest::Approx(mixed(0, j)).epsilon(1e-12));
}

TEST_CASE("distinct classes are closer within instances than across") {
    Detector det(small_config(), 11);
    VideoSpec vs = spec_for({1, 4});
    SyntheticVideo v = det.make_video(vs);
    FrameFeatures f = det.render_features(v, vs);

    auto mean_dist = [&](int frame, int a, int b) {
        const auto& own = v.ownership[frame];
        std::vector<int> pa, pb;
        for (int p = 0; p < static_cast<int>(own.size()); ++p) {
            if (own[p] == a) pa.push_back(p);
            if (own[p] == b) pb.push_back(p);
        }
        double total = 0.0;
        int count = 0;
        for (size_t i = 0; i < pa.size(); i += 7)
            for (size_t j = 0; j < pb.size(); j += 7) {
                double d2 = 0.0;
                for (int c = 0; c < f.f_out[frame].cols(); ++c) {
                    const double dx = f.f_out[frame](pa[i], c) - f.f_out[frame](pb[j], c);
                    d2 += dx * dx;
                }
                total += std::sqrt(d2);
                ++count;
            }
        return count ? total / count : 0.0;
    };
    const double within = 0.5 * (mean_dist(0, 0, 0) + mean_dist(0, 1, 1));
    const double across = mean_dist(0, 0, 1);
    CHECK(within < across);
}

TEST_CASE("make_video requires at least one class") {
    Detector det(small_config(), 1);
    CHECK_THROWS_AS(det.make_video(spec_for({})), UsageError);
}

TEST_CASE("cross attention: single key row gives an all-ones column") {
    Detector det(small_config(), 3);
    Rng rng(4, "test/xattn1");
    Matrix p = rng.normal_matrix(5, 32, 1.0);
    Matrix f = rng.normal_matrix(1, 32, 1.0);
    Matrix s = det.cross_attention_scores(p, f, 0, 0);
    CHECK(s.rows() == 5);
    CHECK(s.cols() == 1);
    for (int i = 0; i < 5; ++i) CHECK(s(i, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cross attention: identical prompt rows give identical score rows") {
    Detector det(small_config(), 5);
    Rng rng(6, "test/xattn2");
    Matrix p(3, 32);
    Matrix row = rng.normal_matrix(1, 32, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 32; ++j) p(i, j) = row(0, j);
    Matrix f = rng.normal_matrix(9, 32, 1.0);
    Matrix s = det.cross_attention_scores(p, f, 1, 2);
    for (int i = 1; i < 3; ++i)
        for (int j = 0; j < 9; ++j) CHECK(s(i, j) == doctest::Approx(s(0, j)).epsilon(1e-15));
}

TEST_CASE("cross attention matches the straight-line reference") {
    DetectorConfig cfg = small_config();
    cfg.d_model = 64;
    cfg.n_heads = 4;
    Detector det(cfg, 13);
    Rng rng(14, "test/xattn3");
    Matrix p = rng.normal_matrix(4, 64, 1.0);
    Matrix f = rng.normal_matrix(16, 64, 1.0);
    for (int head = 0; head < 4; ++head) {
        Matrix got = det.cross_attention_scores(p, f, 0, head);
        Matrix ref = oracles::attention_scores_reference(p, f, det.weights().layers[0].wq,
                                                         det.weights().layers[0].wk, head, 4);
        CHECK(max_abs_diff(got, ref) <= 1e-12);
        for (int i = 0; i < got.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < got.cols(); ++j) sum += got(i, j);
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(det.cross_attention_scores(p, Matrix(3, 16), 0, 0), ShapeError);
}

TEST_CASE("transformer_decode: zero layers broadcasts the prompts") {
    DetectorConfig cfg = small_config();
    cfg.layers = 0;
    Detector det(cfg, 21);
    Rng rng(22, "test/decode0");
    Matrix prompts = rng.normal_matrix(6, 32, 1.0);
    VideoSpec vs = spec_for({1});
    SyntheticVideo v = det.make_video(vs);
    FrameFeatures f = det.render_features(v, vs);
    Tape t;
    std::vector<Var> z = det.transformer_decode(t, t.constant(prompts), f);
    REQUIRE(static_cast<int>(z.size()) == cfg.n_frames);
    for (Var zf : z) CHECK(bitwise_equal(t.val(zf), prompts));
}

TEST_CASE("transformer_decode: determinism, prompt sensitivity, attention rows") {
    Detector det(small_config(), 23);
    Rng rng(24, "test/decode1");
    Matrix p1 = rng.normal_matrix(6, 32, 1.0);
    Matrix p2 = rng.normal_matrix(6, 32, 1.0);
    VideoSpec vs = spec_for({1, 3});
    SyntheticVideo v = det.make_video(vs);
    FrameFeatures f = det.render_features(v, vs);

    Matrix z1 = det.decode_to_matrix(p1, f);
    Matrix z1b = det.decode_to_matrix(p1, f);
    CHECK(bitwise_equal(z1, z1b));

    Matrix z2 = det.decode_to_matrix(p2, f);
    CHECK(frobenius_norm(sub(z1, z2)) > 0.0);

    // Attention rows sum to one at every layer and head.
    Tape t;
    std::vector<Matrix> trace;
    det.transformer_decode(t, t.constant(p1), f, nullptr, &trace);
    CHECK(trace.size() == 2u * 4u * 3u);  // layers * heads * frames
    for (const Matrix& scores : trace)
        for (int i = 0; i < scores.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < scores.cols(); ++j) sum += scores(i, j);
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
}

TEST_CASE("precomputed key/value caches reproduce the uncached decode") {
    Detector det(small_config(), 29);
    Rng rng(30, "test/kv");
    Matrix prompts = rng.normal_matrix(5, 32, 1.0);
    VideoSpec vs = spec_for({2, 4});
    SyntheticVideo v = det.make_video(vs);
    FrameFeatures f = det.render_features(v, vs);
    FrameKv kv = det.precompute_kv(f);

    Tape ta, tb;
    std::vector<Var> za = det.transformer_decode(ta, ta.constant(prompts), f);
    std::vector<Var> zb = det.transformer_decode(tb, tb.constant(prompts), f, &kv);
    for (size_t i = 0; i < za.size(); ++i) CHECK(bitwise_equal(ta.val(za[i]), tb.val(zb[i])));
}

TEST_CASE("scale pyramid: first scale is the 2x pooled full-resolution embedding") {
    DetectorConfig cfg = small_config();
    Detector det(cfg, 31);
    VideoSpec vs = spec_for({1});
    SyntheticVideo v = det.make_video(vs);
    FrameFeatures f = det.render_features(v, vs);
    Matrix pooled = avg_pool_2x2(f.f_out[0], cfg.height, cfg.width);
    CHECK(bitwise_equal(pooled, f.scale1[0]));
    CHECK(f.scale2[0].rows() == (cfg.height / 4) * (cfg.width / 4));
}
