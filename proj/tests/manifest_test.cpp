#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "wscurate/manifest.hpp"

using namespace wscurate;

namespace {

SampleTable parse(const std::string& text) {
    std::istringstream in(text);
    return read_manifest(in);
}

Detection box(double x0, double y0, double x1, double y1, double logit) { return {x0, y0, x1, y1, logit, "obj"}; }

} // namespace

TEST(LoadManifest, EmptyFileHasNoRecords) {
    oracle::TempDir dir;
    const auto table = load_manifest(dir.write("m.jsonl", ""));
    EXPECT_EQ(table.size(), 0u);
}

TEST(LoadManifest, EmptyDetectionsHaveNoMetrics) {
    const auto t = parse(R"({"id":"a","clip_score":0.3,"detections":[]})" "\n");
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.metrics(0).num_objects, 0u);
    EXPECT_FALSE(t.metrics(0).avg_logit);
    EXPECT_FALSE(t.metrics(0).max_logit);
    EXPECT_FALSE(t.metrics(0).avg_rel_area);
}

TEST(LoadManifest, DuplicateIdIsRejected) {
    EXPECT_THROW(parse(R"({"id":"a1","clip_score":0.3,"detections":[]})"
                       "\n"
                       R"({"id":"a1","clip_score":0.4,"detections":[]})"
                       "\n"),
                 ValidationError);
}

TEST(LoadManifest, MalformedLineNamesLineNumber) {
    try {
        parse(R"({"id":"a","clip_score":0.3,"detections":[]})"
              "\n\n{not json}\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(LoadManifest, MissingAndMistypedFields) {
    EXPECT_THROW(parse(R"({"id":"a","detections":[]})"), ParseError);
    EXPECT_THROW(parse(R"({"id":7,"clip_score":0.1,"detections":[]})"), ParseError);
    EXPECT_THROW(parse(R"({"id":"a","clip_score":0.1,"detections":{}})"), ParseError);
    EXPECT_THROW(parse(R"({"id":"a","clip_score":0.1,"detections":[{"x0":0,"y0":0,"x1":1,"y1":1,"logit":0.5}]})"),
                 ParseError);
    EXPECT_THROW(parse("[1,2]"), ParseError);
}

TEST(LoadManifest, OutOfRangeValuesAreRejected) {
    auto rec = [](const std::string& det) {
        return R"({"id":"a","clip_score":0.1,"detections":[)" + det + "]}";
    };
    EXPECT_THROW(parse(rec(R"({"x0":0,"y0":0,"x1":1.2,"y1":1,"logit":0.5,"phrase":"p"})")), ValidationError);
    EXPECT_THROW(parse(rec(R"({"x0":-0.1,"y0":0,"x1":1,"y1":1,"logit":0.5,"phrase":"p"})")), ValidationError);
    EXPECT_THROW(parse(rec(R"({"x0":0.6,"y0":0,"x1":0.5,"y1":1,"logit":0.5,"phrase":"p"})")), ValidationError);
    EXPECT_THROW(parse(rec(R"({"x0":0,"y0":0,"x1":1,"y1":1,"logit":1.5,"phrase":"p"})")), ValidationError);
    EXPECT_NO_THROW(parse(rec(R"({"x0":0,"y0":0,"x1":1,"y1":1,"logit":1,"phrase":"p"})")));
}

TEST(LoadManifest, UnknownFieldsAreCounted) {
    const auto t = parse(R"({"id":"a","clip_score":0.1,"url":"x","detections":[{"x0":0,"y0":0,"x1":1,"y1":1,"logit":0.5,"phrase":"p","label":3}]})");
    EXPECT_EQ(t.unknown_field_count(), 2u);
}

TEST(LoadManifest, MissingFileIsAnIoError) {
    EXPECT_THROW(load_manifest("/nonexistent/manifest.jsonl"), IoError);
}

TEST(DeriveMetrics, SingleDetection) {
    const auto m = derive_metrics({"a", 0.0, {box(0, 0, 0.5, 0.5, 0.6)}});
    EXPECT_EQ(m.num_objects, 1u);
    EXPECT_DOUBLE_EQ(*m.avg_logit, 0.6);
    EXPECT_DOUBLE_EQ(*m.max_logit, 0.6);
    EXPECT_DOUBLE_EQ(*m.avg_rel_area, 0.25);
}

TEST(DeriveMetrics, TwoDetectionsHandComputed) {
    // (1.0 * 1.0 + 0.2 * 0.2) / 2 = 0.52
    const auto m = derive_metrics({"a", 0.0, {box(0, 0, 1, 1, 0.4), box(0, 0, 0.2, 0.2, 0.8)}});
    EXPECT_EQ(m.num_objects, 2u);
    EXPECT_NEAR(*m.avg_logit, 0.6, 1e-15);
    EXPECT_DOUBLE_EQ(*m.max_logit, 0.8);
    EXPECT_NEAR(*m.avg_rel_area, 0.52, 1e-15);
}

TEST(DeriveMetrics, EmptyDetections) {
    const auto m = derive_metrics({"a", 0.0, {}});
    EXPECT_EQ(m, DetectionMetrics{});
}

TEST(DeriveMetrics, PermutationInvariantAndBounded) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        SampleRecord r{"a", 0.0, {}};
        const int k = 1 + static_cast<int>(gen() % 9);
        for (int d = 0; d < k; ++d) {
            double a = u(gen), b = u(gen), c = u(gen), e = u(gen);
            r.detections.push_back(box(std::min(a, b), std::min(c, e), std::max(a, b), std::max(c, e), u(gen)));
        }
        const auto base = derive_metrics(r);
        double lo_l = 1, hi_l = 0, lo_a = 1, hi_a = 0;
        for (const auto& d : r.detections) {
            lo_l = std::min(lo_l, d.logit);
            hi_l = std::max(hi_l, d.logit);
            lo_a = std::min(lo_a, d.area_fraction());
            hi_a = std::max(hi_a, d.area_fraction());
        }
        EXPECT_GE(*base.avg_logit, lo_l);
        EXPECT_LE(*base.avg_logit, hi_l);
        EXPECT_GE(*base.avg_rel_area, lo_a);
        EXPECT_LE(*base.avg_rel_area, hi_a);
        EXPECT_GE(*base.max_logit, *base.avg_logit);

        std::shuffle(r.detections.begin(), r.detections.end(), gen);
        EXPECT_EQ(derive_metrics(r), base);
    }
}

TEST(SaveManifest, RoundTripsRecords) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SampleRecord> records;
    for (int i = 0; i < 50; ++i) {
        SampleRecord r{"id-" + std::to_string(i) + "\"\\\xc3\xa9", u(gen) * 2 - 1, {}};
        for (int d = 0; d < i % 4; ++d) {
            double a = u(gen), b = u(gen);
            r.detections.push_back({std::min(a, b), 0.1, std::max(a, b), 0.9, u(gen), "a \"quoted\" phrase"});
        }
        records.push_back(std::move(r));
    }
    oracle::TempDir dir;
    save_manifest(dir.file("m.jsonl"), records);
    const auto t = load_manifest(dir.file("m.jsonl"));
    EXPECT_EQ(t.records(), records);
    EXPECT_EQ(t.unknown_field_count(), 0u);
}
