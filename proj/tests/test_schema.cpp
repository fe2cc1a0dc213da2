#include <gtest/gtest.h>

#include <set>
#include <string>

#include "test_support.hpp"
#include "vizrisk/schema.hpp"

using namespace vizrisk;

namespace {

std::string minimal_doc() {
    return R"({"version": 1, "clusters": [{"name": "c", "tasks": [{"name": "t", "queries": [
        {"id": "t.a", "text": "A", "report_primary": true}, {"id": "t.b", "text": "B"}]}]}]})";
}

std::string expect_error(const std::string& doc) {
    try {
        parse_schema(doc);
    } catch (const input_error& e) {
        return e.what();
    }
    ADD_FAILURE() << "no error for: " << doc;
    return {};
}

std::string builtin_with(const std::string& from, const std::string& to) {
    std::string doc = serialize_schema(default_schema());
    const auto pos = doc.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    doc.replace(pos, from.size(), to);
    return doc;
}

}  // namespace

TEST(DefaultSchema, Shape) {
    const TaskSchema s = default_schema();
    EXPECT_EQ(s.dimension(), 24u);
    EXPECT_EQ(s.clusters().size(), 3u);
    EXPECT_EQ(s.tasks().size(), 9u);
    const std::vector<std::size_t> sizes = {5, 2, 2, 2, 2, 3, 2, 2, 4};
    for (std::size_t t = 0; t < 9; ++t) EXPECT_EQ(s.tasks()[t].size, sizes[t]) << t;
    std::set<std::string> ids(s.column_ids().begin(), s.column_ids().end());
    EXPECT_EQ(ids.size(), 24u);
}

TEST(DefaultSchema, RoutesAndTexts) {
    const TaskSchema s = default_schema();
    ASSERT_TRUE(s.clusters()[1].route);
    EXPECT_EQ(s.clusters()[1].name, "person characterization");
    EXPECT_EQ(s.clusters()[1].route->trigger_query, "content.person");
    EXPECT_EQ(s.clusters()[2].route->trigger_query, "content.people");
    EXPECT_EQ(s.clusters()[1].route->source_task, "content");
    EXPECT_EQ(*s.cluster_layouts()[1].trigger_column, *s.column_of("content.person"));

    const TaskSpec& development = s.task(5);
    EXPECT_EQ(development.name, "development");
    ASSERT_EQ(development.queries.size(), 3u);
    EXPECT_EQ(development.queries[0].text, "A photo of a child");
    EXPECT_EQ(development.queries[2].text, "A photo of an old person");

    EXPECT_EQ(s.task(8).queries[3].text, "A photo of couple");
    EXPECT_EQ(s.task(3).queries[0].text, "The photo is a selfie");
    EXPECT_EQ(s.task(4).queries[0].text, "A photo of a sad person");
    EXPECT_EQ(s.task(0).queries[0].text, "An image of one person");
    EXPECT_EQ(s.task(0).queries[1].text, "An image of people");
}

TEST(DefaultSchema, ReportPrimaryMarksNegativeAndSelfie) {
    const TaskSchema s = default_schema();
    std::vector<std::string> primaries;
    for (const auto& t : s.tasks())
        if (t.primary_column) primaries.push_back(s.column_ids()[*t.primary_column]);
    const std::vector<std::string> expected = {"brightness.dark",    "sentiment.negative",        "person.photographer.selfie",
                                               "person.emotion.sad", "people.photographer.selfie", "people.emotion.sad"};
    EXPECT_EQ(primaries, expected);
}

TEST(DefaultSchema, RoutesStartInUnconditionalClusters) {
    const TaskSchema s = default_schema();
    for (std::size_t c = 0; c < s.clusters().size(); ++c) {
        const auto& layout = s.cluster_layouts()[c];
        if (!s.clusters()[c].routed()) continue;
        const TaskLayout& source = s.tasks()[*layout.source_task];
        EXPECT_FALSE(s.clusters()[source.cluster].routed());
        EXPECT_GE(*layout.trigger_column, source.offset);
        EXPECT_LT(*layout.trigger_column, source.offset + source.size);
    }
}

TEST(ParseSchema, MinimalDocument) {
    const TaskSchema s = parse_schema(minimal_doc());
    EXPECT_EQ(s.dimension(), 2u);
    EXPECT_EQ(s.column_ids()[0], "t.a");
    EXPECT_EQ(*s.tasks()[0].primary_column, 0u);
}

TEST(ParseSchema, RoundTripBuiltin) {
    const TaskSchema s = default_schema();
    const std::string text = serialize_schema(s);
    const TaskSchema back = parse_schema(text);
    EXPECT_EQ(back, s);
    EXPECT_EQ(serialize_schema(back), text);
}

TEST(ParseSchema, ShippedCanonicalFileMatchesBuiltin) {
    const std::string shipped = testing_support::slurp(testing_support::source_path("schemas/default.json"));
    EXPECT_EQ(shipped, serialize_schema(default_schema()));
    EXPECT_EQ(load_schema(testing_support::source_path("schemas/default.json")), default_schema());
}

TEST(ParseSchema, RoundTripVariants) {
    // A handful of structurally different valid schemas.
    const std::vector<std::string> docs = {
        minimal_doc(),
        R"({"version": 3, "clusters": [
            {"name": "base", "tasks": [{"name": "kind", "queries": [
                {"id": "k.x", "text": "x"}, {"id": "k.y", "text": "y"}, {"id": "k.z", "text": "z"}]}]},
            {"name": "on x", "route": {"task": "kind", "query": "k.x"}, "tasks": [
                {"name": "m", "queries": [{"id": "m.a", "text": "a"}, {"id": "m.b", "text": "b", "report_primary": true}]}]},
            {"name": "on z", "route": {"task": "kind", "query": "k.z"}, "tasks": [
                {"name": "n", "queries": [{"id": "n.a", "text": "a"}, {"id": "n.b", "text": "b"}, {"id": "n.c", "text": "c"}]}]}]})",
    };
    for (const auto& d : docs) {
        const TaskSchema s = parse_schema(d);
        EXPECT_EQ(parse_schema(serialize_schema(s)), s);
    }
}

TEST(ParseSchema, DanglingRouteNamesTheId) {
    const std::string msg = expect_error(builtin_with(R"("query": "content.person")", R"("query": "content.persn")"));
    EXPECT_NE(msg.find("content.persn"), std::string::npos) << msg;
    EXPECT_NE(msg.find("clusters[1].route"), std::string::npos) << msg;
}

TEST(ParseSchema, Errors) {
    EXPECT_NE(expect_error("{not json").find("malformed"), std::string::npos);
    EXPECT_NE(expect_error(R"({"version": 1, "clusters": []})").find("at least one cluster"), std::string::npos);
    // task with a single query
    EXPECT_NE(expect_error(R"({"version": 1, "clusters": [{"name": "c", "tasks": [{"name": "t", "queries": [
        {"id": "a", "text": "A"}]}]}]})")
                  .find("at least 2 queries"),
              std::string::npos);
    // duplicate id across tasks
    EXPECT_NE(expect_error(R"({"version": 1, "clusters": [{"name": "c", "tasks": [
        {"name": "t", "queries": [{"id": "a", "text": "A", "report_primary": true}, {"id": "b", "text": "B"}]},
        {"name": "u", "queries": [{"id": "a", "text": "A", "report_primary": true}, {"id": "c", "text": "C"}]}]}]})")
                  .find("duplicate query id 'a'"),
              std::string::npos);
    // two-query task without a primary
    EXPECT_NE(expect_error(R"({"version": 1, "clusters": [{"name": "c", "tasks": [{"name": "t", "queries": [
        {"id": "a", "text": "A"}, {"id": "b", "text": "B"}]}]}]})")
                  .find("report_primary"),
              std::string::npos);
    // unknown key
    EXPECT_NE(expect_error(R"({"version": 1, "clusters": [], "extra": 1})").find("extra"), std::string::npos);
    // route pointing at the wrong task name
    EXPECT_NE(expect_error(builtin_with(R"("task": "content",
        "query": "content.person")",
                                        R"("task": "brightness",
        "query": "content.person")"))
                  .find("not 'brightness'"),
              std::string::npos);
}

TEST(ParseSchema, RouteFromRoutedClusterRejected) {
    const std::string doc = R"({"version": 1, "clusters": [
        {"name": "base", "tasks": [{"name": "kind", "queries": [{"id": "k.x", "text": "x"}, {"id": "k.y", "text": "y"}, {"id": "k.z", "text": "z"}]}]},
        {"name": "r1", "route": {"task": "kind", "query": "k.x"}, "tasks": [
            {"name": "m", "queries": [{"id": "m.a", "text": "a"}, {"id": "m.b", "text": "b"}, {"id": "m.c", "text": "c"}]}]},
        {"name": "r2", "route": {"task": "m", "query": "m.a"}, "tasks": [
            {"name": "n", "queries": [{"id": "n.a", "text": "a"}, {"id": "n.b", "text": "b"}, {"id": "n.c", "text": "c"}]}]}]})";
    const std::string msg = expect_error(doc);
    EXPECT_NE(msg.find("routed cluster"), std::string::npos) << msg;
    EXPECT_NE(msg.find("clusters[2]"), std::string::npos) << msg;
}

TEST(ParseSchema, AllRoutedRejected) {
    EXPECT_THROW(TaskSchema::build(1, {ClusterSpec{"c", RoutingRule{"t", "t.a"},
                                                   {TaskSpec{"t", {{"t.a", "A", true}, {"t.b", "B", false}}}}}}),
                 input_error);
}

TEST(ParseSchema, DuplicateTriggerRejected) {
    const std::string doc = R"({"version": 1, "clusters": [
        {"name": "base", "tasks": [{"name": "kind", "queries": [{"id": "k.x", "text": "x"}, {"id": "k.y", "text": "y"}, {"id": "k.z", "text": "z"}]}]},
        {"name": "r1", "route": {"task": "kind", "query": "k.x"}, "tasks": [
            {"name": "m", "queries": [{"id": "m.a", "text": "a"}, {"id": "m.b", "text": "b"}, {"id": "m.c", "text": "c"}]}]},
        {"name": "r2", "route": {"task": "kind", "query": "k.x"}, "tasks": [
            {"name": "n", "queries": [{"id": "n.a", "text": "a"}, {"id": "n.b", "text": "b"}, {"id": "n.c", "text": "c"}]}]}]})";
    EXPECT_NE(expect_error(doc).find("already routes"), std::string::npos);
}

TEST(ResolveSchema, BuiltinAndMissingFile) {
    EXPECT_EQ(resolve_schema("builtin"), default_schema());
    EXPECT_THROW(resolve_schema("/nonexistent/schema.json"), input_error);
}
