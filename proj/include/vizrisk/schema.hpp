#pragma once

// Declarative zero-shot query schema: clusters of tasks, each task a set of
// mutually exclusive queries whose probabilities sum to one per image.
// Clusters may be routed: applied to an image only when a trigger query wins
// its source task.

#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vizrisk/error.hpp"

namespace vizrisk {

struct QuerySpec {
    std::string id;
    std::string text;
    bool report_primary = false;

    bool operator==(const QuerySpec&) const = default;
};

struct TaskSpec {
    std::string name;
    std::vector<QuerySpec> queries;

    bool operator==(const TaskSpec&) const = default;
};

struct RoutingRule {
    std::string source_task;
    std::string trigger_query;

    bool operator==(const RoutingRule&) const = default;
};

struct ClusterSpec {
    std::string name;
    std::optional<RoutingRule> route;
    std::vector<TaskSpec> tasks;

    bool routed() const noexcept { return route.has_value(); }
    bool operator==(const ClusterSpec&) const = default;
};

/// Column placement of one task in the flattened feature vector.
struct TaskLayout {
    std::size_t cluster = 0;
    std::size_t offset = 0;  // first column
    std::size_t size = 0;    // N_t
    std::optional<std::size_t> primary_column;  // set for two-query tasks
};

struct ClusterLayout {
    std::size_t first_task = 0;
    std::size_t task_count = 0;
    std::size_t column_begin = 0;
    std::size_t column_end = 0;
    // Routed clusters only.
    std::optional<std::size_t> source_task;
    std::optional<std::size_t> trigger_column;
};

/// Validated, immutable schema. Feature columns follow the depth-first
/// (cluster, task, query) order of the clusters.
class TaskSchema {
public:
    /// Validates and lays out the clusters; throws input_error naming the
    /// offending location.
    static TaskSchema build(int version, std::vector<ClusterSpec> clusters);

    int version() const noexcept { return version_; }
    const std::vector<ClusterSpec>& clusters() const noexcept { return clusters_; }
    std::size_t dimension() const noexcept { return column_ids_.size(); }
    const std::vector<std::string>& column_ids() const noexcept { return column_ids_; }
    const std::vector<TaskLayout>& tasks() const noexcept { return tasks_; }
    const std::vector<ClusterLayout>& cluster_layouts() const noexcept { return layouts_; }

    const TaskSpec& task(std::size_t global_index) const {
        const TaskLayout& t = tasks_.at(global_index);
        return clusters_[t.cluster].tasks[global_index - layouts_[t.cluster].first_task];
    }

    std::optional<std::size_t> column_of(std::string_view id) const {
        auto it = column_index_.find(std::string(id));
        if (it == column_index_.end()) return std::nullopt;
        return it->second;
    }

    /// Global task index owning a column.
    std::size_t task_of_column(std::size_t column) const { return column_task_.at(column); }

    bool operator==(const TaskSchema& o) const {
        return version_ == o.version_ && clusters_ == o.clusters_;
    }

private:
    int version_ = 1;
    std::vector<ClusterSpec> clusters_;
    std::vector<std::string> column_ids_;
    std::vector<TaskLayout> tasks_;
    std::vector<ClusterLayout> layouts_;
    std::vector<std::size_t> column_task_;
    std::unordered_map<std::string, std::size_t> column_index_;
};

inline TaskSchema TaskSchema::build(int version, std::vector<ClusterSpec> clusters) {
    TaskSchema s;
    s.version_ = version;
    s.clusters_ = std::move(clusters);

    if (s.clusters_.empty()) throw input_error("schema: clusters: at least one cluster is required");

    bool any_unconditional = false;
    for (std::size_t c = 0; c < s.clusters_.size(); ++c) {
        const ClusterSpec& cluster = s.clusters_[c];
        const std::string where = "clusters[" + std::to_string(c) + "]";
        if (cluster.name.empty()) throw input_error("schema: " + where + ".name: empty cluster name");
        if (cluster.tasks.empty()) throw input_error("schema: " + where + ".tasks: cluster has no tasks");
        any_unconditional = any_unconditional || !cluster.routed();

        ClusterLayout layout;
        layout.first_task = s.tasks_.size();
        layout.task_count = cluster.tasks.size();
        layout.column_begin = s.column_ids_.size();

        for (std::size_t t = 0; t < cluster.tasks.size(); ++t) {
            const TaskSpec& task = cluster.tasks[t];
            const std::string twhere = where + ".tasks[" + std::to_string(t) + "]";
            if (task.name.empty()) throw input_error("schema: " + twhere + ".name: empty task name");
            if (task.queries.size() < 2) {
                throw input_error("schema: " + twhere + " ('" + task.name + "'): a task needs at least 2 queries, found " +
                                  std::to_string(task.queries.size()));
            }
            TaskLayout tl;
            tl.cluster = c;
            tl.offset = s.column_ids_.size();
            tl.size = task.queries.size();

            std::size_t primaries = 0;
            for (std::size_t q = 0; q < task.queries.size(); ++q) {
                const QuerySpec& query = task.queries[q];
                const std::string qwhere = twhere + ".queries[" + std::to_string(q) + "]";
                if (query.id.empty()) throw input_error("schema: " + qwhere + ".id: empty query id");
                if (query.text.empty()) throw input_error("schema: " + qwhere + ".text: empty query text");
                const std::size_t column = s.column_ids_.size();
                if (!s.column_index_.emplace(query.id, column).second) {
                    throw input_error("schema: " + qwhere + ".id: duplicate query id '" + query.id + "'");
                }
                if (query.report_primary) {
                    ++primaries;
                    tl.primary_column = column;
                }
                s.column_ids_.push_back(query.id);
                s.column_task_.push_back(s.tasks_.size());
            }
            if (task.queries.size() == 2 && primaries != 1) {
                throw input_error("schema: " + twhere + " ('" + task.name +
                                  "'): a two-query task must mark exactly one query report_primary, found " +
                                  std::to_string(primaries));
            }
            if (task.queries.size() != 2) tl.primary_column.reset();
            s.tasks_.push_back(tl);
        }
        layout.column_end = s.column_ids_.size();
        s.layouts_.push_back(layout);
    }
    if (!any_unconditional) throw input_error("schema: clusters: at least one cluster must be unconditional");

    std::unordered_set<std::string> triggers;
    for (std::size_t c = 0; c < s.clusters_.size(); ++c) {
        const ClusterSpec& cluster = s.clusters_[c];
        if (!cluster.routed()) continue;
        const RoutingRule& rule = *cluster.route;
        const std::string where = "clusters[" + std::to_string(c) + "].route";

        auto col = s.column_of(rule.trigger_query);
        if (!col) throw input_error("schema: " + where + ".query: unknown query id '" + rule.trigger_query + "'");
        const std::size_t task_index = s.column_task_[*col];
        const TaskLayout& source = s.tasks_[task_index];
        if (s.clusters_[source.cluster].routed()) {
            throw input_error("schema: " + where + ": query '" + rule.trigger_query + "' lies in routed cluster '" +
                              s.clusters_[source.cluster].name + "'; routes must start from an unconditional cluster");
        }
        if (s.task(task_index).name != rule.source_task) {
            throw input_error("schema: " + where + ".task: query '" + rule.trigger_query + "' belongs to task '" +
                              s.task(task_index).name + "', not '" + rule.source_task + "'");
        }
        if (!triggers.insert(rule.trigger_query).second) {
            throw input_error("schema: " + where + ".query: trigger '" + rule.trigger_query +
                              "' already routes another cluster");
        }
        s.layouts_[c].source_task = task_index;
        s.layouts_[c].trigger_column = *col;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Document format

namespace schema_detail {

using ojson = nlohmann::ordered_json;

inline void require_keys(const ojson& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!obj.is_object()) throw input_error("schema: " + where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (auto k : allowed) known = known || it.key() == k;
        if (!known) throw input_error("schema: " + where + ": unknown field '" + it.key() + "'");
    }
}

inline std::string get_string(const ojson& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw input_error("schema: " + where + "." + key + ": missing field");
    if (!it->is_string()) throw input_error("schema: " + where + "." + key + ": expected a string");
    return it->get<std::string>();
}

inline const ojson& get_array(const ojson& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw input_error("schema: " + where + "." + key + ": missing field");
    if (!it->is_array()) throw input_error("schema: " + where + "." + key + ": expected an array");
    return *it;
}

}  // namespace schema_detail

/// Parses a JSON schema document:
///   {"version": 1, "clusters": [{"name": ..., "route": {"task": ..., "query": ...},
///     "tasks": [{"name": ..., "queries": [{"id": ..., "text": ..., "report_primary": true}]}]}]}
inline TaskSchema parse_schema(std::string_view source) {
    using namespace schema_detail;
    ojson doc;
    try {
        doc = ojson::parse(source);
    } catch (const ojson::exception& e) {
        throw input_error(std::string("schema: malformed document: ") + e.what());
    }
    require_keys(doc, {"version", "clusters"}, "(root)");
    auto vit = doc.find("version");
    if (vit == doc.end() || !vit->is_number_integer()) throw input_error("schema: version: expected an integer");

    std::vector<ClusterSpec> clusters;
    const ojson& jclusters = get_array(doc, "clusters", "(root)");
    for (std::size_t c = 0; c < jclusters.size(); ++c) {
        const ojson& jc = jclusters[c];
        const std::string where = "clusters[" + std::to_string(c) + "]";
        require_keys(jc, {"name", "route", "tasks"}, where);
        ClusterSpec cluster;
        cluster.name = get_string(jc, "name", where);
        if (auto rit = jc.find("route"); rit != jc.end()) {
            require_keys(*rit, {"task", "query"}, where + ".route");
            cluster.route = RoutingRule{get_string(*rit, "task", where + ".route"),
                                        get_string(*rit, "query", where + ".route")};
        }
        const ojson& jtasks = get_array(jc, "tasks", where);
        for (std::size_t t = 0; t < jtasks.size(); ++t) {
            const ojson& jt = jtasks[t];
            const std::string twhere = where + ".tasks[" + std::to_string(t) + "]";
            require_keys(jt, {"name", "queries"}, twhere);
            TaskSpec task;
            task.name = get_string(jt, "name", twhere);
            const ojson& jqueries = get_array(jt, "queries", twhere);
            for (std::size_t q = 0; q < jqueries.size(); ++q) {
                const ojson& jq = jqueries[q];
                const std::string qwhere = twhere + ".queries[" + std::to_string(q) + "]";
                require_keys(jq, {"id", "text", "report_primary"}, qwhere);
                QuerySpec query;
                query.id = get_string(jq, "id", qwhere);
                query.text = get_string(jq, "text", qwhere);
                if (auto pit = jq.find("report_primary"); pit != jq.end()) {
                    if (!pit->is_boolean()) throw input_error("schema: " + qwhere + ".report_primary: expected a boolean");
                    query.report_primary = pit->get<bool>();
                }
                task.queries.push_back(std::move(query));
            }
            cluster.tasks.push_back(std::move(task));
        }
        clusters.push_back(std::move(cluster));
    }
    return TaskSchema::build(vit->get<int>(), std::move(clusters));
}

inline TaskSchema load_schema(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("schema: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_schema(buf.str());
}

/// Canonical serialization (two-space indented JSON, document order).
inline std::string serialize_schema(const TaskSchema& schema) {
    using schema_detail::ojson;
    ojson doc;
    doc["version"] = schema.version();
    ojson clusters = ojson::array();
    for (const ClusterSpec& c : schema.clusters()) {
        ojson jc;
        jc["name"] = c.name;
        if (c.route) jc["route"] = ojson{{"task", c.route->source_task}, {"query", c.route->trigger_query}};
        ojson tasks = ojson::array();
        for (const TaskSpec& t : c.tasks) {
            ojson queries = ojson::array();
            for (const QuerySpec& q : t.queries) {
                ojson jq;
                jq["id"] = q.id;
                jq["text"] = q.text;
                if (q.report_primary) jq["report_primary"] = true;
                queries.push_back(std::move(jq));
            }
            tasks.push_back(ojson{{"name", t.name}, {"queries", std::move(queries)}});
        }
        jc["tasks"] = std::move(tasks);
        clusters.push_back(std::move(jc));
    }
    doc["clusters"] = std::move(clusters);
    return doc.dump(2) + "\n";
}

/// The built-in 24-query schema: three clusters, nine tasks.
inline TaskSchema default_schema() {
    auto q = [](std::string id, std::string text, bool primary = false) {
        return QuerySpec{std::move(id), std::move(text), primary};
    };
    std::vector<ClusterSpec> clusters;

    clusters.push_back(ClusterSpec{
        "general visual features",
        std::nullopt,
        {
            TaskSpec{"content",
                     {q("content.person", "An image of one person"), q("content.people", "An image of people"),
                      q("content.animal", "An image of an animal"), q("content.object", "An image of an object"),
                      q("content.text", "An image of text")}},
            TaskSpec{"brightness", {q("brightness.dark", "A dark photo", true), q("brightness.bright", "A bright photo")}},
            TaskSpec{"sentiment",
                     {q("sentiment.negative", "An image of negative feeling", true),
                      q("sentiment.positive", "An image of positive feeling")}},
        }});

    clusters.push_back(ClusterSpec{
        "person characterization",
        RoutingRule{"content", "content.person"},
        {
            TaskSpec{"photographer",
                     {q("person.photographer.selfie", "The photo is a selfie", true),
                      q("person.photographer.other", "The photo was taken by someone else")}},
            TaskSpec{"emotion",
                     {q("person.emotion.sad", "A photo of a sad person", true),
                      q("person.emotion.happy", "A photo of a happy person")}},
            TaskSpec{"development",
                     {q("person.development.child", "A photo of a child"),
                      q("person.development.adult", "A photo of an adult"),
                      q("person.development.old", "A photo of an old person")}},
        }});

    clusters.push_back(ClusterSpec{
        "people characterization",
        RoutingRule{"content", "content.people"},
        {
            TaskSpec{"photographer",
                     {q("people.photographer.selfie", "The photo is a selfie", true),
                      q("people.photographer.other", "The photo was taken by someone else")}},
            TaskSpec{"emotion",
                     {q("people.emotion.happy", "A photo of happy people"),
                      q("people.emotion.sad", "A photo of sad people", true)}},
            TaskSpec{"relationship",
                     {q("people.relationship.family", "A photo of a family"),
                      q("people.relationship.friends", "A photo of friends"),
                      q("people.relationship.colleagues", "A photo of colleagues"),
                      q("people.relationship.couple", "A photo of couple")}},
        }});

    return TaskSchema::build(1, std::move(clusters));
}

/// "builtin" selects default_schema(); anything else is a file path.
inline TaskSchema resolve_schema(const std::string& path_or_builtin) {
    if (path_or_builtin.empty() || path_or_builtin == "builtin") return default_schema();
    return load_schema(path_or_builtin);
}

}  // namespace vizrisk
