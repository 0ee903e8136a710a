#include "mbrec/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>

#include "mbrec/io.hpp"
#include "mbrec/rng.hpp"

namespace mbrec::data {

namespace {

std::int64_t parse_timestamp(const std::string& field, std::size_t line_no) {
    std::int64_t v = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw DataError("line " + std::to_string(line_no) + ": bad timestamp '" + field + "'");
    return v;
}

struct RawRow {
    std::string user, item;
    int behavior;
    std::int64_t timestamp;
    std::size_t order;  // file position, for stable timestamp ties
};

}  // namespace

std::size_t InteractionDataset::total_events() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.events.size();
    return n;
}

const Interaction& InteractionDataset::test_event(std::size_t u) const {
    return users[u].events.back();
}

const Interaction& InteractionDataset::valid_event(std::size_t u) const {
    return users[u].events[users[u].events.size() - 2];
}

std::vector<Interaction> InteractionDataset::train_events(std::size_t u) const {
    const auto& ev = users[u].events;
    return {ev.begin(), ev.end() - 2};
}

std::vector<Interaction> InteractionDataset::history_for_valid(std::size_t u,
                                                               std::size_t max_len) const {
    return truncate_history(train_events(u), max_len);
}

std::vector<Interaction> InteractionDataset::history_for_test(std::size_t u,
                                                              std::size_t max_len) const {
    const auto& ev = users[u].events;
    std::vector<Interaction> upto_test(ev.begin(), ev.end() - 1);
    return truncate_history(upto_test, max_len);
}

int InteractionDataset::behavior_index(const std::string& name) const {
    for (std::size_t i = 0; i < behavior_names.size(); ++i)
        if (behavior_names[i] == name) return static_cast<int>(i);
    return -1;
}

std::string InteractionDataset::export_text() const {
    std::string out;
    out += "#behaviors\t" + join(behavior_names, ",") + "\n";
    out += "#target\t" + behavior_names.at(static_cast<std::size_t>(target_behavior)) + "\n";
    out += "user\titem\tbehavior\ttimestamp\n";
    for (const auto& u : users)
        for (const auto& e : u.events) {
            out += u.raw_id;
            out += '\t';
            out += item_raw_ids[static_cast<std::size_t>(e.item)];
            out += '\t';
            out += behavior_names[static_cast<std::size_t>(e.behavior)];
            out += '\t';
            out += std::to_string(e.timestamp);
            out += '\n';
        }
    return out;
}

void InteractionDataset::save(const std::filesystem::path& path) const {
    atomic_write_file(path, export_text());
}

std::string InteractionDataset::content_hash_hex() const {
    const std::string text = export_text();
    return hash_hex(fnv1a64(text.data(), text.size()));
}

void InteractionDataset::validate() const {
    if (behavior_names.empty()) throw DataError("dataset: no behaviors");
    if (target_behavior < 0 ||
        static_cast<std::size_t>(target_behavior) >= behavior_names.size())
        throw DataError("dataset: target behavior index out of range");
    for (const auto& u : users) {
        if (u.events.size() < kMinEventsPerUser)
            throw DataError("dataset: user " + u.raw_id + " has fewer than " +
                            std::to_string(kMinEventsPerUser) + " interactions");
        for (std::size_t i = 1; i < u.events.size(); ++i)
            if (u.events[i].timestamp < u.events[i - 1].timestamp)
                throw DataError("dataset: user " + u.raw_id + " events out of order");
    }
}

InteractionDataset ingest_text(const std::string& text, const IngestOptions& opt) {
    std::vector<std::string> behavior_names = opt.behavior_names;
    const bool fixed_vocab_from_options = !behavior_names.empty();
    bool fixed_vocab = fixed_vocab_from_options;
    std::string target_name = opt.target_behavior;

    // Pass 1: parse rows, honoring directive lines and an optional header.
    std::vector<RawRow> rows;
    std::unordered_map<std::string, int> behavior_index;
    for (std::size_t i = 0; i < behavior_names.size(); ++i)
        behavior_index[behavior_names[i]] = static_cast<int>(i);

    std::size_t line_no = 0;
    std::size_t start = 0;
    char delim = opt.delimiter;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (start > text.size()) break;
            continue;
        }
        if (line[0] == '#') {
            auto fields = split(line, '\t');
            if (fields[0] == "#behaviors" && fields.size() == 2 && !fixed_vocab_from_options) {
                behavior_names = split(fields[1], ',');
                behavior_index.clear();
                for (std::size_t i = 0; i < behavior_names.size(); ++i)
                    behavior_index[behavior_names[i]] = static_cast<int>(i);
                fixed_vocab = true;
            } else if (fields[0] == "#target" && fields.size() == 2 && target_name.empty()) {
                target_name = fields[1];
            }
            continue;
        }
        if (delim == '\0') delim = line.find('\t') != std::string::npos ? '\t' : ',';
        auto fields = split(line, delim);
        if (fields.size() != 4)
            throw DataError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                            std::to_string(fields.size()));
        if (fields[0] == "user" && fields[3] == "timestamp") continue;  // header
        int b;
        auto it = behavior_index.find(fields[2]);
        if (it != behavior_index.end()) {
            b = it->second;
        } else if (fixed_vocab) {
            throw DataError("line " + std::to_string(line_no) + ": unknown behavior '" +
                            fields[2] + "', vocabulary is [" + join(behavior_names, ",") + "]");
        } else {
            b = static_cast<int>(behavior_names.size());
            behavior_names.push_back(fields[2]);
            behavior_index[fields[2]] = b;
        }
        rows.push_back({std::move(fields[0]), std::move(fields[1]), b,
                        parse_timestamp(fields[3], line_no), rows.size()});
    }
    if (rows.empty()) throw DataError("ingest: no interaction rows found");

    // Group rows per user in first-seen order, then sort each by timestamp
    // (stable: file order breaks ties).
    std::unordered_map<std::string, std::size_t> user_index;
    std::vector<std::string> user_ids;
    std::vector<std::vector<const RawRow*>> per_user;
    for (const auto& r : rows) {
        auto [it, inserted] = user_index.try_emplace(r.user, user_ids.size());
        if (inserted) {
            user_ids.push_back(r.user);
            per_user.emplace_back();
        }
        per_user[it->second].push_back(&r);
    }
    for (auto& ev : per_user)
        std::stable_sort(ev.begin(), ev.end(), [](const RawRow* a, const RawRow* b) {
            if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
            return a->order < b->order;
        });

    // Item frequency filter, counted over each user's training region (all but
    // the final two events) before any truncation.
    std::unordered_map<std::string, int> keep_item;
    if (opt.min_count > 0) {
        std::unordered_map<std::string, int> train_counts;
        for (const auto& ev : per_user) {
            if (ev.size() < InteractionDataset::kMinEventsPerUser) continue;
            for (std::size_t i = 0; i + 2 < ev.size(); ++i) ++train_counts[ev[i]->item];
        }
        for (const auto& [item, count] : train_counts)
            if (count >= opt.min_count) keep_item[item] = 1;
    }

    // Keep users that still have enough events after filtering, then assign item
    // indices in first-seen order over surviving interactions only.
    std::vector<std::size_t> kept_users;
    std::vector<std::vector<const RawRow*>> kept_events;
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        std::vector<const RawRow*> ev;
        for (const RawRow* r : per_user[u])
            if (opt.min_count == 0 || keep_item.count(r->item)) ev.push_back(r);
        if (ev.size() < InteractionDataset::kMinEventsPerUser) continue;
        if (opt.max_users > 0 && kept_users.size() >= opt.max_users) break;
        kept_users.push_back(u);
        kept_events.push_back(std::move(ev));
    }

    InteractionDataset ds;
    ds.behavior_names = behavior_names;
    std::unordered_map<std::string, int> item_index;
    for (std::size_t k = 0; k < kept_users.size(); ++k) {
        UserHistory hist;
        hist.raw_id = user_ids[kept_users[k]];
        for (const RawRow* r : kept_events[k]) {
            auto [it, inserted] = item_index.try_emplace(r->item,
                                                         static_cast<int>(ds.item_raw_ids.size()));
            if (inserted) ds.item_raw_ids.push_back(r->item);
            hist.events.push_back({it->second, r->behavior, r->timestamp});
        }
        ds.users.push_back(std::move(hist));
    }
    if (ds.users.empty())
        throw DataError("ingest: no user kept at least " +
                        std::to_string(InteractionDataset::kMinEventsPerUser) + " interactions");

    if (!target_name.empty()) {
        int t = ds.behavior_index(target_name);
        if (t < 0)
            throw DataError("ingest: target behavior '" + target_name +
                            "' not in vocabulary [" + join(ds.behavior_names, ",") + "]");
        ds.target_behavior = t;
    }
    ds.validate();
    return ds;
}

InteractionDataset ingest_file(const std::filesystem::path& path, const IngestOptions& opt) {
    return ingest_text(read_text_file(path), opt);
}

std::vector<Interaction> truncate_history(const std::vector<Interaction>& events,
                                          std::size_t max_len) {
    if (events.size() <= max_len) return events;
    return {events.end() - static_cast<std::ptrdiff_t>(max_len), events.end()};
}

}  // namespace mbrec::data
