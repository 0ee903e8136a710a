#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mbrec/common.hpp"

namespace mbrec::data {

struct Interaction {
    int item = 0;       // internal item index
    int behavior = 0;   // index into behavior vocabulary
    std::int64_t timestamp = 0;
};

struct UserHistory {
    std::string raw_id;
    std::vector<Interaction> events;  // ascending timestamp, ties in file order
};

// Interaction log with leave-one-out splits: per user the last event is the test
// interaction, the second-to-last is validation, everything earlier is training.
class InteractionDataset {
public:
    static constexpr int kMinEventsPerUser = 3;

    std::vector<UserHistory> users;
    std::vector<std::string> item_raw_ids;      // internal item index -> raw id
    std::vector<std::string> behavior_names;
    int target_behavior = 0;

    std::size_t user_count() const { return users.size(); }
    std::size_t item_count() const { return item_raw_ids.size(); }
    std::size_t behavior_count() const { return behavior_names.size(); }
    std::size_t total_events() const;

    const Interaction& test_event(std::size_t u) const;
    const Interaction& valid_event(std::size_t u) const;
    // Events strictly before the validation event.
    std::vector<Interaction> train_events(std::size_t u) const;
    // Model inputs: most recent max_len events preceding the split point.
    std::vector<Interaction> history_for_valid(std::size_t u, std::size_t max_len) const;
    std::vector<Interaction> history_for_test(std::size_t u, std::size_t max_len) const;

    int behavior_index(const std::string& name) const;  // -1 if absent

    // Canonical text form: directive lines, header, then one row per event in
    // user order. Ingesting the export reproduces the dataset exactly.
    std::string export_text() const;
    void save(const std::filesystem::path& path) const;
    std::string content_hash_hex() const;

    void validate() const;
};

struct IngestOptions {
    int min_count = 5;               // drop items with fewer training-region occurrences; 0 disables
    char delimiter = '\0';           // '\0' = auto-detect (tab, then comma)
    std::vector<std::string> behavior_names;  // empty = accept first-seen order
    std::string target_behavior;     // by name; empty = first behavior
    std::size_t max_users = 0;       // 0 = no cap; otherwise keep first N surviving users
};

InteractionDataset ingest_text(const std::string& text, const IngestOptions& opt = {});
InteractionDataset ingest_file(const std::filesystem::path& path, const IngestOptions& opt = {});

// Keeps the most recent max_len interactions.
std::vector<Interaction> truncate_history(const std::vector<Interaction>& events,
                                          std::size_t max_len);

}  // namespace mbrec::data
