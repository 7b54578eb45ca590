#include "cmt/ranked_list.hpp"

#include <algorithm>
#include <unordered_set>

namespace cmt {

void RankedList::sort() { std::sort(entries.begin(), entries.end(), ranks_before); }

bool RankedList::valid() const
{
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!seen.insert(entries[i].doc_id).second) {
            return false;
        }
        if (i > 0 && !ranks_before(entries[i - 1], entries[i])) {
            return false;
        }
    }
    return true;
}

std::vector<std::string> RankedList::doc_ids() const
{
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) {
        ids.push_back(e.doc_id);
    }
    return ids;
}

const RankedList& Run::at(corpus::QueryId query) const
{
    static const RankedList empty;
    auto it = lists.find(query);
    return it == lists.end() ? empty : it->second;
}

}  // namespace cmt
