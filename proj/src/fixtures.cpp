#include "cmt/fixtures.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/random.hpp"

namespace cmt::fixtures {

namespace {

constexpr const char* kSyllables[] = {"ra",  "mi", "de",  "so",  "vir", "lo",  "ka", "tin", "mab", "zol",
                                      "pre", "cy", "to",  "kin", "neu", "ro",  "pa", "thy", "gen", "ase",
                                      "xa",  "ban", "qui", "fe",  "lux", "ter", "ol", "dri", "vo",  "sep"};

constexpr const char* kGeneralWords[] = {
    "study",    "results",  "patients", "data",     "analysis", "method",  "clinical", "model",
    "effect",   "group",    "review",   "cases",    "risk",     "report",  "outcome",  "sample",
    "factors",  "response", "levels",   "findings", "approach", "hospital", "cohort",  "evidence"};

constexpr const char* kQueryPrefixes[] = {"", "what is the", "how do", "which of the", "is there"};

std::string make_word(Rng& rng, std::set<std::string>& used)
{
    for (;;) {
        std::string w;
        const std::size_t parts = 2 + rng.below(3);
        for (std::size_t i = 0; i < parts; ++i) {
            w += kSyllables[rng.below(std::size(kSyllables))];
        }
        if (used.insert(w).second) {
            return w;
        }
    }
}

std::string make_id(Rng& rng, std::set<std::string>& used)
{
    for (;;) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "cord-%06llx", static_cast<unsigned long long>(rng.below(0x1000000)));
        if (used.insert(buf).second) {
            return buf;
        }
    }
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v)
{
    return v[rng.below(v.size())];
}

std::string join(const std::vector<std::string>& words)
{
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

}  // namespace

TopicFixture topic_fixture(const TopicFixtureOptions& options)
{
    if (options.topics < 2 || options.docs_per_topic == 0 || options.words_per_topic < 3) {
        throw ConfigError("topic fixture needs >= 2 topics, >= 1 doc per topic and >= 3 words per topic");
    }
    Rng rng(options.seed);
    TopicFixture fx;
    std::set<std::string> used(std::begin(kGeneralWords), std::end(kGeneralWords));
    std::vector<std::string> general(std::begin(kGeneralWords), std::end(kGeneralWords));
    for (std::size_t t = 0; t < options.topics; ++t) {
        std::vector<std::string> words;
        for (std::size_t i = 0; i < options.words_per_topic; ++i) {
            words.push_back(make_word(rng, used));
        }
        fx.topic_words.push_back(std::move(words));
    }

    std::set<std::string> ids;
    std::vector<std::vector<std::size_t>> topic_docs(options.topics);
    for (std::size_t t = 0; t < options.topics; ++t) {
        for (std::size_t i = 0; i < options.docs_per_topic; ++i) {
            const auto& own = fx.topic_words[t];
            std::vector<std::string> title, body;
            for (int k = 0; k < 3; ++k) {
                title.push_back(pick(rng, own));
            }
            for (int k = 0; k < 6; ++k) {
                body.push_back(pick(rng, own));
            }
            for (int k = 0; k < 4; ++k) {
                body.push_back(pick(rng, general));
            }
            if (rng.bernoulli(options.noise)) {
                std::size_t other = (t + 1 + rng.below(options.topics - 1)) % options.topics;
                body.push_back(pick(rng, fx.topic_words[other]));
            }
            for (std::size_t k = body.size(); k > 1; --k) {
                std::swap(body[k - 1], body[rng.below(k)]);
            }
            corpus::Document doc;
            doc.doc_id = make_id(rng, ids);
            doc.title = join(title);
            doc.abstract = join(body);
            // Roughly four in five documents predate 2020; some carry no date.
            if (!rng.bernoulli(0.05)) {
                int year = rng.bernoulli(0.8) ? 2015 + static_cast<int>(rng.below(5)) : 2020;
                unsigned month = 1 + static_cast<unsigned>(rng.below(12));
                unsigned day = 1 + static_cast<unsigned>(rng.below(28));
                doc.publish_date = corpus::Date{std::chrono::year{year}, std::chrono::month{month},
                                                std::chrono::day{day}};
            }
            topic_docs[t].push_back(fx.docs.size());
            fx.docs.push_back(std::move(doc));
            fx.doc_topics.push_back("topic-" + std::to_string(t));
        }
    }
    // Interleave so corpus order says nothing about topics.
    std::vector<std::size_t> order(fx.docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    for (std::size_t k = order.size(); k > 1; --k) {
        std::swap(order[k - 1], order[rng.below(k)]);
    }
    std::vector<corpus::Document> shuffled;
    std::vector<std::string> shuffled_topics;
    for (auto i : order) {
        shuffled.push_back(fx.docs[i]);
        shuffled_topics.push_back(fx.doc_topics[i]);
    }
    fx.docs = std::move(shuffled);
    fx.doc_topics = std::move(shuffled_topics);

    auto add_query = [&](std::size_t topic) {
        const auto& own = fx.topic_words[topic];
        std::vector<std::string> picked;
        while (picked.size() < 3) {
            const auto& w = pick(rng, own);
            if (std::find(picked.begin(), picked.end(), w) == picked.end()) {
                picked.push_back(w);
            }
        }
        std::string prefix = kQueryPrefixes[rng.below(std::size(kQueryPrefixes))];
        corpus::Query q;
        q.query_id = static_cast<corpus::QueryId>(fx.queries.size() + 1);
        q.raw_text = prefix.empty() ? join(picked) : prefix + " " + join(picked);
        q.terms = corpus::preprocess_query(q.raw_text, corpus::default_stopwords()).terms;
        for (std::size_t d = 0; d < fx.docs.size(); ++d) {
            if (fx.doc_topics[d] != "topic-" + std::to_string(topic)) {
                continue;
            }
            auto title_terms = corpus::analyze(fx.docs[d].title);
            bool in_title = std::any_of(picked.begin(), picked.end(), [&](const std::string& w) {
                return std::find(title_terms.begin(), title_terms.end(), w) != title_terms.end();
            });
            fx.qrels.judgments[q.query_id][fx.docs[d].doc_id] = in_title ? 2 : 1;
        }
        fx.queries.push_back(std::move(q));
        fx.query_topics.push_back(topic);
    };
    for (std::size_t r = 0; r < options.queries_per_topic; ++r) {
        for (std::size_t t = 0; t < options.topics; ++t) {
            add_query(t);
        }
    }
    fx.last_old_query = static_cast<corpus::QueryId>(fx.queries.size());
    for (std::size_t i = 0; i < options.new_queries; ++i) {
        add_query(i % options.topics);
    }

    fx.full_qrels = fx.qrels;

    // The earlier round judged a third of each old query's relevant docs plus
    // two off-topic docs; those judgments are removed from the current qrels.
    for (auto& [qid, judged] : fx.qrels.judgments) {
        if (qid > fx.last_old_query) {
            continue;
        }
        std::size_t n = 0;
        for (auto it = judged.begin(); it != judged.end();) {
            if (n++ % 3 == 0) {
                fx.prior_qrels.judgments[qid][it->first] = it->second;
                it = judged.erase(it);
            } else {
                ++it;
            }
        }
        for (int k = 0; k < 2; ++k) {
            const auto& d = pick(rng, fx.docs);
            if (!fx.full_qrels.judged(qid, d.doc_id) && !fx.prior_qrels.judged(qid, d.doc_id)) {
                fx.prior_qrels.judgments[qid][d.doc_id] = 0;
                fx.full_qrels.judgments[qid][d.doc_id] = 0;
            }
        }
    }
    return fx;
}

void write_topic_fixture(const TopicFixture& fixture, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    corpus::write_corpus(dir / "corpus.jsonl", fixture.docs);
    corpus::write_queries(dir / "queries.tsv", fixture.queries);
    eval::write_qrels(dir / "qrels.txt", fixture.qrels);
    eval::write_qrels(dir / "prior_qrels.txt", fixture.prior_qrels);
    std::set<corpus::QueryId> ids;
    for (const auto& q : fixture.queries) {
        ids.insert(q.query_id);
    }
    eval::QuerySplit::by_threshold(ids, fixture.last_old_query).save(dir / "split.txt");
}

const std::vector<std::string>& general_texts()
{
    static const std::vector<std::string> texts{
        "the weather was warm and the children played in the park all afternoon",
        "she bought fresh bread and milk at the market near her house",
        "our team won the game after a long and difficult season",
        "he reads the news every morning before going to work",
        "the train to the city leaves at seven in the evening",
        "they planted flowers in the garden behind the old school",
        "we watched a movie about a family that moved to a new town",
        "the restaurant serves good food at a fair price",
        "my brother likes to travel and take pictures of the mountains",
        "the library opens early on weekends and closes late at night",
        "people gathered in the square to listen to the music",
        "the company hired new workers to build the bridge",
        "students asked questions about the history of the country",
        "the doctor told the patient to rest and drink water",
        "a small dog followed the boy home from the beach",
        "the city council voted to repair the roads this summer",
        "her sister plays the piano and sings in a choir",
        "farmers sell apples and vegetables at the weekly market",
        "the museum shows paintings from many different countries",
        "we cooked dinner together and talked about our plans",
        "the store was closed because of the holiday",
        "he walked to the station in the rain without an umbrella",
        "the teacher gave the class a short test on friday",
        "many families visit the lake during the warm months",
    };
    return texts;
}

const std::vector<std::string>& terminology_texts()
{
    static const std::vector<std::string> texts{
        "remdesivir inhibits sars-cov-2 rna-dependent rna polymerase in vitro",
        "hydroxychloroquine prophylaxis and qt prolongation in covid-19 cohorts",
        "ace2 receptor binding affinity of the spike glycoprotein",
        "cytokine storm and interleukin-6 blockade with tocilizumab",
        "nasopharyngeal swab rt-pcr sensitivity for coronavirus detection",
        "seroprevalence of igg antibodies against nucleocapsid antigen",
        "lopinavir ritonavir combination therapy for mers-cov infection",
        "thromboembolic complications and d-dimer elevation in icu patients",
        "zoonotic spillover of betacoronaviruses from rhinolophus bats",
        "transmembrane protease serine 2 priming facilitates viral entry",
        "neutralizing monoclonal antibodies targeting the receptor-binding domain",
        "pneumonia with ground-glass opacities on chest tomography",
    };
    return texts;
}

LabelledTriples selection_triples(const TopicFixture& fixture, std::size_t clean, std::size_t flipped,
                                  std::uint64_t seed)
{
    Rng rng(seed);
    const std::size_t topics = fixture.topic_words.size();
    std::vector<std::vector<std::size_t>> by_topic(topics);
    for (std::size_t d = 0; d < fixture.docs.size(); ++d) {
        by_topic[std::stoul(fixture.doc_topics[d].substr(6))].push_back(d);
    }
    LabelledTriples out;
    auto make = [&](bool is_clean) {
        const std::size_t t = rng.below(topics);
        const std::size_t other = (t + 1 + rng.below(topics - 1)) % topics;
        std::vector<std::string> words;
        while (words.size() < 2) {
            const auto& w = pick(rng, fixture.topic_words[t]);
            if (std::find(words.begin(), words.end(), w) == words.end()) {
                words.push_back(w);
            }
        }
        const auto& pos = fixture.docs[pick(rng, by_topic[t])].doc_id;
        const auto& neg = fixture.docs[pick(rng, by_topic[other])].doc_id;
        weaksup::WeakTriple triple{join(words), is_clean ? pos : neg, is_clean ? neg : pos,
                                   std::string(weaksup::kSourceExternal)};
        out.triples.push_back(std::move(triple));
        out.clean.push_back(is_clean);
    };
    for (std::size_t i = 0; i < clean; ++i) {
        make(true);
    }
    for (std::size_t i = 0; i < flipped; ++i) {
        make(false);
    }
    return out;
}

}  // namespace cmt::fixtures
