#include <fstream>

#include <gtest/gtest.h>

#include "cmt/corpus.hpp"
#include "cmt/error.hpp"
#include "test_util.hpp"

using namespace cmt;
using namespace cmt::corpus;
using cmt::testing::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream(p, std::ios::binary) << text;
}

Date ymd(int y, unsigned m, unsigned d) { return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}; }

}  // namespace

TEST(LoadCorpus, ReadsRecordsInFileOrder)
{
    TempDir dir;
    write(dir / "c.jsonl", R"({"doc_id":"b","title":"T1","abstract":"A1"}
{"doc_id":"a","title":"T2","abstract":"A2","date":"2020-03-01"}
{"doc_id":"c","title":"T3","abstract":"A3","date":null}
)");
    auto docs = load_corpus(dir / "c.jsonl");
    ASSERT_EQ(docs.size(), 3u);
    EXPECT_EQ(docs[0].doc_id, "b");
    EXPECT_EQ(docs[1].doc_id, "a");
    EXPECT_EQ(docs[2].doc_id, "c");
    ASSERT_TRUE(docs[1].publish_date);
    EXPECT_EQ(*docs[1].publish_date, ymd(2020, 3, 1));
    EXPECT_FALSE(docs[2].publish_date);
}

TEST(LoadCorpus, DuplicateIdCitesTheLaterLine)
{
    std::string content;
    for (int i = 1; i <= 5; ++i) {
        std::string id = (i == 1 || i == 5) ? "a1" : "x" + std::to_string(i);
        content += R"({"doc_id":")" + id + R"(","title":"t","abstract":"a"})" + "\n";
    }
    try {
        parse_corpus(content);
        FAIL() << "expected DuplicateError";
    } catch (const DuplicateError& e) {
        EXPECT_EQ(e.line(), 5u);
        EXPECT_NE(std::string(e.what()).find("a1"), std::string::npos);
    }
}

TEST(LoadCorpus, MalformedLineNamesLineNumber)
{
    const std::string content = "{\"doc_id\":\"a\",\"title\":\"t\",\"abstract\":\"x\"}\n{not json\n";
    try {
        parse_corpus(content);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse_corpus(R"({"doc_id":"a","title":"t"})"), ParseError);
    EXPECT_THROW(parse_corpus(R"({"doc_id":"","title":"t","abstract":"a"})"), ParseError);
    EXPECT_THROW(parse_corpus(R"({"doc_id":"a","title":"t","abstract":"a","date":"2020-13-01"})"), ParseError);
}

TEST(LoadCorpus, MissingFileIsDependencyError)
{
    EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), DependencyError);
}

TEST(LoadCorpus, WriteThenReadRoundTrips)
{
    TempDir dir;
    std::vector<Document> docs{Document{"d1", "Title \"quoted\"", "Abstract\twith tab", ymd(2019, 12, 31)},
                               Document{"d2", "Ünïcode", "", std::nullopt}};
    write_corpus(dir / "c.jsonl", docs);
    auto back = load_corpus(dir / "c.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].title, docs[0].title);
    EXPECT_EQ(back[0].abstract, docs[0].abstract);
    EXPECT_EQ(back[0].publish_date, docs[0].publish_date);
    EXPECT_EQ(back[1].title, docs[1].title);
    EXPECT_FALSE(back[1].publish_date);
}

TEST(Document, TextJoinsTitleAndAbstractWithOneSpace)
{
    auto docs = parse_corpus(R"({"doc_id":"x","title":"A","abstract":"B"})");
    EXPECT_EQ(docs.at(0).text(), "A B");
}

TEST(PreprocessQuery, RemovesStopwordsAndKeepsOrder)
{
    StopwordSet stop{"what", "is", "the", "of"};
    auto q = preprocess_query("what is the origin of COVID-19", stop);
    EXPECT_EQ(q.terms, (std::vector<std::string>{"origin", "covid", "19"}));
    EXPECT_FALSE(q.all_stopwords);
}

TEST(PreprocessQuery, EmptyInputGivesNoTermsWithoutWarning)
{
    auto q = preprocess_query("", default_stopwords());
    EXPECT_TRUE(q.terms.empty());
    EXPECT_FALSE(q.all_stopwords);
}

TEST(PreprocessQuery, AllStopwordsSetsWarningFlag)
{
    auto q = preprocess_query("the of is", default_stopwords());
    EXPECT_TRUE(q.terms.empty());
    EXPECT_TRUE(q.all_stopwords);
}

TEST(PreprocessQuery, IsIdempotent)
{
    const auto& stop = default_stopwords();
    for (std::string raw : {"What is the ORIGIN of COVID-19?", "ace2 receptor, binding!", "  a  b  c ",
                            "coronavirus response to weather changes"}) {
        auto once = preprocess_query(raw, stop).terms;
        std::string joined;
        for (const auto& t : once) {
            joined += t + " ";
        }
        EXPECT_EQ(preprocess_query(joined, stop).terms, once) << raw;
    }
}

TEST(PreprocessQuery, OutputNeverContainsAStopword)
{
    const auto& stop = default_stopwords();
    auto q = preprocess_query("Which of these are the best treatments for those who are sick", stop);
    for (const auto& t : q.terms) {
        EXPECT_FALSE(stop.contains(t)) << t;
    }
}

TEST(Stopwords, DefaultListHasAboutThreeHundredWords)
{
    const auto& stop = default_stopwords();
    EXPECT_GE(stop.size(), 250u);
    EXPECT_LE(stop.size(), 350u);
    for (const char* w : {"what", "is", "the", "of"}) {
        EXPECT_TRUE(stop.contains(w)) << w;
    }
}

TEST(Stopwords, FileOverridesBuiltInList)
{
    TempDir dir;
    write(dir / "stop.txt", "covid\nOrigin\n");
    auto stop = load_stopwords(dir / "stop.txt");
    EXPECT_EQ(stop.size(), 2u);
    EXPECT_EQ(preprocess_query("what is the origin of covid", stop).terms,
              (std::vector<std::string>{"what", "is", "the", "of"}));
}

TEST(Analyze, LowercasesAndSplitsOnNonAlphanumeric)
{
    EXPECT_EQ(analyze("SARS-CoV-2: ACE2/TMPRSS2"),
              (std::vector<std::string>{"sars", "cov", "2", "ace2", "tmprss2"}));
    EXPECT_TRUE(analyze(" ,.;").empty());
}

TEST(LoadQueries, ParsesTabSeparatedLines)
{
    TempDir dir;
    write(dir / "q.tsv", "1\twhat is the origin of COVID-19\n35\tvaccine trials\n");
    auto qs = load_queries(dir / "q.tsv", default_stopwords());
    ASSERT_EQ(qs.size(), 2u);
    EXPECT_EQ(qs[0].query_id, 1);
    EXPECT_EQ(qs[0].terms, (std::vector<std::string>{"origin", "covid", "19"}));
    EXPECT_EQ(qs[1].query_id, 35);
}

TEST(LoadQueries, RejectsBadIdsAndDuplicates)
{
    TempDir dir;
    write(dir / "a.tsv", "0\tzero\n");
    EXPECT_THROW(load_queries(dir / "a.tsv", default_stopwords()), ParseError);
    write(dir / "b.tsv", "x1\ttext\n");
    EXPECT_THROW(load_queries(dir / "b.tsv", default_stopwords()), ParseError);
    write(dir / "c.tsv", "3\ta\n3\tb\n");
    EXPECT_THROW(load_queries(dir / "c.tsv", default_stopwords()), DuplicateError);
    write(dir / "d.tsv", "3 no tab\n");
    EXPECT_THROW(load_queries(dir / "d.tsv", default_stopwords()), ParseError);
}

TEST(DateFilter, AllDocsAfterCutoffExcludeNothing)
{
    std::vector<Document> docs;
    for (unsigned m = 1; m <= 5; ++m) {
        docs.push_back(Document{"d" + std::to_string(m), "t", "a", ymd(2020, m, 1)});
    }
    auto r = date_filter(docs, ymd(2020, 1, 1));
    EXPECT_EQ(r.kept.size(), 5u);
    EXPECT_DOUBLE_EQ(r.excluded_fraction, 0.0);
}

TEST(DateFilter, EightOfTenPreCutoffExcludesEightyPercent)
{
    std::vector<Document> docs;
    for (int i = 0; i < 10; ++i) {
        docs.push_back(Document{"d" + std::to_string(i), "t", "a", ymd(i < 8 ? 2018 : 2020, 6, 1)});
    }
    auto r = date_filter(docs, ymd(2020, 1, 1));
    EXPECT_EQ(r.kept.size(), 2u);
    EXPECT_EQ(r.excluded.size(), 8u);
    EXPECT_DOUBLE_EQ(r.excluded_fraction, 0.8);
}

TEST(DateFilter, MissingDateIsKeptAndResultPartitionsInput)
{
    std::vector<Document> docs{Document{"a", "t", "x", std::nullopt}, Document{"b", "t", "x", ymd(2019, 1, 1)},
                               Document{"c", "t", "x", ymd(2020, 1, 1)}};
    auto r = date_filter(docs, ymd(2020, 1, 1));
    ASSERT_EQ(r.kept.size(), 2u);
    EXPECT_EQ(r.kept[0].doc_id, "a");
    EXPECT_EQ(r.kept[1].doc_id, "c");
    ASSERT_EQ(r.excluded.size(), 1u);
    EXPECT_EQ(r.excluded[0].doc_id, "b");
    EXPECT_EQ(r.excluded_fraction, 1.0 / 3.0);
}

TEST(DateFilter, EmptyInput)
{
    auto r = date_filter({}, ymd(2020, 1, 1));
    EXPECT_TRUE(r.kept.empty());
    EXPECT_EQ(r.excluded_fraction, 0.0);
}

TEST(Dates, ParseAndFormat)
{
    EXPECT_EQ(format_date(*parse_date("2020-02-29")), "2020-02-29");
    EXPECT_FALSE(parse_date("2019-02-29"));
    EXPECT_FALSE(parse_date("2020-1-01"));
    EXPECT_FALSE(parse_date("20200101"));
}
