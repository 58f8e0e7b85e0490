#include <gtest/gtest.h>

#include <random>
#include <set>

#include "draftwise/errors.hpp"
#include "draftwise/mock_backend.hpp"
#include "draftwise/refine_loop.hpp"
#include "support.hpp"

using namespace draftwise;
using testing_support::feedback_json;
using testing_support::oracle_script;
using testing_support::PipelineRig;
using testing_support::replay_script;

namespace {

const std::string kReference = "we loved the crispy tacos and the friendly owner at this tiny place";

Strategy strategy(StrategyVariant v, int T, int n = 3) {
  Strategy s;
  s.variant = v;
  s.T = T;
  s.n = n;
  return s;
}

std::size_t count(const RunTrace& trace, Role role) {
  auto c = trace.call_counts();
  auto it = c.find(role);
  return it == c.end() ? 0 : it->second;
}

ReplayEntry entry(std::string text, int pt = 10, int ct = 5) { return {std::move(text), pt, ct}; }

}  // namespace

TEST(RefineParsing, StripsReviewPrefix) {
  EXPECT_EQ(strip_review_prefix("Review text: They have a full bar, which is great."),
            "They have a full bar, which is great.");
  EXPECT_EQ(strip_review_prefix("  review TEXT:\n  Fine.  "), "Fine.");
  EXPECT_EQ(strip_review_prefix("No prefix here."), "No prefix here.");
  EXPECT_EQ(strip_review_prefix("Review text:"), "");
}

TEST(RefineParsing, ChoiceAnswers) {
  EXPECT_EQ(parse_choice(R"({"answer": "B"})", 2), 1u);
  EXPECT_EQ(parse_choice(R"({"answer": A})", 2), 0u);
  EXPECT_EQ(parse_choice("Reasoning first.\n\"answer\": \"c\"", 3), 2u);
  EXPECT_EQ(parse_choice("```json\n{\"answer\": \"A\"}\n```", 2), 0u);
  EXPECT_FALSE(parse_choice(R"({"answer": "C"})", 2));
  EXPECT_FALSE(parse_choice("I like the second one.", 2));
  EXPECT_FALSE(parse_choice("", 4));
}

TEST(RefineParsing, FeedbackKeysAndSentinel) {
  auto r = parse_feedback(feedback_json("Warmer tone.", "No further improvement needed"));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->tone_consistency(), "Warmer tone.");
  EXPECT_EQ(r->topic_relevance(), "Mention the patio.");
  EXPECT_FALSE(r->no_further_improvement[0]);
  EXPECT_TRUE(r->no_further_improvement[1]);
  EXPECT_FALSE(r->all_done());

  // Key spelling varies between models.
  auto loose = parse_feedback(
      R"(Here you go: {"tone_consistency": "a", "vocabulary match": "b", "SentenceStructure": "c", "Topic Relevance": "d"})");
  ASSERT_TRUE(loose);
  EXPECT_EQ(loose->sentence_structure(), "c");

  EXPECT_FALSE(parse_feedback(R"({"Tone Consistency": "a", "Vocabulary Match": "b"})"));
  EXPECT_FALSE(parse_feedback("not json"));

  const std::string s = "No further improvement needed";
  auto done = parse_feedback(feedback_json(s, s, s, s));
  ASSERT_TRUE(done);
  EXPECT_TRUE(done->all_done());
}

TEST(RefineParsing, TopicsVerbatimAndOrdered) {
  auto style = parse_style(R"({"Tone": "casual", "Vocabulary style": "plain", "Sentence structure": "short"})");
  ASSERT_TRUE(style);
  EXPECT_EQ((*style)[0], "casual");
  EXPECT_EQ((*style)[2], "short");
  auto aspects = parse_aspects(
      R"({"aspects": [{"aspect": "food", "description": "tacos are crispy"}, {"aspect": "staff", "description": "friendly"}]})");
  ASSERT_TRUE(aspects);
  ASSERT_EQ(aspects->size(), 2u);
  EXPECT_EQ((*aspects)[0], (Aspect{"food", "tacos are crispy"}));
  EXPECT_EQ((*aspects)[1], (Aspect{"staff", "friendly"}));
  EXPECT_FALSE(parse_aspects(R"({"aspects": []})"));
}

TEST(RefineSession, InitialDraftDropsPrefix) {
  PipelineRig rig(replay_script({entry("Review text: They have a full bar, which is great.")}),
                  replay_script({}));
  std::vector<ChatExchange> sink;
  EXPECT_EQ(rig.session().generate_initial(sink), "They have a full bar, which is great.");
  ASSERT_EQ(sink.size(), 1u);
  EXPECT_EQ(sink[0].purpose, CallPurpose::initial_draft);
  EXPECT_EQ(sink[0].usage.prompt_tokens, 10);
}

TEST(RefineSession, EmptyNeighborPartitionStillRenders) {
  PipelineRig rig(replay_script({entry("Fine.")}), replay_script({}));
  rig.profile.neighbor_entries.clear();
  std::vector<ChatExchange> sink;
  EXPECT_EQ(rig.session().generate_initial(sink), "Fine.");
  EXPECT_NE(sink[0].request_text.find("Cozy spot with tasty tacos."), std::string::npos);
  EXPECT_EQ(sink[0].request_text.find("Friendly staff"), std::string::npos);
}

TEST(RefineSession, CritiqueRetriesThenDegrades) {
  PipelineRig rig(replay_script({}), replay_script({entry("garbage one"), entry("garbage two"),
                                                    entry("garbage three")}));
  Strategy s;
  s.parse_retries = 2;
  std::vector<ChatExchange> sink;
  auto report = rig.session(s).critique("draft", 0, nullptr, sink);
  EXPECT_EQ(sink.size(), 3u);
  EXPECT_TRUE(report.degraded);
  EXPECT_EQ(report.raw_text, "garbage three");
  for (const auto& c : report.criteria) EXPECT_EQ(c, "garbage three");
  EXPECT_EQ(report.render(), "garbage three");
}

TEST(RefineSession, CritiqueRecoversOnRetry) {
  PipelineRig rig(replay_script({}), replay_script({entry("garbage"), entry(feedback_json("Warmer."))}));
  std::vector<ChatExchange> sink;
  auto report = rig.session().critique("draft", 0, nullptr, sink);
  EXPECT_EQ(sink.size(), 2u);
  EXPECT_FALSE(report.degraded);
  EXPECT_EQ(report.tone_consistency(), "Warmer.");
}

TEST(RefineSession, CriticTransportFailureIsCriticUnavailable) {
  PipelineRig rig(replay_script({}), replay_script({{"", 0, 0, 500, false, true}}));
  std::vector<ChatExchange> sink;
  EXPECT_THROW(rig.session().critique("draft", 0, nullptr, sink), CriticUnavailable);
}

TEST(RefineSession, KnockoutKeepsPreviousWinnerOnA) {
  PipelineRig rig(replay_script({}), replay_script({entry(R"({"answer": "A"})"), entry(R"({"answer": "B"})")}));
  auto session = rig.session();
  std::vector<ChatExchange> sink;
  auto [w1, d1] = session.knockout_select("old draft", "new draft", 4, sink);
  EXPECT_EQ(w1, "old draft");
  EXPECT_FALSE(d1.winner_was_new);
  EXPECT_EQ(d1.answer, 'A');
  EXPECT_EQ(d1.new_draft_slot, 'B');
  auto [w2, d2] = session.knockout_select("old draft", "new draft", 5, sink);
  EXPECT_EQ(w2, "new draft");
  EXPECT_TRUE(d2.winner_was_new);

  // Previous winner in slot A, the new draft in slot B.
  auto a = sink[0].request_text.find("old draft"), b = sink[0].request_text.find("new draft");
  ASSERT_NE(a, std::string::npos);
  ASSERT_NE(b, std::string::npos);
  EXPECT_LT(a, b);
}

TEST(RefineSession, KnockoutFallbackPrefersNewDraft) {
  PipelineRig rig(replay_script({}), replay_script({entry("??"), entry("??"), entry("??")}));
  std::vector<ChatExchange> sink;
  auto [w, d] = rig.session().knockout_select("old", "new", 1, sink);
  EXPECT_EQ(w, "new");
  EXPECT_TRUE(d.fallback);
  EXPECT_FALSE(d.answer);
  EXPECT_EQ(sink.size(), 3u);
}

TEST(RefineSession, KnockoutIdenticalDrafts) {
  PipelineRig rig(replay_script({}), replay_script({entry(R"({"answer": "A"})")}));
  std::vector<ChatExchange> sink;
  auto [w, d] = rig.session().knockout_select("same", "same", 1, sink);
  EXPECT_EQ(w, "same");
  EXPECT_FALSE(d.winner_was_new);
}

TEST(RefineSession, BestOfNLetterIndex) {
  PipelineRig rig(replay_script({}), replay_script({entry(R"({"answer": "C"})"), entry("no idea"),
                                                    entry("no idea"), entry("no idea")}));
  auto session = rig.session();
  std::vector<ChatExchange> sink;
  bool fallback = true;
  auto [chosen, idx] = session.best_of_n_select({"one", "two", "three"}, 1, &fallback, sink);
  EXPECT_EQ(idx, 2u);
  EXPECT_EQ(chosen, "three");
  EXPECT_FALSE(fallback);

  auto [first, idx2] = session.best_of_n_select({"one", "two", "three"}, 2, &fallback, sink);
  EXPECT_EQ(idx2, 0u);
  EXPECT_EQ(first, "one");
  EXPECT_TRUE(fallback);
  EXPECT_THROW(session.best_of_n_select({"only"}, 1, nullptr, sink), std::invalid_argument);
}

TEST(RefineSession, BestOfNOracleChoosesHighestOverlap) {
  // Reference of ten words; candidates carry 2, 8 and 5 of them.
  const std::string ref = "alpha bravo charlie delta echo foxtrot golf hotel india juliet";
  PipelineRig rig(replay_script({}), oracle_script(ref));
  OracleSettings o;
  o.hidden_reference = ref;
  std::vector<std::string> candidates{oracle_draft(o, 0.2), oracle_draft(o, 0.8), oracle_draft(o, 0.5)};
  std::vector<ChatExchange> sink;
  auto [chosen, idx] = rig.session().best_of_n_select(candidates, 1, nullptr, sink);
  EXPECT_EQ(idx, 1u);
  EXPECT_EQ(chosen, candidates[1]);
}

TEST(RefineSession, TopicExtractionVerbatim) {
  auto topics = replay_script(
      {entry(R"({"Tone": "casual", "Vocabulary style": "plain", "Sentence structure": "short"})"),
       entry(R"([{"aspect": "patio", "description": "nice and shaded"}, {"aspect": "pizza", "description": "served cold"}])")});
  PipelineRig rig(replay_script({}), replay_script({}), topics);
  std::vector<ChatExchange> sink;
  auto t = rig.session().extract_topics(sink);
  ASSERT_EQ(sink.size(), 2u);
  EXPECT_EQ(sink[0].purpose, CallPurpose::style_extraction);
  EXPECT_EQ(sink[1].purpose, CallPurpose::content_extraction);
  EXPECT_EQ(sink[0].role, Role::topic_extractor);
  EXPECT_EQ(t.style[1], "plain");
  ASSERT_EQ(t.content_aspects.size(), 2u);
  EXPECT_EQ(t.content_aspects[0].aspect, "patio");
  EXPECT_EQ(t.content_aspects[1].description, "served cold");
  EXPECT_EQ(t.render_aspects(), "aspect title: patio\naspect detail: nice and shaded\n\n"
                                "aspect title: pizza\naspect detail: served cold");
}

TEST(RefineSession, TopicExtractionWithoutNeighbors) {
  auto topics = replay_script({entry(R"({"Tone": "a", "Vocabulary style": "b", "Sentence structure": "c"})")});
  PipelineRig rig(replay_script({}), replay_script({}), topics);
  rig.profile.neighbor_entries.clear();
  std::vector<ChatExchange> sink;
  auto t = rig.session().extract_topics(sink);
  EXPECT_EQ(sink.size(), 1u);
  EXPECT_TRUE(t.style_available);
  EXPECT_FALSE(t.content_available);
  EXPECT_TRUE(t.content_aspects.empty());
  EXPECT_EQ(t.render_aspects(), "Not available.");
}

TEST(RefineSession, TopicExtractionDegrades) {
  PipelineRig rig(replay_script({}), replay_script({}),
                  replay_script({{"not json", 1, 1, 200, false, true}}));
  Strategy s;
  s.parse_retries = 1;
  std::vector<ChatExchange> sink;
  auto t = rig.session(s).extract_topics(sink);
  EXPECT_EQ(sink.size(), 4u);
  EXPECT_TRUE(t.style_degraded);
  EXPECT_TRUE(t.content_degraded);
  EXPECT_EQ(t.style[0], "not json");
}

TEST(RefineSession, TopicsFallBackToCritic) {
  PipelineRig rig(replay_script({}),
                  replay_script({entry(R"({"Tone": "a", "Vocabulary style": "b", "Sentence structure": "c"})"),
                                 entry(R"([{"aspect": "x", "description": "y"}])")}));
  std::vector<ChatExchange> sink;
  auto t = rig.session().extract_topics(sink);
  EXPECT_EQ(t.style[0], "a");
  EXPECT_EQ(t.content_aspects.size(), 1u);
}

TEST(Pipeline, CallCountsPerStrategy) {
  for (int T = 1; T <= 6; ++T) {
    PipelineRig v(oracle_script(kReference), oracle_script(kReference));
    auto tv = v.run(strategy(StrategyVariant::vanilla, T));
    ASSERT_EQ(tv.status, RunStatus::completed) << tv.abort_reason;
    EXPECT_EQ(count(tv, Role::generator), 1u + T);
    EXPECT_EQ(count(tv, Role::critic), T + 1u);

    PipelineRig k(oracle_script(kReference), oracle_script(kReference));
    auto tk = k.run(strategy(StrategyVariant::knockout, T));
    EXPECT_EQ(count(tk, Role::generator), 1u + T);
    EXPECT_EQ(count(tk, Role::critic), 2u * T + 1);

    for (int n = 2; n <= 4; ++n) {
      PipelineRig b(oracle_script(kReference), oracle_script(kReference));
      auto tb = b.run(strategy(StrategyVariant::knockout_best_of_n, T, n));
      ASSERT_EQ(tb.status, RunStatus::completed) << tb.abort_reason;
      EXPECT_EQ(count(tb, Role::generator), 1u + static_cast<std::size_t>(n) * T);
      EXPECT_EQ(count(tb, Role::critic), 3u * T + 1);
      EXPECT_EQ(tb.iterations.back().samples.size(), static_cast<std::size_t>(n));
    }

    PipelineRig p(oracle_script(kReference), oracle_script(kReference), oracle_script(kReference));
    auto tp = p.run(strategy(StrategyVariant::topic_extraction, T));
    ASSERT_EQ(tp.status, RunStatus::completed) << tp.abort_reason;
    EXPECT_EQ(count(tp, Role::generator), 1u + T);
    EXPECT_EQ(count(tp, Role::critic), T + 1u);
    EXPECT_EQ(count(tp, Role::topic_extractor), 2u);
    ASSERT_TRUE(tp.topics);
  }
}

TEST(Pipeline, TopicsComeBeforeTheInitialDraft) {
  PipelineRig p(oracle_script(kReference), oracle_script(kReference), oracle_script(kReference));
  auto trace = p.run(strategy(StrategyVariant::topic_extraction, 1));
  const auto& ex = trace.iterations[0].exchanges;
  ASSERT_GE(ex.size(), 4u);
  EXPECT_EQ(ex[0].purpose, CallPurpose::style_extraction);
  EXPECT_EQ(ex[1].purpose, CallPurpose::content_extraction);
  EXPECT_EQ(ex[2].purpose, CallPurpose::initial_draft);
  EXPECT_EQ(ex[3].purpose, CallPurpose::feedback);
  // The critic sees the extracted style.
  EXPECT_NE(ex[3].request_text.find("Tone: "), std::string::npos);
}

TEST(Pipeline, TraceShape) {
  for (auto v : {StrategyVariant::vanilla, StrategyVariant::knockout, StrategyVariant::knockout_best_of_n}) {
    PipelineRig rig(oracle_script(kReference), oracle_script(kReference));
    auto trace = rig.run(strategy(v, 4));
    ASSERT_EQ(trace.iterations.size(), 5u);
    const auto& first = trace.iterations[0];
    EXPECT_EQ(first.t, 0);
    EXPECT_FALSE(first.new_draft);
    EXPECT_FALSE(first.knockout);
    EXPECT_FALSE(first.best_of_n_choice);
    EXPECT_TRUE(first.samples.empty());
    for (std::size_t t = 0; t < trace.iterations.size(); ++t) {
      const auto& it = trace.iterations[t];
      EXPECT_EQ(it.t, static_cast<int>(t));
      EXPECT_TRUE(it.feedback);
      EXPECT_FALSE(it.draft.empty());
      if (t == 0) continue;
      ASSERT_TRUE(it.new_draft);
      if (v == StrategyVariant::vanilla) {
        EXPECT_EQ(it.draft, *it.new_draft);
        EXPECT_FALSE(it.knockout);
      } else {
        ASSERT_TRUE(it.knockout);
        const auto& prev = trace.iterations[t - 1].draft;
        EXPECT_EQ(it.draft, it.knockout->winner_was_new ? *it.new_draft : prev);
      }
      if (v == StrategyVariant::knockout_best_of_n) {
        ASSERT_TRUE(it.best_of_n_choice);
        EXPECT_EQ(*it.new_draft, it.samples.at(*it.best_of_n_choice));
      }
    }
    EXPECT_EQ(trace.final_draft, trace.iterations.back().draft);
  }
}

TEST(Pipeline, ReplayKnockoutKeepsWinnerAtT4) {
  // Generator drafts d0..d4; the critic answers B except at t = 4.
  std::vector<ReplayEntry> gen, critic;
  for (int t = 0; t <= 4; ++t) gen.push_back(entry("Review text: draft " + std::to_string(t)));
  critic.push_back(entry(feedback_json("f0")));
  for (int t = 1; t <= 4; ++t) {
    critic.push_back(entry(t == 4 ? R"({"answer": "A"})" : R"({"answer": "B"})"));
    critic.push_back(entry(feedback_json("f" + std::to_string(t))));
  }
  PipelineRig rig(replay_script(gen), replay_script(critic));
  auto trace = rig.run(strategy(StrategyVariant::knockout, 4));
  ASSERT_EQ(trace.status, RunStatus::completed) << trace.abort_reason;
  EXPECT_EQ(trace.iterations[3].draft, "draft 3");
  EXPECT_EQ(trace.iterations[4].new_draft, "draft 4");
  EXPECT_EQ(trace.iterations[4].draft, "draft 3");
  EXPECT_EQ(trace.iterations[4].knockout_winner_was_new(), false);
  EXPECT_EQ(trace.final_draft, "draft 3");
  // Feedback of t = 4 is about the surviving draft.
  EXPECT_EQ(trace.iterations[4].feedback->tone_consistency(), "f4");
  // The refinement at t = 4 starts from the t = 3 winner and its feedback.
  const auto& refine = trace.iterations[4].exchanges[0];
  EXPECT_EQ(refine.purpose, CallPurpose::refinement);
  EXPECT_NE(refine.request_text.find("draft 3"), std::string::npos);
  EXPECT_NE(refine.request_text.find("f3"), std::string::npos);
}

TEST(Pipeline, TokenConservation) {
  std::vector<ReplayEntry> gen, critic;
  std::int64_t gen_total = 0, critic_total = 0;
  for (int t = 0; t <= 3; ++t) {
    gen.push_back(entry("draft " + std::to_string(t), 100 + t, 7 * t + 1));
    gen_total += 100 + t + 7 * t + 1;
  }
  critic.push_back(entry(feedback_json("f"), 50, 9));
  critic_total += 59;
  for (int t = 1; t <= 3; ++t) {
    critic.push_back(entry(R"({"answer": "B"})", 40, 3));
    critic.push_back(entry(feedback_json("f"), 51, 11));
    critic_total += 43 + 62;
  }
  PipelineRig rig(replay_script(gen), replay_script(critic));
  auto trace = rig.run(strategy(StrategyVariant::knockout, 3));
  ASSERT_EQ(trace.status, RunStatus::completed) << trace.abort_reason;
  EXPECT_EQ(trace.usage_by_role.at(Role::generator).total(), gen_total);
  EXPECT_EQ(trace.usage_by_role.at(Role::critic).total(), critic_total);
  EXPECT_FALSE(trace.usage_by_role.at(Role::critic).approximate);
  EXPECT_EQ(trace.usage_by_role, trace.recompute_usage());
}

TEST(Pipeline, GeneratorFailureAbortsWithPartialExchanges) {
  // Two drafts then a permanent 500: the refinement at t = 2 fails after the
  // knockout exchanges of t = 1 are complete.
  std::vector<ReplayEntry> gen{entry("d0"), entry("d1"), {"", 0, 0, 500, false, true}};
  std::vector<ReplayEntry> critic{entry(feedback_json("f0")), entry(R"({"answer": "B"})"),
                                  entry(feedback_json("f1"))};
  PipelineRig rig(replay_script(gen), replay_script(critic));
  auto trace = rig.run(strategy(StrategyVariant::knockout, 3));
  EXPECT_EQ(trace.status, RunStatus::aborted);
  EXPECT_FALSE(trace.abort_reason.empty());
  ASSERT_EQ(trace.iterations.size(), 2u);
  EXPECT_EQ(trace.final_draft, "d1");
  EXPECT_TRUE(trace.partial_exchanges.empty());
  EXPECT_EQ(trace.usage_by_role, trace.recompute_usage());
}

TEST(Pipeline, CriticFailureKeepsBilledRefinement) {
  std::vector<ReplayEntry> gen{entry("d0", 10, 2), entry("d1", 20, 3)};
  std::vector<ReplayEntry> critic{entry(feedback_json("f0")), {"", 0, 0, 503, false, true}};
  PipelineRig rig(replay_script(gen), replay_script(critic));
  auto trace = rig.run(strategy(StrategyVariant::knockout, 2));
  EXPECT_EQ(trace.status, RunStatus::aborted);
  ASSERT_EQ(trace.iterations.size(), 1u);
  ASSERT_EQ(trace.partial_exchanges.size(), 1u);
  EXPECT_EQ(trace.partial_exchanges[0].response_text, "d1");
  EXPECT_EQ(trace.usage_by_role.at(Role::generator).total(), 35);
  EXPECT_EQ(trace.final_draft, "d0");
}

TEST(Pipeline, InvalidStrategyAborts) {
  PipelineRig rig(oracle_script(kReference), oracle_script(kReference));
  auto trace = rig.run(strategy(StrategyVariant::knockout_best_of_n, 2, 1));
  EXPECT_EQ(trace.status, RunStatus::aborted);
  EXPECT_TRUE(trace.iterations.empty());
}

TEST(Pipeline, EarlyStopIsOptIn) {
  const std::string s = "No further improvement needed";
  auto done = feedback_json(s, s, s, s);
  std::vector<ReplayEntry> gen{entry("d0"), entry("d1"), entry("d2")};
  {
    PipelineRig rig(replay_script(gen), replay_script({{done, 1, 1, 200, false, true}}));
    auto trace = rig.run(strategy(StrategyVariant::vanilla, 2));
    EXPECT_FALSE(trace.stopped_early);
    EXPECT_EQ(trace.iterations.size(), 3u);
    EXPECT_EQ(trace.final_draft, "d2");
  }
  {
    PipelineRig rig(replay_script(gen), replay_script({{done, 1, 1, 200, false, true}}));
    auto st = strategy(StrategyVariant::vanilla, 2);
    st.early_stop = true;
    auto trace = rig.run(st);
    EXPECT_TRUE(trace.stopped_early);
    EXPECT_EQ(trace.status, RunStatus::completed);
    EXPECT_EQ(trace.iterations.size(), 1u);
    EXPECT_EQ(trace.final_draft, "d0");
  }
}

TEST(Pipeline, RandomizedKnockoutOrderMapsWinner) {
  std::set<char> slots;
  for (int q = 0; q < 20; ++q) {
    PipelineRig rig(oracle_script(kReference), oracle_script(kReference), std::nullopt, "q" + std::to_string(q));
    auto st = strategy(StrategyVariant::knockout, 3);
    st.randomize_knockout_order = true;
    st.seed = 11;
    auto trace = rig.run(st);
    ASSERT_EQ(trace.status, RunStatus::completed) << trace.abort_reason;
    for (std::size_t t = 1; t < trace.iterations.size(); ++t) {
      const auto& it = trace.iterations[t];
      slots.insert(it.knockout->new_draft_slot);
      // The oracle drafts only improve, so the new draft must win from either slot.
      EXPECT_TRUE(it.knockout->winner_was_new);
      EXPECT_EQ(it.knockout->answer, it.knockout->new_draft_slot);
      EXPECT_EQ(it.draft, *it.new_draft);
    }
  }
  EXPECT_EQ(slots.size(), 2u);
}

TEST(Pipeline, OracleKnockoutNeverRegresses) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    double step = 0.05 + 0.3 * (rng() % 1000) / 1000.0;
    double jitter = 0.3 * (rng() % 1000) / 1000.0;
    auto seed = rng();
    PipelineRig rig(oracle_script(kReference, step, jitter, seed), oracle_script(kReference, step, jitter, seed),
                    std::nullopt, "trial" + std::to_string(trial));
    auto trace = rig.run(strategy(trial % 2 ? StrategyVariant::knockout : StrategyVariant::knockout_best_of_n,
                                  1 + static_cast<int>(rng() % 6), 2 + static_cast<int>(rng() % 3)));
    ASSERT_EQ(trace.status, RunStatus::completed) << trace.abort_reason;
    for (std::size_t t = 1; t < trace.iterations.size(); ++t)
      EXPECT_GE(unigram_overlap(trace.iterations[t].draft, kReference),
                unigram_overlap(trace.iterations[t - 1].draft, kReference));
  }
}

TEST(Pipeline, TraceJsonRoundTrip) {
  PipelineRig rig(oracle_script(kReference), oracle_script(kReference), oracle_script(kReference));
  for (auto v : {StrategyVariant::knockout_best_of_n, StrategyVariant::topic_extraction}) {
    auto trace = rig.run(strategy(v, 2));
    Json j = trace;
    RunTrace back = j.get<RunTrace>();
    EXPECT_EQ(Json(back).dump(), j.dump());
    EXPECT_EQ(back.iterations.size(), 3u);
    EXPECT_EQ(back.final_draft, trace.final_draft);
  }
}

TEST(Pipeline, DeterministicAcrossRuns) {
  auto once = [] {
    PipelineRig rig(oracle_script(kReference, 0.2, 0.1, 3), oracle_script(kReference, 0.2, 0.1, 3));
    return Json(rig.run(strategy(StrategyVariant::knockout_best_of_n, 3))).dump();
  };
  EXPECT_EQ(once(), once());
}

TEST(StrategyConfig, ValidationAndJson) {
  Strategy s;
  EXPECT_NO_THROW(s.validate());
  s.T = 0;
  EXPECT_THROW(s.validate(), std::exception);
  s = strategy(StrategyVariant::knockout_best_of_n, 2, 1);
  EXPECT_THROW(s.validate(), std::exception);
  s.n = 4;
  s.randomize_knockout_order = true;
  s.seed = 42;
  Json j = s;
  Strategy back = j.get<Strategy>();
  EXPECT_EQ(Json(back).dump(), j.dump());
  EXPECT_EQ(back.label(), "knockout_best_of_n");
  EXPECT_EQ(parse_strategy_variant("topic_extraction"), StrategyVariant::topic_extraction);
  EXPECT_THROW(parse_strategy_variant("beam"), std::exception);
}
