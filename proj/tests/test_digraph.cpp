#include "causalflow/digraph.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace causalflow;

namespace {

DiGraph random_digraph(std::mt19937_64& rng, int max_nodes, double p = 0.3) {
  std::uniform_int_distribution<int> nd(2, max_nodes);
  std::uniform_real_distribution<double> ed(0.0, 1.0);
  int n = nd(rng);
  std::vector<std::string> names;
  for (int k = 0; k < n; ++k) names.push_back("n" + std::to_string(k));
  DiGraph g(names, true);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (a != b && ed(rng) < p) g.add_edge(names[static_cast<std::size_t>(a)],
                                            names[static_cast<std::size_t>(b)]);
  return g;
}

bool graphs_equal(const DiGraph& a, const DiGraph& b) {
  auto na = a.nodes(), nb = b.nodes();
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  return na == nb && a.edges() == b.edges();
}

}  // namespace

TEST_CASE("has_path on chains") {
  DiGraph g({"a", "b", "c"});
  g.add_edge("a", "b");
  g.add_edge("b", "c");
  REQUIRE(has_path(g, "a", "c"));
  REQUIRE_FALSE(has_path(g, "c", "a"));
  REQUIRE_FALSE(has_path(g, "a", "a"));
  REQUIRE_THROWS_AS(has_path(g, "a", "zz"), GraphError);
}

TEST_CASE("has_path matches a transitive-closure oracle on random dags") {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 20; ++t) {
    DiGraph g = random_digraph(rng, 7);
    const int n = g.size();
    // Floyd-Warshall closure
    std::vector<std::vector<bool>> cl(static_cast<std::size_t>(n),
                                      std::vector<bool>(static_cast<std::size_t>(n), false));
    for (const auto& [a, b] : g.edges())
      cl[static_cast<std::size_t>(g.index(a))][static_cast<std::size_t>(g.index(b))] = true;
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (cl[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] &&
              cl[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)])
            cl[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
    for (const auto& a : g.nodes())
      for (const auto& b : g.nodes())
        REQUIRE(has_path(g, a, b) ==
                cl[static_cast<std::size_t>(g.index(a))][static_cast<std::size_t>(g.index(b))]);
  }
}

TEST_CASE("compatibility of signalling with causal structures") {
  SignallingStructure sig;
  sig.input_side = {"A"};
  sig.output_side = {"B", "C"};
  sig.add_edge({"A"}, {"B"});

  DiGraph caus({"a", "b", "c"});
  caus.add_edge("a", "b");
  NodeEmbedding emb;
  emb.map = {{"A", "a"}, {"B", "b"}, {"C", "c"}};
  REQUIRE(compatible(sig, caus, emb));

  DiGraph nopath({"a", "b", "c"});
  REQUIRE_FALSE(compatible(sig, nopath, emb));

  // joint edge: one ordered target suffices
  SignallingStructure joint;
  joint.input_side = {"A"};
  joint.output_side = {"B", "C"};
  joint.add_edge({"A"}, {"B", "C"});
  DiGraph only_c({"a", "b", "c"});
  only_c.add_edge("a", "c");
  REQUIRE(compatible(joint, only_c, emb));
}

TEST_CASE("compatibility follows paths through subset nodes") {
  SignallingStructure sig;
  sig.input_side = {"A", "B"};
  sig.output_side = {"X", "Y"};
  sig.add_edge({"A"}, {"X"});
  // in a network X can feed B; model the chain via a second edge
  sig.input_side.push_back("X");
  sig.add_edge({"X"}, {"Y"});
  DiGraph caus({"a", "b", "x", "y"});
  caus.add_edge("a", "x");
  caus.add_edge("x", "y");
  NodeEmbedding emb;
  emb.map = {{"A", "a"}, {"B", "b"}, {"X", "x"}, {"Y", "y"}};
  REQUIRE(compatible(sig, caus, emb));
  // removing the x->y leg breaks the path requirement A -> ... -> Y
  DiGraph broken({"a", "b", "x", "y"});
  broken.add_edge("a", "x");
  REQUIRE_FALSE(compatible(sig, broken, emb));
}

TEST_CASE("graph fine-graining on the worked cyclic example") {
  // cyclic: D -> A, A <-> B; acyclic: D -> A1 -> B -> A2
  DiGraph g({"A", "B", "D"});
  g.add_edge("D", "A");
  g.add_edge("A", "B");
  g.add_edge("B", "A");
  DiGraph fine({"A1", "A2", "B", "D"});
  fine.add_edge("D", "A1");
  fine.add_edge("A1", "B");
  fine.add_edge("B", "A2");
  GraphFineGraining f;
  f.map = {{"A", {"A1", "A2"}}, {"B", {"B"}}, {"D", {"D"}}};
  REQUIRE(is_graph_fine_graining(fine, g, f));

  DiGraph broken({"A1", "A2", "B", "D"});
  broken.add_edge("D", "A1");
  broken.add_edge("A1", "B");
  REQUIRE_FALSE(is_graph_fine_graining(broken, g, f));
}

TEST_CASE("identity fine-graining is always a fine-graining") {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 10; ++t) {
    DiGraph g = random_digraph(rng, 6);
    GraphFineGraining f;
    for (const auto& n : g.nodes()) f.map[n] = {n};
    REQUIRE(is_graph_fine_graining(g, g, f));
  }
}

TEST_CASE("split_loop_nodes on a two-cycle") {
  DiGraph g({"A", "B"});
  g.add_edge("A", "B");
  g.add_edge("B", "A");
  auto [dag, f] = split_loop_nodes(g);
  REQUIRE(dag.is_acyclic());
  REQUIRE(dag.size() == 4);
  REQUIRE(graphs_equal(recombine(dag, f), g));
  REQUIRE(is_graph_fine_graining(dag, g, f));
}

TEST_CASE("split_loop_nodes leaves dags unchanged") {
  DiGraph g({"a", "b", "c"});
  g.add_edge("a", "b");
  g.add_edge("b", "c");
  auto [dag, f] = split_loop_nodes(g);
  REQUIRE(graphs_equal(dag, g));
  for (const auto& [n, fs] : f.map) {
    REQUIRE(fs.size() == 1);
    REQUIRE(fs[0] == n);
  }
}

TEST_CASE("split_loop_nodes is acyclic and recombines on random digraphs") {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 200; ++t) {
    DiGraph g = random_digraph(rng, 8, 0.35);
    auto [dag, f] = split_loop_nodes(g);
    REQUIRE(dag.is_acyclic());
    REQUIRE(graphs_equal(recombine(dag, f), g));
    // every edge of g has a counterpart between the copies
    for (const auto& [a, b] : g.edges()) {
      bool found = false;
      for (const auto& fa : f.at(a))
        for (const auto& fb : f.at(b))
          if (dag.has_edge(fa, fb)) found = true;
      REQUIRE(found);
    }
  }
}

TEST_CASE("topological_embed is monotone along edges with deterministic ties") {
  DiGraph chain({"x", "y", "z"});
  chain.add_edge("x", "y");
  chain.add_edge("y", "z");
  auto order = topological_embed(chain);
  REQUIRE(order.at("x") == 0);
  REQUIRE(order.at("y") == 1);
  REQUIRE(order.at("z") == 2);

  DiGraph diamond({"a", "b", "c", "d"});
  diamond.add_edge("a", "b");
  diamond.add_edge("a", "c");
  diamond.add_edge("b", "d");
  diamond.add_edge("c", "d");
  auto o2 = topological_embed(diamond);
  for (const auto& [u, v] : diamond.edges()) REQUIRE(o2.at(u) < o2.at(v));
  // lexicographic tie-break puts b before c
  REQUIRE(o2.at("b") < o2.at("c"));

  DiGraph empty;
  REQUIRE(topological_embed(empty).empty());

  DiGraph cyc({"a", "b"});
  cyc.add_edge("a", "b");
  cyc.add_edge("b", "a");
  REQUIRE_THROWS_AS(topological_embed(cyc), GraphError);
}

TEST_CASE("topological embeddings of random digraphs respect all edges") {
  std::mt19937_64 rng(54);
  for (int t = 0; t < 50; ++t) {
    DiGraph g = random_digraph(rng, 8, 0.3);
    auto [dag, f] = split_loop_nodes(g);
    auto order = topological_embed(dag);
    for (const auto& [u, v] : dag.edges()) REQUIRE(order.at(u) < order.at(v));
  }
}

TEST_CASE("dot round trip") {
  DiGraph g({"a", "b"});
  g.add_edge("a", "b");
  auto text = to_dot(g);
  DiGraph back = digraph_from_dot(text);
  REQUIRE(graphs_equal(g, back));
}
