#include "causalflow/signalling.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace causalflow;

namespace {

ProductSpace wire(const std::string& l, int d = 2) { return ProductSpace::single(l, d); }

}  // namespace

TEST_CASE("identity channel signals, discard-and-reprepare does not") {
  auto id = QuantumChannel::identity(wire("I"), wire("O"));
  REQUIRE(signals(id, {"I"}, {"O"}));

  std::mt19937_64 rng(41);
  cxmat sigma = random_density(rng, 2);
  auto trash = sequential(QuantumChannel::discard(wire("I")),
                          QuantumChannel::prepare(wire("O"), sigma), {});
  REQUIRE_FALSE(signals(trash, {"I"}, {"O"}));
}

TEST_CASE("noisy bit flip O = I xor K with uniform K does not signal") {
  ProductSpace in = wire("I"), out = wire("O");
  std::vector<cxmat> ks;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i) {
      cxmat m = cxmat::Zero(2, 2);
      m(i ^ k, i) = 1.0 / std::sqrt(2.0);
      ks.push_back(m);
    }
  auto ch = QuantumChannel::from_kraus(in, out, ks);
  REQUIRE_FALSE(signals(ch, {"I"}, {"O"}, 1e-9));
}

TEST_CASE("joint signalling without signalling to the individual wires") {
  // O1 = I1 xor K, O2 = I2 xor K with a shared uniform bit K: each output is
  // uniform on its own, yet O1 xor O2 reveals I1 xor I2
  ProductSpace in = wire("I1").concat(wire("I2"));
  ProductSpace out = wire("O1").concat(wire("O2"));
  std::vector<cxmat> ks;
  for (int k = 0; k < 2; ++k)
    for (int x = 0; x < 4; ++x) {
      int i1 = x / 2, i2 = x % 2;
      cxmat m = cxmat::Zero(4, 4);
      m(((i1 ^ k) * 2) + (i2 ^ k), x) = 1.0 / std::sqrt(2.0);
      ks.push_back(m);
    }
  auto ch = QuantumChannel::from_kraus(in, out, ks);
  REQUIRE(signals(ch, {"I1"}, {"O1", "O2"}));
  REQUIRE_FALSE(signals(ch, {"I1"}, {"O1"}));
  REQUIRE_FALSE(signals(ch, {"I1"}, {"O2"}));
}

TEST_CASE("parity channel signals jointly") {
  ProductSpace in = wire("I1").concat(wire("I2"));
  ProductSpace out = wire("O1").concat(wire("O2"));
  auto parity = QuantumChannel::classical_function(in, out, [](int x) {
    int p = (x / 2) ^ (x % 2);
    return 2 * p + p;
  });
  REQUIRE(signals(parity, {"I1", "I2"}, {"O1", "O2"}));
}

TEST_CASE("coarse constant channel does not signal while its parity fine-graining does") {
  ProductSpace in_c = wire("I"), out_c = wire("O");
  auto coarse = QuantumChannel::classical_function(in_c, out_c, [](int) { return 0; });
  REQUIRE_FALSE(signals(coarse, {"I"}, {"O"}));
  ProductSpace in_f = wire("I1").concat(wire("I2"));
  ProductSpace out_f = wire("O1").concat(wire("O2"));
  auto fine = QuantumChannel::classical_function(in_f, out_f, [](int x) {
    int p = (x / 2) ^ (x % 2);
    return 2 * p + p;
  });
  REQUIRE(signals(fine, {"I1", "I2"}, {"O1", "O2"}));
}

TEST_CASE("signalling structure of identity and swap") {
  auto id = QuantumChannel::identity(wire("A"), wire("B"));
  auto st = signalling_structure(id, 2);
  REQUIRE(st.edges.size() == 1);
  REQUIRE(st.has_edge({"A"}, {"B"}));

  cxmat swap = cxmat::Zero(4, 4);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) swap(b * 2 + a, a * 2 + b) = 1.0;
  auto sw = QuantumChannel::unitary(wire("A").concat(wire("B")), wire("C").concat(wire("D")), swap);
  auto sst = signalling_structure(sw, 2);
  REQUIRE(sst.has_edge({"A"}, {"D"}));
  REQUIRE(sst.has_edge({"B"}, {"C"}));
  REQUIRE_FALSE(sst.has_edge({"A"}, {"C"}));
  REQUIRE_FALSE(sst.has_edge({"B"}, {"D"}));
  REQUIRE(sst.has_edge({"A", "B"}, {"C", "D"}));

  for (const auto& e : sst.edges) REQUIRE(signals(sw, e.source, e.target));
}

TEST_CASE("parallel identities do not signal across each other") {
  auto i1 = QuantumChannel::identity(wire("I1"), wire("O1"));
  auto i2 = QuantumChannel::identity(wire("I2"), wire("O2"));
  auto net = parallel(i1, i2);
  REQUIRE(signals(net, {"I1"}, {"O1"}));
  REQUIRE(signals(net, {"I2"}, {"O2"}));
  REQUIRE_FALSE(signals(net, {"I1"}, {"O2"}));
}

TEST_CASE("signals agrees with the sampling oracle on random channels") {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 6; ++t) {
    ProductSpace in = wire("A").concat(wire("B"));
    ProductSpace out = wire("C").concat(wire("D"));
    auto ch = QuantumChannel::from_kraus(in, out, random_kraus_set(rng, 4, 4, 2));
    for (const auto& src : {std::vector<std::string>{"A"}, std::vector<std::string>{"B"}}) {
      for (const auto& tgt : {std::vector<std::string>{"C"}, std::vector<std::string>{"D"}}) {
        bool exact = signals(ch, src, tgt);
        bool sampled = signals_sampling_oracle(ch, src, tgt, 200, rng);
        REQUIRE(exact == sampled);
      }
    }
  }
}

TEST_CASE("signalling is monotone under enlarging source and target") {
  std::mt19937_64 rng(43);
  for (int t = 0; t < 6; ++t) {
    ProductSpace in = wire("A").concat(wire("B"));
    ProductSpace out = wire("C").concat(wire("D"));
    auto ch = QuantumChannel::from_kraus(in, out, random_kraus_set(rng, 4, 4, 3));
    if (signals(ch, {"A"}, {"C"})) {
      REQUIRE(signals(ch, {"A", "B"}, {"C"}));
      REQUIRE(signals(ch, {"A"}, {"C", "D"}));
      REQUIRE(signals(ch, {"A", "B"}, {"C", "D"}));
    }
  }
}

TEST_CASE("tensor-product unitaries do not signal across the split") {
  std::mt19937_64 rng(44);
  cxmat u = random_unitary(rng, 2), v = random_unitary(rng, 2);
  auto ch = QuantumChannel::unitary(wire("A").concat(wire("B")), wire("C").concat(wire("D")),
                                    kron(u, v));
  REQUIRE_FALSE(signals(ch, {"A"}, {"D"}));
  REQUIRE_FALSE(signals(ch, {"B"}, {"C"}));
  REQUIRE(signals(ch, {"A"}, {"C"}));
}

TEST_CASE("fine-graining preserves signalling relations") {
  ProductSpace in_c = wire("B").concat(wire("D"));
  ProductSpace out_c = ProductSpace::single("A", 4);
  auto coarse = QuantumChannel::classical_function(in_c, out_c, [](int x) {
    int b = x / 2, d = x % 2;
    return 2 * d + b;
  });
  ProductSpace out_f = wire("A1").concat(wire("A2"));
  auto fine = QuantumChannel::classical_function(in_c, out_f, [](int x) {
    int b = x / 2, d = x % 2;
    return 2 * d + b;
  });
  SystemFineGraining map;
  map.inputs.push_back(identity_fine_graining_entry("B", 2));
  map.inputs.push_back(identity_fine_graining_entry("D", 2));
  SystemFineGrainingEntry a;
  a.coarse_label = "A";
  a.fine_labels = {"A1", "A2"};
  for (int v = 0; v < 4; ++v) {
    cxmat basis = cxmat::Zero(4, 1);
    basis(v, 0) = 1.0;
    a.level_bases.push_back(basis);
  }
  map.outputs.push_back(a);
  REQUIRE(preserves_signalling_under_fine_graining(coarse, fine, map));
}

TEST_CASE("identity fine-graining trivially preserves signalling") {
  std::mt19937_64 rng(45);
  auto ch = QuantumChannel::from_kraus(wire("A"), wire("B"), random_kraus_set(rng, 2, 2, 2));
  SystemFineGraining map;
  map.inputs.push_back(identity_fine_graining_entry("A", 2));
  map.outputs.push_back(identity_fine_graining_entry("B", 2));
  REQUIRE(preserves_signalling_under_fine_graining(ch, ch, map));
}

TEST_CASE("signals validates its inputs") {
  auto id = QuantumChannel::identity(wire("A"), wire("B"));
  REQUIRE_THROWS_AS(signals(id, {}, {"B"}), ChannelError);
  REQUIRE_THROWS_AS(signals(id, {"B"}, {"B"}), ChannelError);
  REQUIRE_THROWS_AS(signals(id, {"A"}, {"A"}), ChannelError);
}

TEST_CASE("dot export lists subset nodes verbatim") {
  cxmat swap = cxmat::Zero(4, 4);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) swap(b * 2 + a, a * 2 + b) = 1.0;
  auto sw = QuantumChannel::unitary(wire("A").concat(wire("B")), wire("C").concat(wire("D")), swap);
  auto st = signalling_structure(sw, 1);
  auto dot = to_dot(st);
  REQUIRE(dot.find("\"{A}\" -> \"{D}\"") != std::string::npos);
  REQUIRE(dot.find("digraph") != std::string::npos);
}
