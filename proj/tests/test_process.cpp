#include "causalflow/process.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace causalflow;

namespace {

cxmat qubit_state(int i) { return matrix_unit(i, i, 2); }

QuantumChannel wire_channel(const std::string& in, const std::string& out, int d = 2) {
  return QuantumChannel::identity(ProductSpace::single(in, d), ProductSpace::single(out, d));
}

ProcessMatrix pipe_identity() {
  return make_pipe_process(qubit_state(0), wire_channel("x", "y"));
}

// reversed pipe: B fed |0>, A receives B_O
ProcessMatrix pipe_reversed() {
  Party a{"A", 2, 2, 1, 1};
  Party b{"B", 2, 2, 1, 1};
  auto prep = QuantumChannel::prepare(ProductSpace::single(b.in_label(), 2), qubit_state(0));
  auto mid = QuantumChannel::identity(ProductSpace::single(b.out_label(), 2),
                                      ProductSpace::single(a.in_label(), 2));
  auto sink = QuantumChannel::discard(ProductSpace::single(a.out_label(), 2));
  auto map = compose_network({prep, mid, sink}, {})
                 .with_input_order({a.out_label(), b.out_label()})
                 .with_output_order({a.in_label(), b.in_label()});
  return ProcessMatrix::from_map({a, b}, map);
}

ProcessMatrix classical_switch_2party() {
  auto w1 = pipe_identity();
  auto w2 = pipe_reversed();
  cxmat mix = 0.5 * w1.w() + 0.5 * w2.w();
  return ProcessMatrix::from_w(w1.parties(), mix);
}

ExtendedLocalMap z_measure_forward(const Party& base) {
  Party p = base;
  p.d_setting = 1;
  p.d_outcome = 2;
  std::vector<std::vector<cxmat>> inst(2);
  inst[0].push_back(matrix_unit(0, 0, 2));
  inst[1].push_back(matrix_unit(1, 1, 2));
  return make_extended_local_map(p, {inst});
}

ExtendedLocalMap preparer(const Party& base, const std::vector<cxvec>& preps) {
  Party p = base;
  p.d_setting = static_cast<int>(preps.size());
  p.d_outcome = 1;
  std::vector<std::vector<std::vector<cxmat>>> family;
  for (const auto& s : preps) {
    std::vector<std::vector<cxmat>> inst(1);
    for (int i = 0; i < p.d_in; ++i) {
      cxmat k = s * cxvec::Unit(p.d_in, i).adjoint();
      inst[0].push_back(k);
    }
    family.push_back(inst);
  }
  return make_extended_local_map(p, family);
}

ExtendedLocalMap measurer_bases(const Party& base, const std::vector<std::vector<cxvec>>& bases,
                                const cxvec& reprep) {
  Party p = base;
  p.d_setting = static_cast<int>(bases.size());
  p.d_outcome = p.d_in;
  std::vector<std::vector<std::vector<cxmat>>> family;
  for (const auto& basis : bases) {
    std::vector<std::vector<cxmat>> inst(static_cast<std::size_t>(p.d_outcome));
    for (std::size_t x = 0; x < basis.size(); ++x)
      inst[x].push_back(cxmat(reprep * basis[x].adjoint()));
    family.push_back(inst);
  }
  return make_extended_local_map(p, family);
}

std::vector<cxvec> qubit_preps() {
  cxvec zero = cxvec::Unit(2, 0), one = cxvec::Unit(2, 1);
  cxvec plus = (zero + one) / std::sqrt(2.0);
  cxvec plusi = (zero + complexd(0, 1) * one) / std::sqrt(2.0);
  return {zero, one, plus, plusi};
}

std::vector<std::vector<cxvec>> qubit_bases() {
  cxvec zero = cxvec::Unit(2, 0), one = cxvec::Unit(2, 1);
  std::vector<std::vector<cxvec>> bases;
  bases.push_back({zero, one});
  bases.push_back({(zero + one) / std::sqrt(2.0), (zero - one) / std::sqrt(2.0)});
  bases.push_back({(zero + complexd(0, 1) * one) / std::sqrt(2.0),
                   (zero - complexd(0, 1) * one) / std::sqrt(2.0)});
  return bases;
}

}  // namespace

TEST_CASE("one-party preparation process reproduces measurement statistics") {
  std::mt19937_64 rng(71);
  cxmat rho = random_density(rng, 2);
  Party a{"A", 2, 1, 1, 2};
  auto prep = QuantumChannel::prepare(ProductSpace::single(a.in_label(), 2), rho);
  auto sink = QuantumChannel::discard(ProductSpace::single(a.out_label(), 1));
  auto map = compose_network({prep, sink}, {});
  auto pm = ProcessMatrix::from_map({a}, map);
  REQUIRE(approx_equal(pm.w(), rho, 1e-10));

  Party p{"A", 2, 1, 1, 2};
  std::vector<std::vector<cxmat>> inst(2);
  cxmat k0 = cxmat::Zero(1, 2), k1 = cxmat::Zero(1, 2);
  k0(0, 0) = 1.0;
  k1(0, 1) = 1.0;
  inst[0].push_back(k0);
  inst[1].push_back(k1);
  auto m = make_extended_local_map(p, {inst});
  auto born = born_probabilities(pm, {m}, {0});
  REQUIRE(std::abs(born.p_trace[0] - std::real(rho(0, 0))) < 1e-10);
  REQUIRE(std::abs(born.p_trace[1] - std::real(rho(1, 1))) < 1e-10);
  REQUIRE(born.max_discrepancy < 1e-9);
}

TEST_CASE("w and map representations are mutually inverse") {
  std::mt19937_64 rng(72);
  auto pm = make_pipe_process(random_density(rng, 2),
                              QuantumChannel::from_kraus(ProductSpace::single("x", 2),
                                                         ProductSpace::single("y", 2),
                                                         random_kraus_set(rng, 2, 2, 2)));
  cxmat w = pm.w();
  auto pm2 = ProcessMatrix::from_w(pm.parties(), w);
  REQUIRE(frobenius_distance(pm2.map().choi(), pm.map().choi()) < 1e-10);
  auto pm3 = ProcessMatrix::from_map(pm.parties(), pm2.map());
  REQUIRE(frobenius_distance(pm3.w(), w) < 1e-10);
}

TEST_CASE("pipe process validates with the right trace") {
  auto pm = pipe_identity();
  auto rep = validate_process(pm, 16);
  REQUIRE(rep.consistent());
  REQUIRE(std::abs(rep.trace - 4.0) < 1e-9);

  auto bad = ProcessMatrix::from_w(pm.parties(), cxmat(2.0 * pm.w()));
  auto rep2 = validate_process(bad, 4);
  REQUIRE_FALSE(rep2.consistent());

  cxmat w = pm.w();
  w -= 0.8 * cxmat::Identity(w.rows(), w.cols());
  auto rep3 = validate_process(ProcessMatrix::from_w(pm.parties(), w), 4);
  REQUIRE_FALSE(rep3.consistent());
}

TEST_CASE("instrument extraction from extended maps") {
  auto m = z_measure_forward(Party{"A", 2, 2, 1, 2});
  auto inst = instrument_from_extended(m, 0);
  REQUIRE(inst.cp_kraus[0].size() == 1);
  REQUIRE(inst.cp_kraus[1].size() == 1);
  REQUIRE(approx_equal(inst.cp_kraus[0][0], matrix_unit(0, 0, 2), 1e-12));

  std::mt19937_64 rng(73);
  cxmat u = random_unitary(rng, 2);
  Party p{"A", 2, 2, 1, 1};
  auto um = make_extended_local_map(p, {{{u}}});
  auto ui = instrument_from_extended(um, 0);
  REQUIRE(ui.cp_kraus.size() == 1);
  REQUIRE(approx_equal(ui.cp_kraus[0][0], u, 1e-12));

  Party p2{"A", 2, 2, 2, 1};
  cxmat v = random_unitary(rng, 2);
  auto sm = make_extended_local_map(p2, {{{u}}, {{v}}});
  REQUIRE(approx_equal(instrument_from_extended(sm, 0).cp_kraus[0][0], u, 1e-12));
  REQUIRE(approx_equal(instrument_from_extended(sm, 1).cp_kraus[0][0], v, 1e-12));
}

TEST_CASE("born probabilities agree between the trace and composition routes") {
  std::mt19937_64 rng(74);
  for (int t = 0; t < 10; ++t) {
    auto pipe = QuantumChannel::from_kraus(ProductSpace::single("x", 2),
                                           ProductSpace::single("y", 2),
                                           random_kraus_set(rng, 2, 2, 2));
    auto pm = make_pipe_process(random_density(rng, 2), pipe);
    Party pa = pm.parties()[0], pb = pm.parties()[1];
    auto ma = measurer_bases(pa, qubit_bases(), cxvec::Unit(2, 0));
    auto mb = measurer_bases(pb, qubit_bases(), cxvec::Unit(2, 0));
    std::uniform_int_distribution<int> pick(0, 2);
    auto born = born_probabilities(pm, {ma, mb}, {pick(rng), pick(rng)});
    REQUIRE(born.max_discrepancy < 1e-9);
    REQUIRE(std::abs(born.denominator - 1.0) < 1e-9);
    double total = 0;
    for (double v : born.p_trace) total += v;
    REQUIRE(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("partial composition with a fixed channel is the reduced process") {
  std::mt19937_64 rng(75);
  for (int t = 0; t < 6; ++t) {
    auto pipe = QuantumChannel::from_kraus(ProductSpace::single("x", 2),
                                           ProductSpace::single("y", 2),
                                           random_kraus_set(rng, 2, 2, 2));
    auto pm = make_pipe_process(random_density(rng, 2), pipe);
    auto local = QuantumChannel::from_kraus(ProductSpace::single("B_I", 2),
                                            ProductSpace::single("B_O", 2),
                                            random_kraus_set(rng, 2, 2, 2));
    auto reduced_pm = partial_compose_fixed(pm, {{"B", local}});
    cxmat direct = reduced_process(pm, {{"B", local_choi(local)}});
    REQUIRE(frobenius_distance(reduced_pm.w(), direct) < 1e-9);
    cxmat same = reduced_process(pm, {});
    REQUIRE(frobenius_distance(same, pm.w()) < 1e-12);
  }
}

TEST_CASE("reduced process of a trace-preserving map is a valid process") {
  std::mt19937_64 rng(76);
  auto pm = pipe_identity();
  auto local = QuantumChannel::from_kraus(ProductSpace::single("B_I", 2),
                                          ProductSpace::single("B_O", 2),
                                          random_kraus_set(rng, 2, 2, 3));
  auto reduced_pm = partial_compose_fixed(pm, {{"B", local}});
  auto rep = validate_process(reduced_pm, 8);
  REQUIRE(rep.consistent());
}

TEST_CASE("process signalling structure of a pipe is the chain") {
  auto pm = pipe_identity();
  auto st = process_signalling_structure(pm);
  REQUIRE(st.has_edge({"A_I"}, {"A_O"}));
  REQUIRE(st.has_edge({"A_O"}, {"B_I"}));
  REQUIRE(st.has_edge({"B_I"}, {"B_O"}));
  REQUIRE_FALSE(st.has_edge({"B_O"}, {"A_I"}));
}

TEST_CASE("fixed-order detection on pipes and the classical switch") {
  auto pm = pipe_identity();
  auto w = is_fixed_order(pm);
  REQUIRE(w.has_value());
  REQUIRE(w->precedes("A_O", "B_I"));
  REQUIRE(w->precedes("A_I", "A_O"));

  auto cs = classical_switch_2party();
  REQUIRE(validate_process(cs, 8).consistent());
  REQUIRE_FALSE(is_fixed_order(cs).has_value());
}

TEST_CASE("classical switch admits its defining causal decomposition") {
  auto w1 = pipe_identity();
  auto w2 = pipe_reversed();
  auto cs = ProcessMatrix::from_w(w1.parties(), cxmat(0.5 * w1.w() + 0.5 * w2.w()));
  REQUIRE(verify_causal_separable_decomposition(cs, 0.5, w1, w2));
  REQUIRE(verify_causal_separable_decomposition(w1, 1.0, w1, w2));
  REQUIRE_FALSE(verify_causal_separable_decomposition(cs, 0.9, w1, w2));
}

TEST_CASE("three-party chain signals from A to C through B") {
  std::mt19937_64 rng(77);
  auto pm = make_chain_process(random_density(rng, 2), wire_channel("u", "v"),
                               wire_channel("s", "t"));
  REQUIRE_FALSE(signals(pm.map(), {"A_O"}, {"C_I"}));
  REQUIRE(process_signals(pm, 0, {2}));
  auto fo = is_fixed_order(pm);
  REQUIRE(fo.has_value());
  REQUIRE(fo->precedes("A_O", "B_I"));
  REQUIRE(fo->precedes("B_O", "C_I"));
  REQUIRE(fo->precedes("A_O", "C_I"));
}

TEST_CASE("device-independent signalling on simple tables") {
  JointDistribution d;
  d.setting_dims = {2, 2};
  d.outcome_dims = {1, 2};
  d.p.assign(2 * 2 * 2, 0.0);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) d.at({a, b}, {0, a}) = 1.0;
  REQUIRE(device_independent_signals(d, 0, {1}));
  REQUIRE_FALSE(device_independent_signals(d, 1, {1}));

  JointDistribution prod;
  prod.setting_dims = {2, 2};
  prod.outcome_dims = {2, 2};
  prod.p.assign(16, 0.25);
  REQUIRE_FALSE(device_independent_signals(prod, 0, {1}));
  REQUIRE_FALSE(device_independent_signals(prod, 1, {0}));
}

TEST_CASE("device-dependent and device-independent verdicts agree on pipes") {
  auto pm = pipe_identity();
  Party pa = pm.parties()[0], pb = pm.parties()[1];
  auto ma = preparer(pa, qubit_preps());
  auto mb = measurer_bases(pb, qubit_bases(), cxvec::Unit(2, 0));
  std::vector<ExtendedLocalMap> maps{ma, mb};

  auto fwd = signalling_equivalence_check(pm, maps, 0, {1});
  REQUIRE(fwd.agree());
  REQUIRE(fwd.device_dependent);
  auto bwd = signalling_equivalence_check(pm, maps, 1, {0});
  REQUIRE(bwd.agree());
  REQUIRE_FALSE(bwd.device_dependent);
}

TEST_CASE("entangled ancilla extension preserves validity") {
  auto pm = pipe_identity();
  auto ext = with_entangled_ancillas(pm, 0, 1, 2);
  REQUIRE(ext.parties()[0].d_in == 4);
  auto rep = validate_process(ext, 8);
  REQUIRE(rep.consistent());
}
