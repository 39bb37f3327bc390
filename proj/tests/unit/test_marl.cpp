#include <doctest.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "dnt/marl.hpp"

using namespace dnt;
using namespace dnt::marl;

namespace {

// Random replay episodes over `agents` agents with obs of size `dim`.
Episode random_episode(std::size_t agents, std::size_t users, std::size_t len, Rng& rng,
                       std::size_t num_rbs = 4) {
  Episode ep;
  ep.num_rbs = num_rbs;
  const auto dim = static_cast<Eigen::Index>(3 * users);
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<AgentSlot> row;
    for (std::size_t m = 0; m < agents; ++m) {
      AgentSlot s;
      s.obs = nn::Vector(dim);
      for (Eigen::Index i = 0; i < dim; ++i) s.obs[i] = rng.uniform(-1, 1);
      s.mask = static_cast<std::uint32_t>(rng.uniform_index(std::size_t{1} << users));
      const auto valid = valid_actions(s.mask, num_rbs);
      s.action = ActionCode::from_index(valid[rng.uniform_index(valid.size())]);
      s.local_reward = rng.uniform(-1, 1);
      row.push_back(s);
    }
    ep.slots.push_back(row);
    ep.team_reward.push_back(rng.uniform(-2, 2));
    ep.global_states.push_back(twin::PhysicalState(users));
  }
  ep.global_states.push_back(twin::PhysicalState(users));
  return ep;
}

std::vector<AgentNet> random_nets(std::size_t agents, std::size_t users, std::size_t hidden,
                                  Rng& rng) {
  std::vector<AgentNet> nets;
  for (std::size_t m = 0; m < agents; ++m) {
    nets.push_back(AgentNet::random(3 * users, hidden, action_space_size(users), rng));
  }
  return nets;
}

std::vector<nn::Matrix*> params_of(AgentNet& n) {
  auto p = n.gru.matrices();
  p.push_back(&n.head);
  return p;
}

std::vector<const nn::Matrix*> grads_of(const AgentGradients& g) {
  auto p = g.cell.matrices();
  p.push_back(&g.head);
  return p;
}

}  // namespace

TEST_CASE("action codes") {
  CHECK(action_space_size(3) == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(ActionCode::from_index(i).index() == i);
  CHECK(ActionCode{true, 0b101}.index() == 0b1011);
  CHECK(is_valid({false, 0b011}, 0b111, 12));
  CHECK_FALSE(is_valid({false, 0b100}, 0b011, 12));
  CHECK_FALSE(is_valid({true, 0b11}, 0b11, 2));
  CHECK(is_valid({true, 0b1}, 0b11, 2));
}

TEST_CASE("valid actions are exactly the in-budget submasks") {
  for (std::uint32_t mask : {0u, 0b1u, 0b1011u, 0b111111u}) {
    for (std::size_t n : {1u, 2u, 12u}) {
      const auto got = valid_actions(mask, n);
      std::vector<std::size_t> want;
      for (std::size_t i = 0; i < action_space_size(6); ++i) {
        if (is_valid(ActionCode::from_index(i), mask, n)) want.push_back(i);
      }
      std::vector<std::size_t> sorted = got;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == want);
    }
  }
  CHECK(valid_actions(0, 12).size() == 2);  // stay silent, or sync only
  CHECK(valid_actions(0b111, 12).size() == 16);
}

TEST_CASE("local state encoding") {
  const auto topo = radio::Topology::paper_default();
  const twin::PhysicalState phys{{-100, 30}, {150, 0}};
  const auto v = encode_local_state(0, phys, topo);
  REQUIRE(v.size() == 6);
  CHECK(v[0] == doctest::Approx(-100 * kStateScale));
  CHECK(v[1] == doctest::Approx(30 * kStateScale));
  CHECK(v[2] == 0.0);
  CHECK(v[3] == 0.0);
  CHECK(v[4] == 1.0);
  CHECK(v[5] == 0.0);
  CHECK(coverage_mask(0, phys, topo) == 0b01);
  CHECK(coverage_mask(2, phys, topo) == 0b10);
}

TEST_CASE("epsilon-greedy explores uniformly over valid actions only") {
  Rng rng(1);
  auto net = AgentNet::random(9, 8, action_space_size(3), rng);
  const nn::Vector obs = nn::Vector::Zero(9);
  const auto valid = valid_actions(0b101, 12);  // 8 actions
  std::map<std::size_t, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    net.reset_hidden();
    const ActionCode a = act_epsilon_greedy(net, obs, valid, 1.0, rng);
    REQUIRE(is_valid(a, 0b101, 12));
    ++counts[a.index()];
  }
  CHECK(counts.size() == valid.size());
  for (auto [a, c] : counts) CHECK(std::abs(c / double(n) - 1.0 / valid.size()) < 0.02);

  // Greedy picks the valid argmax.
  net.reset_hidden();
  AgentNet copy = net;
  const auto qs = copy.q_values(obs, valid);
  const auto best = valid[std::max_element(qs.begin(), qs.end()) - qs.begin()];
  CHECK(act_epsilon_greedy(net, obs, valid, 0.0, rng).index() == best);
}

TEST_CASE("q_tot is the plain sum") {
  const std::vector<double> q{1.5, -0.5, 2.0};
  CHECK(q_tot(q) == 3.0);
  CHECK(q_tot(std::vector<double>{}) == 0.0);
}

TEST_CASE("decomposed max equals joint max") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> tables(3, std::vector<double>(4));
    for (auto& t : tables) {
      for (double& x : t) x = rng.uniform(-5, 5);
    }
    double joint = -1e300;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int c = 0; c < 4; ++c) joint = std::max(joint, tables[0][a] + tables[1][b] + tables[2][c]);
      }
    }
    double split = 0.0;
    for (auto& t : tables) split += *std::max_element(t.begin(), t.end());
    CHECK(joint == split);
  }
}

TEST_CASE("TD targets: gamma zero and terminal slots") {
  Rng rng(3);
  const auto ep = random_episode(2, 3, 4, rng);
  const auto nets = random_nets(2, 3, 4, rng);
  CHECK(td_target(ep, 1, nets, 0.0) == ep.team_reward[1]);
  CHECK(td_target(ep, 3, nets, 0.9) == ep.team_reward[3]);

  // Manual bootstrap for slot 0.
  double boot = 0.0;
  for (std::size_t m = 0; m < 2; ++m) {
    AgentNet n = nets[m];
    n.reset_hidden();
    n.q_values(ep.slots[0][m].obs);
    const nn::Vector q = n.q_values(ep.slots[1][m].obs);
    double best = -1e300;
    for (std::size_t a : valid_actions(ep.slots[1][m].mask, ep.num_rbs)) best = std::max(best, q[a]);
    boot += best;
  }
  CHECK(td_target(ep, 0, nets, 0.5) == doctest::Approx(ep.team_reward[0] + 0.5 * boot));
}

TEST_CASE("batch targets agree with the single-transition target") {
  Rng rng(12);
  ReplayMemory mem(1000);
  for (int e = 0; e < 3; ++e) mem.push(random_episode(2, 3, 5, rng));
  const auto nets = random_nets(2, 3, 5, rng);
  const auto targets = random_nets(2, 3, 5, rng);
  const auto refs = mem.sample(16, rng);
  const auto batch = TrainBatch::from_refs(mem, refs);
  const auto g = td_loss_gradients(nets, targets, batch, 0.2, Credit::team);
  for (std::size_t b = 0; b < batch.items.size(); ++b) {
    const auto [e, t] = batch.items[b];
    CHECK(g.targets[b] == doctest::Approx(td_target(*batch.episodes[e], t, targets, 0.2)).epsilon(1e-12));
  }
}

TEST_CASE("VDN loss gradient matches central differences") {
  Rng rng(5);
  ReplayMemory mem(1000);
  for (int e = 0; e < 2; ++e) mem.push(random_episode(2, 2, 4, rng));
  auto nets = random_nets(2, 2, 4, rng);
  const auto targets = random_nets(2, 2, 4, rng);
  const auto batch = TrainBatch::from_refs(mem, mem.sample(6, rng));
  const auto g = td_loss_gradients(nets, targets, batch, 0.2, Credit::team);
  auto loss = [&] { return td_loss_gradients(nets, targets, batch, 0.2, Credit::team).loss; };
  double worst = 0.0;
  for (std::size_t m = 0; m < 2; ++m) {
    auto ps = params_of(nets[m]);
    const auto gs = grads_of(g.grads[m]);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      for (Eigen::Index i = 0; i < ps[k]->size(); ++i) {
        const double num = oracle::central_difference(ps[k]->data() + i, 1e-5, loss);
        const double ana = gs[k]->data()[i];
        if (std::abs(ana) < 1e-7 && std::abs(num) < 1e-7) continue;
        worst = std::max(worst, oracle::relative_error(ana, num));
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("one agent: IQL and VDN coincide when local equals team reward") {
  Rng rng(6);
  ReplayMemory mem(1000);
  for (int e = 0; e < 2; ++e) {
    Episode ep = random_episode(1, 2, 4, rng);
    for (std::size_t t = 0; t < ep.length(); ++t) ep.slots[t][0].local_reward = ep.team_reward[t];
    mem.push(ep);
  }
  const auto batch = TrainBatch::from_refs(mem, mem.sample(8, rng));
  auto a = random_nets(1, 2, 4, rng);
  auto b = a;
  const auto targets = a;
  vdn_train_step(a, targets, batch, 0.1, 0.2);
  iql_train_step(b, targets, batch, 0.1, 0.2);
  CHECK(a[0].head == b[0].head);
  CHECK(a[0].gru.candidate.recurrent == b[0].gru.candidate.recurrent);
}

TEST_CASE("three agents: IQL and VDN updates differ") {
  Rng rng(7);
  ReplayMemory mem(1000);
  mem.push(random_episode(3, 2, 5, rng));
  const auto batch = TrainBatch::from_refs(mem, mem.sample(8, rng));
  auto a = random_nets(3, 2, 4, rng);
  auto b = a;
  const auto targets = a;
  vdn_train_step(a, targets, batch, 0.1, 0.2);
  iql_train_step(b, targets, batch, 0.1, 0.2);
  CHECK(a[0].head != b[0].head);
}

TEST_CASE("training step lowers the batch loss for a small rate") {
  Rng rng(10);
  ReplayMemory mem(1000);
  mem.push(random_episode(2, 2, 6, rng));
  const auto batch = TrainBatch::from_refs(mem, mem.sample(12, rng));
  auto nets = random_nets(2, 2, 4, rng);
  const auto targets = nets;
  const double before = td_loss_gradients(nets, targets, batch, 0.2, Credit::team).loss;
  vdn_train_step(nets, targets, batch, 1e-3, 0.2);
  CHECK(td_loss_gradients(nets, targets, batch, 0.2, Credit::team).loss < before);
}

TEST_CASE("replay memory evicts whole episodes first in, first out") {
  Rng rng(2);
  ReplayMemory mem(10);
  mem.push(random_episode(1, 2, 4, rng));
  mem.push(random_episode(1, 2, 4, rng));
  CHECK(mem.size() == 8);
  Episode third = random_episode(1, 2, 4, rng);
  const double marker = third.team_reward[0];
  mem.push(third);
  CHECK(mem.size() == 8);
  CHECK(mem.episodes().size() == 2);
  CHECK(mem.episodes().back().team_reward[0] == marker);
  for (const auto& r : mem.sample(50, rng)) {
    CHECK(r.episode < 2);
    CHECK(r.slot < 4);
  }
  // Stored actions are all valid under their masks.
  for (const auto& ep : mem.episodes()) {
    for (const auto& row : ep.slots) {
      for (const auto& s : row) CHECK(is_valid(s.action, s.mask, ep.num_rbs));
    }
  }
}

TEST_CASE("transition view of an episode") {
  Rng rng(2);
  const auto ep = random_episode(2, 2, 3, rng);
  const auto tr = transition_at(ep, 2);
  CHECK(tr.terminal);
  CHECK(tr.reward == ep.team_reward[2]);
  CHECK(tr.joint_action.size() == 2);
  CHECK_FALSE(transition_at(ep, 0).terminal);
}

TEST_CASE("target sync is a hard copy every period") {
  Rng rng(4);
  auto nets = random_nets(2, 2, 3, rng);
  auto targets = random_nets(2, 2, 3, rng);
  const auto before = targets[0].head;
  for (std::size_t e = 0; e < 9; ++e) CHECK_FALSE(sync_targets(nets, targets, e, 10));
  CHECK(targets[0].head == before);
  CHECK(sync_targets(nets, targets, 9, 10));
  CHECK(targets[0].head == nets[0].head);
  CHECK(targets[1].gru.reset.input == nets[1].gru.reset.input);
  const nn::Vector obs = nn::Vector::Ones(6);
  nets[0].reset_hidden();
  targets[0].reset_hidden();
  CHECK(nets[0].q_values(obs) == targets[0].q_values(obs));
}

TEST_CASE("exploration schedule") {
  CHECK(exploration_rate(0, 75) == doctest::Approx(0.9));
  CHECK(exploration_rate(45, 75) == doctest::Approx(0.05));
  CHECK(exploration_rate(74, 75) == doctest::Approx(0.05));
  CHECK(exploration_rate(20, 75) < exploration_rate(10, 75));
}

TEST_CASE("local rewards") {
  const twin::PhysicalState phys{{0, 0}, {0, 0}, {0, 0}};
  const auto tw = twin::TwinState::mirror({{0, 0}, {3, 4}, {0, 0}});
  const std::vector<double> rates{1.0, 2.0, 4.0};
  const std::vector<ActionCode> joint{{false, 0b011}, {false, 0b110}};
  const std::vector<std::uint32_t> masks{0b011, 0b110};
  const auto r = local_rewards(phys, tw, rates, joint, masks, 0.3, -5);
  // User 1 is claimed twice: both BSs pay 2 * rho.
  CHECK(r[0] == -10.0);
  CHECK(r[1] == -10.0);

  const std::vector<ActionCode> clean{{false, 0b001}, {false, 0b100}};
  const auto s = local_rewards(phys, tw, rates, clean, masks, 0.3, -5);
  CHECK(s[0] == doctest::Approx(0.3 * 1.0 - 0.7 / 3 * 25));
  CHECK(s[1] == doctest::Approx(0.3 * 4.0 - 0.7 / 3 * 25));
  CHECK(association_counts(joint, 3) == std::vector<std::size_t>{1, 2, 1});
}

TEST_CASE("agent checkpoints round trip") {
  Rng rng(1);
  const auto nets = random_nets(3, 2, 4, rng);
  const auto path = (std::filesystem::temp_directory_path() / "dnt_agents_test.bin").string();
  save_agents(path, nets);
  const auto back = load_agents(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(back[m].head == nets[m].head);
    CHECK(back[m].gru.update.recurrent == nets[m].gru.update.recurrent);
  }
}

TEST_CASE("q values: zero net, determinism and sensitivity") {
  const auto topo = radio::Topology::paper_default();
  auto zero = AgentNet::zeros(9, 4, action_space_size(3));
  const twin::PhysicalState phys{{-100, 10}, {-90, 0}, {100, 0}};
  CHECK(zero.q_values(encode_local_state(0, phys, topo)).isZero());

  Rng rng(3);
  const auto net = AgentNet::random(9, 8, action_space_size(3), rng);
  AgentNet a = net, b = net;
  const auto qa = a.q_values(encode_local_state(0, phys, topo));
  CHECK(qa == b.q_values(encode_local_state(0, phys, topo)));

  twin::PhysicalState moved = phys;
  moved[1].x += 3.0;
  AgentNet c = net;
  CHECK(c.q_values(encode_local_state(0, moved, topo)) != qa);

  // An uncovered user's movement is invisible.
  twin::PhysicalState far = phys;
  far[2].y += 5.0;
  AgentNet d = net;
  CHECK(d.q_values(encode_local_state(0, far, topo)) == qa);
}

TEST_CASE("local encoding is injective on covered configurations") {
  const auto topo = radio::Topology::paper_default();
  Rng rng(14);
  std::map<std::vector<double>, std::vector<double>> seen;
  for (int k = 0; k < 2000; ++k) {
    twin::PhysicalState phys;
    for (int u = 0; u < 3; ++u) {
      phys.push_back({std::round(rng.uniform(-170, -30)), std::round(rng.uniform(-60, 60))});
    }
    std::vector<double> key;  // covered positions, sentinel for uncovered
    for (const Vec2 p : phys) {
      const bool cov = topo.covers(0, p);
      key.push_back(cov ? p.x : -1e9);
      key.push_back(cov ? p.y : -1e9);
    }
    const auto v = encode_local_state(0, phys, topo);
    const std::vector<double> enc(v.data(), v.data() + v.size());
    const auto [it, inserted] = seen.emplace(enc, key);
    if (!inserted) CHECK(it->second == key);
  }
}
