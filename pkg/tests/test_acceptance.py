"""End-to-end acceptance suite.

Each criterion prints one PASS/FAIL line. Criteria 1-5 are exact oracle
checks; criteria 6-11 exercise the full benchmark at desk scale and share
one set of trained experts and sampled demonstrations.
"""

import time

import numpy as np
import pytest
from scipy.special import ndtri

from cpdbench.distill import (
    DistillConfig,
    distill_train,
    loss_kl,
    loss_mse,
    loss_nll,
    sample_demonstrations,
    _batch_loss_and_grads,
)
from cpdbench.env import (
    ACT_DIM,
    env_reset,
    env_step,
    episode_z_rotation,
    make_task_family,
    reward_fn,
)
from cpdbench.net import GaussianHead, NetArch, Policy, default_actor_arch, net_init
from cpdbench.ppo import (
    TrainConfig,
    compute_gae,
    evaluate_policy,
    ppo_loss,
    train_expert,
)
from cpdbench.pipeline import ScoreMatrix, avg_seen_tasks
from cpdbench.replay import (
    EvalBundle,
    ExperienceBuffer,
    cpd_run,
    update_replay_br,
    update_replay_ex,
    update_replay_rp,
    update_replay_rpr,
)
from cpdbench.report import score_matrix_csv_path, write_score_matrix
from cpdbench.util import derive_seed

SEEDS = (0, 1, 2, 3, 4)
K = 3
MASTER_SEED = 12345
DEMO_EPISODES = 100
M_FULL = DEMO_EPISODES          # 100% of one demonstration
M_SMALL = DEMO_EPISODES // 100  # 1% of one demonstration
REPLAY = ("replay_br", "replay_ex", "replay_rp", "replay_rpr")


def report_line(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE CRITERION {criterion}: {status} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


# --- shared desk-scale artifacts (criteria 6-11) ----------------------------

@pytest.fixture(scope="module")
def family():
    return make_task_family(K, MASTER_SEED)


@pytest.fixture(scope="module")
def experts(family):
    out = {}
    for seed in SEEDS:
        for spec in family:
            cfg = TrainConfig(seed=derive_seed(seed, "expert", spec.object_id))
            out[(seed, spec.object_id)] = train_expert(spec, cfg)
    return out


@pytest.fixture(scope="module")
def demos(family, experts):
    out = {}
    for seed in SEEDS:
        for spec in family:
            expert = experts[(seed, spec.object_id)]
            out[(seed, spec.object_id)] = sample_demonstrations(
                expert.policy, spec.object_id, spec, DEMO_EPISODES,
                derive_seed(seed, "demos", spec.object_id))
    return out


def eval_seed_for(seed):
    return derive_seed(MASTER_SEED, seed, "acceptance-eval") % 2**32


def run_matrix(family, demos, strategy, capacity, seed, loss="kl"):
    stream = [demos[(seed, spec.object_id)] for spec in family]
    # the distillation seed deliberately excludes the loss name, so the
    # KL-vs-NLL comparison in criterion 10 is paired (identical shuffles)
    cfg = DistillConfig(loss=loss,
                        seed=derive_seed(seed, "cpd", strategy, capacity))
    bundle = EvalBundle(specs=list(family), n_episodes=10,
                        eval_seed=eval_seed_for(seed))
    result = cpd_run(stream, strategy, capacity, cfg, bundle)
    return ScoreMatrix(result.score_matrix, strategy, capacity, seed)


@pytest.fixture(scope="module")
def cpd_matrices(family, demos):
    """Every (strategy, M, loss, seed) cell needed by criteria 8-10."""
    out = {}
    for seed in SEEDS:
        out[("naive", M_FULL, "kl", seed)] = run_matrix(
            family, demos, "naive", M_FULL, seed)
        out[("cumulative", M_FULL, "kl", seed)] = run_matrix(
            family, demos, "cumulative", M_FULL, seed)
        out[("cumulative", M_FULL, "nll", seed)] = run_matrix(
            family, demos, "cumulative", M_FULL, seed, loss="nll")
        for strategy in REPLAY:
            for capacity in (M_FULL, M_SMALL):
                out[(strategy, capacity, "kl", seed)] = run_matrix(
                    family, demos, strategy, capacity, seed)
    return out


def final_avg(cpd_matrices, strategy, capacity, loss="kl"):
    """Seed-mean of the last avg-seen-tasks value."""
    vals = [avg_seen_tasks(cpd_matrices[(strategy, capacity, loss, seed)])[-1]
            for seed in SEEDS]
    return float(np.mean(vals))


# --- criterion 1: loss formula exactness ------------------------------------

class TestCriterion1:
    def test_loss_exactness(self):
        start = time.monotonic()
        rng = np.random.default_rng(10)
        worst_kl = 0.0
        for _ in range(20):
            mu, mu_s = rng.normal(size=2)
            sigma, sigma_s = rng.uniform(0.1, 3.0, size=2)
            analytic = loss_kl((np.array([mu]), np.array([sigma])),
                               (np.array([mu_s]), np.array([sigma_s])))
            # stratified 10^6-sample estimate: naive sampling has a standard
            # error far above 1e-2 when sigma* is small
            u = (np.arange(10**6) + rng.uniform(0, 1, size=10**6)) / 10**6
            x = mu + sigma * ndtri(u)
            logp = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma)
            logq = -0.5 * ((x - mu_s) / sigma_s) ** 2 - np.log(sigma_s)
            worst_kl = max(worst_kl, abs(analytic - float(np.mean(logp - logq))))

        p = (rng.normal(size=4), rng.uniform(0.1, 3.0, size=4))
        self_kl = abs(loss_kl(p, p))

        worst_identity = 0.0
        for _ in range(100):
            d = int(rng.integers(1, 9))
            sigma = float(rng.uniform(0.1, 3.0))
            mu, a = rng.normal(size=d), rng.normal(size=d)
            nll = loss_nll(GaussianHead(mu, np.full(d, np.log(sigma))), a)
            expected = (0.5 * loss_mse(mu, a) / sigma**2
                        + d * (np.log(sigma) + 0.5 * np.log(2 * np.pi)))
            worst_identity = max(worst_identity, abs(nll - expected))

        elapsed = time.monotonic() - start
        ok = (worst_kl < 1e-2 and self_kl < 1e-12
              and worst_identity < 1e-10 and elapsed < 30)
        report_line(1, ok,
                    f"MC-KL err {worst_kl:.2e}, self-KL {self_kl:.1e}, "
                    f"NLL/MSE identity err {worst_identity:.1e}, {elapsed:.1f}s")


# --- criterion 2: gradient correctness --------------------------------------

def fd_grad(f, params, h=1e-6):
    grad = np.empty_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2 * h)
    return grad


class TestCriterion2:
    def test_gradients(self):
        start = time.monotonic()
        rng = np.random.default_rng(20)
        worst = 0.0

        student = Policy.init(NetArch((8, 16, 16, 8)), 0)
        obs = rng.normal(size=(4, 8))
        acts = rng.normal(size=(4, 8))
        for loss in ("mse", "nll", "kl"):
            cfg = DistillConfig(loss=loss, expert_sigma=0.5)
            _, analytic = _batch_loss_and_grads(student, obs, acts, cfg)

            def at(p, _cfg=cfg):
                val, _ = _batch_loss_and_grads(student.with_flat(p), obs,
                                               acts, _cfg)
                return val

            numeric = fd_grad(at, student.flat())
            denom = np.maximum(np.abs(numeric), 1e-8)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))

        spec = make_task_family(1, 5)[0]
        actor = Policy.init(NetArch((spec.obs_dim, 16, ACT_DIM)), 1)
        carch = NetArch((spec.obs_dim, 16, 1))
        cparams = net_init(carch, 2)
        b_obs = rng.normal(size=(6, spec.obs_dim))
        b_act = rng.normal(size=(6, ACT_DIM))
        old_logp = actor.log_prob(b_obs, b_act) + rng.normal(scale=0.1, size=6)
        adv, ret = rng.normal(size=6), rng.normal(size=6)
        tcfg = TrainConfig(entropy_coef=0.01)
        _, a_grad, c_grad, _ = ppo_loss(actor, carch, cparams, b_obs, b_act,
                                        old_logp, adv, ret, tcfg)
        na = actor.flat().size

        def ppo_at(full):
            val, *_ = ppo_loss(actor.with_flat(full[:na]), carch, full[na:],
                               b_obs, b_act, old_logp, adv, ret, tcfg)
            return val

        numeric = fd_grad(ppo_at, np.concatenate([actor.flat(), cparams]))
        analytic = np.concatenate([a_grad, c_grad])
        denom = np.maximum(np.abs(numeric), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))

        elapsed = time.monotonic() - start
        ok = worst < 1e-4 and elapsed < 60
        report_line(2, ok, f"worst relative grad err {worst:.2e}, {elapsed:.1f}s")


# --- criterion 3: GAE oracle ------------------------------------------------

class TestCriterion3:
    def test_gae_oracle(self):
        start = time.monotonic()
        rng = np.random.default_rng(30)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 51))
            rewards = rng.normal(size=n)
            values = rng.normal(size=n)
            dones = (rng.random(n) < 0.15).astype(float)
            bootstrap = float(rng.normal())
            adv, _ = compute_gae(rewards, values, dones, bootstrap, 0.99, 0.95)
            vals = list(values) + [bootstrap]
            deltas = [rewards[t] + 0.99 * vals[t + 1] * (1 - dones[t]) - vals[t]
                      for t in range(n)]
            oracle = np.zeros(n)
            for t in range(n):
                acc, factor = 0.0, 1.0
                for k in range(t, n):
                    acc += factor * deltas[k]
                    if dones[k]:
                        break
                    factor *= 0.99 * 0.95
                oracle[t] = acc
            worst = max(worst, float(np.max(np.abs(adv - oracle))))
        elapsed = time.monotonic() - start
        ok = worst < 1e-12 and elapsed < 5
        report_line(3, ok, f"worst |gae - oracle| {worst:.1e}, {elapsed:.1f}s")


# --- criterion 4: buffer oracles --------------------------------------------

def reward_demo(rewards, expert_id=0):
    from cpdbench.distill import DemoEpisode, Demonstration

    rng = np.random.default_rng(expert_id)
    eps = [DemoEpisode(observations=rng.normal(size=(2, 3)),
                       actions=rng.normal(size=(2, 2)),
                       episodic_reward=float(r), z_rotation=0.0,
                       source_object_id=expert_id, episode_seed=i)
           for i, r in enumerate(rewards)]
    return Demonstration(episodes=eps, expert_id=expert_id)


class TestCriterion4:
    def test_buffer_oracles(self):
        start = time.monotonic()
        rng = np.random.default_rng(40)

        # ReplayRP == sort-and-truncate on 100 random pools
        rp_ok = True
        for case in range(100):
            rewards = rng.normal(size=80)
            buf = ExperienceBuffer.create(20, "replay_rp", case)
            update_replay_rp(buf, reward_demo(rewards[:40], 0))
            update_replay_rp(buf, reward_demo(rewards[40:], 1))
            kept = sorted(s.episode.episodic_reward for s in buf.slots)
            rp_ok &= np.array_equal(kept, sorted(rewards)[-20:])

        # ReplayBR balance invariant and remainder rule
        br_ok = True
        buf = ExperienceBuffer.create(10, "replay_br", 0)
        for i in range(3):
            update_replay_br(buf, reward_demo(rng.normal(size=20), i))
        br_ok &= buf.slot_counts() == {0: 4, 1: 3, 2: 3}
        buf = ExperienceBuffer.create(37, "replay_br", 1)
        for i in range(5):
            update_replay_br(buf, reward_demo(rng.normal(size=40), i))
            counts = list(buf.slot_counts().values())
            br_ok &= (max(counts) - min(counts) <= 1) and sum(counts) == 37

        # ReplayRPR inclusion vs straight-line key-method reference
        trials = 20_000
        weights = rng.uniform(0.5, 2.0, size=6)
        observed = np.zeros(6)
        reference = np.zeros(6)
        ref_rng = np.random.default_rng(41)
        for t in range(trials):
            buf = ExperienceBuffer.create(3, "replay_rpr", t)
            update_replay_rpr(buf, reward_demo(weights, 0))
            for s in buf.slots:
                observed[s.ordinal] += 1
            # independent reference: plain u^(1/w) keys, keep 3 largest
            shift = weights - weights.min() + 1e-6 * max(1.0, abs(weights.min()))
            keys = ref_rng.uniform(0, 1, size=6) ** (1.0 / shift)
            for idx in np.argsort(-keys)[:3]:
                reference[idx] += 1
        rpr_err = float(np.max(np.abs(observed - reference) / trials))
        rpr_ok = rpr_err < 0.01

        # ReplayEX expected counts vs re-simulation oracle, within 3 sigma
        capacity, n_exp, demo_size, ex_trials = 20, 4, 30, 1000

        def ex_sim(sim_rng):
            counts = []
            for i in range(1, n_exp + 1):
                if i == 1:
                    counts = [min(capacity, demo_size)]
                else:
                    q = max(1, capacity // i)
                    keep = sim_rng.choice(sum(counts), size=capacity - q,
                                          replace=False)
                    bounds = np.cumsum([0] + counts)
                    counts = [int(np.sum((keep >= lo) & (keep < hi)))
                              for lo, hi in zip(bounds, bounds[1:])]
                    counts.append(q)
            return counts

        sim_rng = np.random.default_rng(42)
        expected = np.mean([ex_sim(sim_rng) for _ in range(ex_trials)], axis=0)
        got = np.zeros(n_exp)
        for t in range(ex_trials):
            buf = ExperienceBuffer.create(capacity, "replay_ex", t)
            for i in range(n_exp):
                update_replay_ex(buf, reward_demo(rng.normal(size=demo_size), i))
            counts = buf.slot_counts()
            got += [counts.get(i, 0) for i in range(n_exp)]
        got /= ex_trials
        sigma = np.sqrt(capacity) / np.sqrt(ex_trials)
        ex_ok = float(np.max(np.abs(got - expected))) < 3 * max(sigma, 0.2)

        elapsed = time.monotonic() - start
        ok = rp_ok and br_ok and rpr_ok and ex_ok and elapsed < 60
        report_line(4, ok,
                    f"RP {rp_ok}, BR {br_ok}, RPR err {rpr_err:.4f}, "
                    f"EX {ex_ok}, {elapsed:.1f}s")


# --- criterion 5: reward and telescoping ------------------------------------

class TestCriterion5:
    def test_reward_telescoping(self):
        start = time.monotonic()
        hand = abs(reward_fn(np.zeros(6),
                             np.array([0.05, 0.0, 0.7, 0.2, 0.1, 0.0])) - 199.85)

        spec = make_task_family(1, 5, noise_scale=0.05)[0]
        rng = np.random.default_rng(50)
        worst = 0.0
        for ep in range(20):
            state = env_reset(spec, ep, episode_length=60)
            phis = [state.pose[3]]
            phi_reward = 0.0
            done = False
            while not done:
                prev = state.pose[3]
                _, _, _, done = env_step(state, rng.uniform(-1, 1, size=8))
                phi_reward += 1000.0 * (state.pose[3] - prev)
                phis.append(state.pose[3])
            worst = max(worst, abs(phi_reward - 1000.0 * episode_z_rotation(phis)))

        elapsed = time.monotonic() - start
        ok = hand == 0.0 and worst < 1e-9 and elapsed < 5
        report_line(5, ok,
                    f"hand-case err {hand:.1e}, telescoping err {worst:.1e}, "
                    f"{elapsed:.1f}s")


# --- criterion 6: expert learnability ---------------------------------------

class TestCriterion6:
    def test_experts_learn(self, family, experts):
        start = time.monotonic()
        detail = []
        all_ok = True
        for spec in family:
            wins = 0
            for seed in SEEDS:
                artifact = experts[(seed, spec.object_id)]
                untrained = Policy.init(artifact.policy.arch,
                                        derive_seed(seed, "untrained"))
                es = eval_seed_for(seed)
                trained_score = evaluate_policy(
                    artifact.policy, spec, 10, es).mean_z_rotation
                base_score = evaluate_policy(
                    untrained, spec, 10, es).mean_z_rotation
                if trained_score > 0 and trained_score >= 3 * base_score:
                    wins += 1
            detail.append(f"task {spec.object_id}: {wins}/5")
            all_ok &= wins >= 4
        elapsed = time.monotonic() - start
        ok = all_ok and elapsed < 15 * 60
        report_line(6, ok, ", ".join(detail) + f", {elapsed:.0f}s")


# --- criterion 7: distillation fidelity -------------------------------------

class TestCriterion7:
    def test_kl_fidelity(self, family, experts, demos):
        start = time.monotonic()
        spec = family[0]
        ratios = []
        for seed in SEEDS:
            artifact = experts[(seed, spec.object_id)]
            demo = demos[(seed, spec.object_id)]
            student = Policy.init(
                default_actor_arch(spec.obs_dim, ACT_DIM),
                derive_seed(seed, "fidelity-student"))
            student, _ = distill_train(
                student, [demo], DistillConfig(loss="kl", seed=seed))
            es = eval_seed_for(seed)
            expert_score = evaluate_policy(
                artifact.policy, spec, 10, es).mean_z_rotation
            student_score = evaluate_policy(student, spec, 10, es).mean_z_rotation
            ratios.append(student_score / expert_score)
        mean_ratio = float(np.mean(ratios))
        elapsed = time.monotonic() - start
        ok = mean_ratio >= 0.90 and elapsed < 3 * 60
        report_line(7, ok, f"mean fidelity {mean_ratio:.3f}, {elapsed:.0f}s")


# --- criterion 8: forgetting and strategy ordering --------------------------

class TestCriterion8:
    def test_strategy_ordering(self, cpd_matrices):
        start = time.monotonic()
        naive = final_avg(cpd_matrices, "naive", M_FULL)
        cumulative = final_avg(cpd_matrices, "cumulative", M_FULL)
        replay = {s: final_avg(cpd_matrices, s, M_FULL) for s in REPLAY}
        a = naive < 0.60 * cumulative
        b = all(replay[s] >= 1.3 * naive for s in REPLAY)
        c = all(cumulative >= 0.9 * replay[s] for s in REPLAY)
        elapsed = time.monotonic() - start
        ok = a and b and c
        rep = ", ".join(f"{s} {replay[s]:.1f}" for s in REPLAY)
        report_line(8, ok,
                    f"naive {naive:.1f}, cumulative {cumulative:.1f}, {rep}; "
                    f"a={a} b={b} c={c}, {elapsed:.0f}s")


# --- criterion 9: buffer-size degradation -----------------------------------

class TestCriterion9:
    def test_small_buffer_degrades(self, cpd_matrices):
        holds = []
        for s in REPLAY:
            small = final_avg(cpd_matrices, s, M_SMALL)
            full = final_avg(cpd_matrices, s, M_FULL)
            holds.append(small <= full)
        ok = sum(holds) >= 3
        detail = ", ".join(f"{s}: {'<=' if h else '>'}"
                           for s, h in zip(REPLAY, holds))
        report_line(9, ok, f"M={M_SMALL} vs M={M_FULL}: {detail}")


# --- criterion 10: loss ordering --------------------------------------------

class TestCriterion10:
    def test_kl_beats_nll(self, cpd_matrices):
        kl = final_avg(cpd_matrices, "cumulative", M_FULL, "kl")
        nll = final_avg(cpd_matrices, "cumulative", M_FULL, "nll")
        ok = kl >= nll
        report_line(10, ok, f"cumulative KL {kl:.1f} vs NLL {nll:.1f}")


# --- criterion 11: determinism ----------------------------------------------

class TestCriterion11:
    def test_byte_identical_csvs(self, family, demos, tmp_path):
        start = time.monotonic()
        payloads = []
        for run in range(2):
            matrix = run_matrix(family, demos, "replay_rpr", M_FULL, 0)
            outdir = tmp_path / f"run{run}"
            write_score_matrix(outdir, matrix, "0" * 16)
            payloads.append(
                score_matrix_csv_path(outdir, matrix).read_bytes())
        elapsed = time.monotonic() - start
        ok = payloads[0] == payloads[1] and elapsed < 2 * 60
        report_line(11, ok,
                    f"{len(payloads[0])} bytes, identical={payloads[0] == payloads[1]}, "
                    f"{elapsed:.0f}s")
