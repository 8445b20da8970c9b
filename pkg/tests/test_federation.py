import numpy as np
import pytest

from asegsim.federation import (Federation, NoiseModel, RngPolicy, ROUND_ONE,
                                ROUND_TWO, SamplingPlan)


def make_fed(std, plan=None, noise=None, seed=0, n_nodes=None):
    clients = std.clients if n_nodes is None else std.clients[:n_nodes]
    return Federation(clients, plan or SamplingPlan(),
                      noise or NoiseModel(), master_seed=seed)


def test_round_one_pool_excludes_server(std):
    fed = make_fed(std, SamplingPlan(batch=4))
    for k in range(200):
        assert np.all(fed.sample_clients(k, ROUND_ONE) >= 2)
        assert np.all(fed.sample_clients(k, ROUND_ONE) <= fed.n_nodes)


def test_round_two_pool_includes_server(std):
    fed = make_fed(std, SamplingPlan(batch=3))
    seen = set()
    for k in range(400):
        seen.update(int(v) for v in fed.sample_clients(k, ROUND_TWO))
    assert min(seen) == 1 and max(seen) == fed.n_nodes


def test_full_participation_pools(std):
    fed = Federation.full_participation(std.clients)
    assert np.array_equal(fed.sample_clients(5, ROUND_ONE),
                          np.arange(2, fed.n_nodes + 1))
    assert np.array_equal(fed.sample_clients(5, ROUND_TWO),
                          np.arange(1, fed.n_nodes + 1))
    assert fed.plan.full_participation and fed.noise.kind == "none"


def test_sampling_frequencies_are_uniform(std):
    fed = make_fed(std, SamplingPlan(batch=1), n_nodes=6)
    n_draws = 20000
    counts = np.zeros(7)
    for k in range(n_draws):
        counts[int(fed.sample_clients(k, ROUND_ONE)[0])] += 1
    assert counts[0] == 0 and counts[1] == 0
    p = 1.0 / 5.0
    band = 3.0 * np.sqrt(n_draws * p * (1 - p))
    for node in range(2, 7):
        assert abs(counts[node] - n_draws * p) <= band


def test_without_replacement_draws_distinct(std):
    fed = make_fed(std, SamplingPlan(batch=5, replacement=False), n_nodes=8)
    for k in range(100):
        picked = fed.sample_clients(k, ROUND_ONE)
        assert len(set(picked.tolist())) == 5
    big = make_fed(std, SamplingPlan(batch=8, replacement=False), n_nodes=8)
    with pytest.raises(ValueError):
        big.sample_clients(0, ROUND_ONE)  # pool has only 7 nodes


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel("nope", 0.1)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", -1.0)
    with pytest.raises(ValueError):
        NoiseModel("none", 0.5)
    assert NoiseModel().sample(np.random.default_rng(0), 4) is None
    assert NoiseModel("gaussian", 0.0).sample(np.random.default_rng(0), 4) is None


def test_noise_variance_bounds_are_exact():
    assert NoiseModel("gaussian", 0.3).variance_bound(30) == 30 * 0.3 ** 2
    assert NoiseModel("uniform", 0.6).variance_bound(12) == 12 * 0.6 ** 2 / 3.0
    assert NoiseModel().variance_bound(99) == 0.0


@pytest.mark.parametrize("kind,scale", [("gaussian", 0.4), ("uniform", 0.9)])
def test_noise_moments_match_bounds(kind, scale):
    model = NoiseModel(kind, scale)
    rng = np.random.default_rng(123)
    d, n_draws = 30, 10000
    total = np.zeros(d)
    sq = 0.0
    for _ in range(n_draws):
        xi = model.sample(rng, d)
        total += xi
        sq += xi @ xi
    assert np.linalg.norm(total / n_draws) <= 0.05 * scale * np.sqrt(d)
    bound = model.variance_bound(d)
    assert abs(sq / n_draws - bound) <= 0.05 * bound


def test_reweighted_full_aggregate_is_exact_correction(std):
    # with every node contacted, the reweighted round-one aggregate equals
    # grad r(x) - grad r_1(x) to rounding
    fed = Federation.full_participation(std.clients)
    x = std.x0
    s = fed.round_one(0, x)
    want = std.global_obj.grad(x) - std.server.grad(x)
    assert np.linalg.norm(s - want) <= 1e-12 * max(1.0, np.linalg.norm(want))


def test_unweighted_full_aggregate_is_pool_average(std):
    plan = SamplingPlan(full_participation=True, reweight=False)
    fed = make_fed(std, plan)
    x = std.x0
    s = fed.round_one(0, x)
    pool = np.mean([c.grad(x) for c in std.clients[1:]], axis=0)
    want = pool - std.server.grad(x)
    assert np.linalg.norm(s - want) <= 1e-12 * max(1.0, np.linalg.norm(want))


def test_round_one_aggregate_is_unbiased(std):
    plan = SamplingPlan(batch=2)
    noise = NoiseModel("gaussian", 0.05)
    fed = Federation(std.clients, plan, noise, master_seed=11)
    x = std.x0
    want = std.global_obj.grad(x) - std.server.grad(x)
    draws = [fed.round_one(k, x) for k in range(3000)]
    mean = np.mean(draws, axis=0)
    spread = np.mean([np.linalg.norm(d - mean) ** 2 for d in draws])
    err = np.linalg.norm(mean - want)
    assert err <= 4.0 * np.sqrt(spread / len(draws))


def test_round_two_full_covers_all_nodes_and_skips_server_contact(std):
    fed = Federation.full_participation(std.clients)
    x = std.x0
    t = fed.round_two(0, x)
    want = std.global_obj.grad(x)
    assert np.linalg.norm(t - want) <= 1e-12 * max(1.0, np.linalg.norm(want))
    # server evaluated locally: M - 1 contacts, not M
    assert fed.ledger.contacts == fed.n_nodes - 1


def test_ledger_counts_are_exact(std):
    B, M, iters = 3, len(std.clients), 7
    fed = make_fed(std, SamplingPlan(batch=B))
    x = std.x0
    for k in range(iters):
        fed.round_one(k, x)
        fed.round_two(k, x)
    contacts, rounds, bits = fed.ledger.snapshot()
    assert contacts == 2 * B * iters
    assert rounds == iters * B / M  # float-identical, both sides int / int
    assert bits == 2 * iters * (M - 1)


def test_ledger_full_participation_counts(std):
    M, iters = len(std.clients), 4
    fed = Federation.full_participation(std.clients)
    x = std.x0
    for k in range(iters):
        fed.round_one(k, x)
        fed.round_two(k, x)
    contacts, rounds, _ = fed.ledger.snapshot()
    # round one contacts M-1 nodes, round two M-1 (server local)
    assert contacts == 2 * iters * (M - 1)
    assert rounds == iters * (M - 1) / M


def test_noisy_grad_record_flag(std):
    fed = make_fed(std, noise=NoiseModel("gaussian", 0.1))
    g1 = fed.noisy_grad(2, std.x0, 0, ROUND_ONE, 1, record=False)
    assert fed.ledger.contacts == 0
    g2 = fed.noisy_grad(2, std.x0, 0, ROUND_ONE, 1)
    assert fed.ledger.contacts == 1
    # same address, same draw
    assert np.array_equal(g1, g2)


def test_rng_policy_streams_are_addressed():
    pol = RngPolicy(42)
    a = pol.stream(1, 2, 3, 4).standard_normal(8)
    b = pol.stream(1, 2, 3, 4).standard_normal(8)
    c = pol.stream(1, 2, 3, 5).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    other = RngPolicy(43).stream(1, 2, 3, 4).standard_normal(8)
    assert not np.array_equal(a, other)


def test_federation_runs_reproduce_bitwise(std):
    def one(seed):
        fed = Federation(std.clients, SamplingPlan(batch=2),
                         NoiseModel("gaussian", 0.2), master_seed=seed)
        out = []
        for k in range(5):
            out.append(fed.round_one(k, std.x0))
            out.append(fed.round_two(k, std.x0))
        return np.concatenate(out)

    assert np.array_equal(one(7), one(7))
    assert not np.array_equal(one(7), one(8))


def test_federation_needs_two_nodes(std):
    with pytest.raises(ValueError):
        Federation(std.clients[:1], SamplingPlan())
