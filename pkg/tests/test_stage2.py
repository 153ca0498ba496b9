import math

import numpy as np
import pytest

from oracles import brute_lambda2, random_simplex
from scrc.core import InfeasibleError
from scrc.sets import LossKind, linear_ordinal_weights, pointwise_losses
from scrc.stage2 import (
    augmented_budget,
    augmented_crc_lambda2,
    crc_budget,
    crc_lambda2,
    crc_lambda2_bisect,
    m_min,
)


def spread_probs(p_true, n_classes=3, seed=0):
    """Examples whose true-label probabilities are given, rest spread evenly."""
    p_true = np.asarray(p_true, dtype=float)
    probs = np.tile((1.0 - p_true)[:, None] / (n_classes - 1), (1, n_classes))
    probs[:, 0] = p_true
    return probs, np.zeros(p_true.size, dtype=int)


class TestBudgets:
    def test_crc_budget_examples(self):
        assert crc_budget(9, 0.25) == 2          # ceil(2.5) - 1
        assert crc_budget(9, 0.1) == 0           # ceil(1.0) - 1
        assert crc_budget(8, 0.1) == 0           # ceil(0.9) - 1
        assert crc_budget(999, 0.1) == 99        # ceil(100.0) - 1

    def test_augmented_budget_example(self):
        assert augmented_budget(999, 0.1, 0.6) == 59

    def test_m_min_examples(self):
        assert m_min(0.1) == 9
        assert m_min(0.25) == 3
        assert m_min(0.15) == 6  # ceil(6.67) - 1

    def test_m_min_relationship_exact(self):
        rng = np.random.default_rng(0)
        alphas = np.concatenate([
            rng.uniform(0.01, 0.99, size=600),
            [0.1, 0.2, 0.25, 0.5, 1 / 3, 0.05],  # integer and rational 1/alpha
        ])
        for alpha in alphas:
            mm = m_min(alpha)
            for m in range(max(mm - 2, 1), mm + 3):
                feasible = crc_budget(m, alpha) > 0
                if m < mm:
                    assert not feasible
                elif m > mm:
                    assert feasible
                else:
                    # at m = m_min the budget is positive iff (m+1)*alpha
                    # strictly exceeds 1, i.e. 1/alpha is not an integer
                    assert feasible == ((mm + 1) * alpha > 1.0 + 1e-9)


class TestCrcLambda2:
    def test_worked_example(self):
        probs, labels = spread_probs([0.95, 0.9, 0.85, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3])
        res = crc_lambda2(probs, labels, alpha=0.25, loss=LossKind.miscoverage())
        assert res.budget == 2
        assert res.m == 9
        assert res.feasible
        assert res.lambda2_hat == pytest.approx(0.5, abs=1e-12)

    def test_infeasible_below_m_min(self):
        probs, labels = spread_probs(np.linspace(0.3, 0.9, 8))
        with pytest.raises(InfeasibleError):
            crc_lambda2(probs, labels, alpha=0.1, loss=LossKind.miscoverage())

    def test_vacuous_budget_gives_zero(self):
        probs, labels = spread_probs([0.2, 0.3, 0.4])
        res = crc_lambda2(probs, labels, alpha=0.99, loss=LossKind.miscoverage())
        assert res.budget >= res.m
        assert res.lambda2_hat == 0.0

    def test_constraint_holds_at_solution(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            m = int(rng.integers(3, 40))
            k = int(rng.integers(2, 6))
            probs = np.stack([random_simplex(rng, k) for _ in range(m)])
            labels = rng.integers(0, k, size=m)
            alpha = float(rng.uniform(0.05, 0.9))
            loss = (LossKind.miscoverage() if rng.random() < 0.5
                    else LossKind.ordinal(n_classes=k))
            try:
                res = crc_lambda2(probs, labels, alpha, loss)
            except InfeasibleError:
                assert crc_budget(m, alpha) <= 0
                continue
            total = pointwise_losses(probs, labels, res.lambda2_hat, loss).sum()
            assert total <= res.budget + 1e-9

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(2)
        probs = np.stack([random_simplex(rng, 5) for _ in range(60)])
        labels = rng.integers(0, 5, size=60)
        for loss in (LossKind.miscoverage(), LossKind.ordinal(n_classes=5)):
            lams = []
            for alpha in (0.05, 0.1, 0.2, 0.35, 0.5, 0.8):
                try:
                    lams.append(crc_lambda2(probs, labels, alpha, loss).lambda2_hat)
                except InfeasibleError:
                    continue
            assert all(a >= b - 1e-12 for a, b in zip(lams, lams[1:]))

    @pytest.mark.parametrize("kind", ["miscoverage", "ordinal"])
    def test_matches_brute_force(self, kind):
        rng = np.random.default_rng(3)
        for _ in range(150):
            m = int(rng.integers(2, 50))
            k = int(rng.integers(2, 6))
            probs = np.stack([random_simplex(rng, k) for _ in range(m)])
            labels = rng.integers(0, k, size=m)
            alpha = float(rng.uniform(0.05, 0.9))
            if crc_budget(m, alpha) <= 0:
                continue
            if kind == "miscoverage":
                loss, weights = LossKind.miscoverage(), None
            else:
                weights = linear_ordinal_weights(k)
                loss = LossKind.ordinal(weights)
            res = crc_lambda2(probs, labels, alpha, loss)
            grid = brute_lambda2(probs, labels, res.budget, weights)
            assert abs(res.lambda2_hat - grid) <= 1e-4 + 1e-9


class TestAugmented:
    def test_budget_example(self):
        n = 20
        rng = np.random.default_rng(4)
        probs = np.stack([random_simplex(rng, 4) for _ in range(n)])
        labels = rng.integers(0, 4, size=n)
        mask = np.ones(n, dtype=bool)
        res = augmented_crc_lambda2(probs, labels, mask, alpha=0.2, xi_lcb=0.5,
                                    loss=LossKind.miscoverage())
        assert res.budget == augmented_budget(n, 0.2, 0.5) == 2

    def test_infeasible_gate(self):
        n = 9
        rng = np.random.default_rng(5)
        probs = np.stack([random_simplex(rng, 3) for _ in range(n)])
        labels = rng.integers(0, 3, size=n)
        with pytest.raises(InfeasibleError):
            augmented_crc_lambda2(probs, labels, np.ones(n, bool), alpha=0.1,
                                  xi_lcb=0.9, loss=LossKind.miscoverage())
        with pytest.raises(InfeasibleError):
            augmented_crc_lambda2(probs, labels, np.ones(n, bool), alpha=0.5,
                                  xi_lcb=0.0, loss=LossKind.miscoverage())

    def test_gate_boundary_exact(self):
        # (n+1) * alpha * xi_lcb = 10 * 0.2 * 0.5 = 1 exactly: feasible, budget 0
        n = 9
        rng = np.random.default_rng(6)
        probs = np.stack([random_simplex(rng, 3) for _ in range(n)])
        labels = rng.integers(0, 3, size=n)
        res = augmented_crc_lambda2(probs, labels, np.ones(n, bool), alpha=0.2,
                                    xi_lcb=0.5, loss=LossKind.miscoverage())
        assert res.feasible and res.budget == 0

    def test_all_unselected_gives_zero_threshold(self):
        n = 12
        rng = np.random.default_rng(7)
        probs = np.stack([random_simplex(rng, 3) for _ in range(n)])
        labels = rng.integers(0, 3, size=n)
        res = augmented_crc_lambda2(probs, labels, np.zeros(n, bool), alpha=0.5,
                                    xi_lcb=0.9, loss=LossKind.miscoverage())
        assert res.lambda2_hat == 0.0
        assert res.m == 0

    def test_unselected_points_do_not_matter(self):
        rng = np.random.default_rng(8)
        n = 40
        probs = np.stack([random_simplex(rng, 4) for _ in range(n)])
        labels = rng.integers(0, 4, size=n)
        mask = rng.random(n) < 0.6
        res = augmented_crc_lambda2(probs, labels, mask, 0.3, 0.55,
                                    loss=LossKind.miscoverage())
        probs2 = probs.copy()
        probs2[~mask] = random_simplex(rng, 4)
        res2 = augmented_crc_lambda2(probs2, labels, mask, 0.3, 0.55,
                                     loss=LossKind.miscoverage())
        assert res.lambda2_hat == res2.lambda2_hat

    def test_matches_brute_force_on_selected(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(5, 50))
            k = int(rng.integers(2, 6))
            probs = np.stack([random_simplex(rng, k) for _ in range(n)])
            labels = rng.integers(0, k, size=n)
            mask = rng.random(n) < rng.uniform(0.3, 1.0)
            if not mask.any():
                continue
            alpha = float(rng.uniform(0.1, 0.9))
            xi_lcb = float(rng.uniform(0.2, 1.0))
            if (n + 1) * alpha * xi_lcb < 1.0:
                continue
            res = augmented_crc_lambda2(probs, labels, mask, alpha, xi_lcb,
                                        loss=LossKind.miscoverage())
            grid = brute_lambda2(probs[mask], labels[mask], res.budget, None)
            assert abs(res.lambda2_hat - grid) <= 1e-4 + 1e-9


class TestBisectionSolver:
    def test_agrees_with_exact_solver(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            m = int(rng.integers(3, 30))
            k = int(rng.integers(2, 5))
            probs = np.stack([random_simplex(rng, k) for _ in range(m)])
            labels = rng.integers(0, k, size=m)
            alpha = float(rng.uniform(0.1, 0.9))
            loss = LossKind.ordinal(n_classes=k)
            if crc_budget(m, alpha) <= 0:
                continue
            res = crc_lambda2(probs, labels, alpha, loss)

            def loss_sum(lam2):
                return pointwise_losses(probs, labels, lam2, loss).sum()

            approx = crc_lambda2_bisect(loss_sum, res.budget)
            assert res.lambda2_hat <= approx + 1e-12
            assert approx - res.lambda2_hat <= 1e-9
            assert loss_sum(approx) <= res.budget + 1e-9

    def test_degenerate_ends(self):
        assert crc_lambda2_bisect(lambda lam: 0.0, budget=0) == 0.0
        assert crc_lambda2_bisect(lambda lam: 5.0, budget=1) == 1.0
