"""Self-contained oracle suite behind the `verify` CLI verb.

Each check builds randomized instances from an explicit seed and tests an
exact algebraic property against an independent re-derivation: the recursive
classifier against the direct joint ridge solve, the inverse update against a
direct inversion, analytic gradients against central differences, and the
metric/missingness arithmetic against hand-computed values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .analytic import AnalyticState, JointCache
from .encoder import EncoderConfig, FrozenEncoder, ModalInput
from .metrics import AccuracyMatrix, acc_metric, fg_metric
from .numerics import SeededRng
from .pools import PoolConfig, PromptModule
from .stream import missing_counts
from .training import BpHead, total_loss


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def rel_fro(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (denom if denom > 0 else 1.0))


class _SignFlippedState(AnalyticState):
    """Deliberately wrong weight update (test hook for mutation sanity)."""

    def _weight_update(self, H, Y):
        RHt = self.R @ H.T
        self.weight = self.weight - RHt @ (H @ self.weight) - RHt @ Y


def random_tasks(rng: SeededRng, num_tasks: int, feature_dim: int,
                 rows_lo: int, rows_hi: int, classes_per_task: int):
    """Synthetic (H, Y_local) task blocks with disjoint class ranges."""
    tasks = []
    for _ in range(num_tasks):
        n = int(rng.integers(rows_lo, rows_hi + 1))
        H = rng.normal(n, feature_dim, 1.0)
        labels = rng.integers(0, classes_per_task, size=n)
        Y = np.zeros((n, classes_per_task))
        Y[np.arange(n), labels] = 1.0
        tasks.append((H, Y))
    return tasks


def run_incremental(tasks, eta_reg: float, state_cls=AnalyticState) -> AnalyticState:
    """init-then-recurse over task blocks, expanding the class range each step."""
    H0, Y0 = tasks[0]
    state = state_cls.init_first(H0, Y0, eta_reg)
    width = Y0.shape[1]
    for H, Y in tasks[1:]:
        state.expand_classes(Y.shape[1])
        width += Y.shape[1]
        padded = np.zeros((Y.shape[0], width))
        padded[:, width - Y.shape[1]:] = Y
        state.rls_update(H, padded)
    return state


def _filled_cache(tasks, eta_reg: float) -> JointCache:
    cache = JointCache(eta_reg)
    width = 0
    for H, Y in tasks:
        width += Y.shape[1]
        padded = np.zeros((Y.shape[0], width))
        padded[:, width - Y.shape[1]:] = Y
        cache.add(H, padded)
    return cache


def check_theorem1(seed: int, regimes: int = 20,
                   state_cls=AnalyticState) -> PropertyResult:
    """Incremental (W, R) vs. the direct joint ridge solve, random regimes."""
    rng = SeededRng(seed, (1,))
    eta_reg = 1.0
    worst_w = worst_r = 0.0
    for _ in range(regimes):
        K = int(rng.integers(0, 4))
        K = (2, 5, 10, 20)[K]
        d = (32, 128, 256)[int(rng.integers(0, 3))]
        classes = int(rng.integers(2, 5))
        tasks = random_tasks(rng, K, d, 10, 200, classes)
        state = run_incremental(tasks, eta_reg, state_cls)
        W_joint, R_joint = _filled_cache(tasks, eta_reg).joint_solve()
        worst_w = max(worst_w, rel_fro(state.weight, W_joint))
        worst_r = max(worst_r, rel_fro(state.R, R_joint))
    ok = worst_w <= 1e-9 and worst_r <= 1e-9
    return PropertyResult(
        "theorem1-equivalence", ok,
        f"{regimes} regimes, worst rel err W={worst_w:.3e} R={worst_r:.3e} (tol 1e-9)",
    )


def check_woodbury_q(seed: int, streams: int = 5) -> PropertyResult:
    """Recursive R vs. direct inversion; exact Q-recursion over task blocks."""
    rng = SeededRng(seed, (2,))
    eta_reg = 1.0
    worst_r = 0.0
    q_exact = True
    for _ in range(streams):
        tasks = random_tasks(rng, 6, 48, 5, 60, 3)
        state = run_incremental(tasks, eta_reg)
        cache = _filled_cache(tasks, eta_reg)
        _, R_joint = cache.joint_solve()
        worst_r = max(worst_r, rel_fro(state.R, R_joint))
        width = cache.total_classes
        for k in range(1, len(tasks) + 1):
            H, Y = cache.tasks[k - 1]
            step = np.zeros((state.feature_dim, width))
            step[:, : Y.shape[1]] = H.T @ Y
            expected = cache.q_matrix(k - 1) + step if k > 1 else step
            if not np.array_equal(cache.q_matrix(k), expected):
                q_exact = False
    ok = worst_r <= 1e-9 and q_exact
    return PropertyResult(
        "woodbury-and-q-recursion", ok,
        f"worst rel err R={worst_r:.3e} (tol 1e-9), Q recursion exact={q_exact}",
    )


def check_batch_split(seed: int, trials: int = 10) -> PropertyResult:
    """Any row partition of a task gives the same update as one call."""
    rng = SeededRng(seed, (3,))
    eta_reg = 1.0
    worst = 0.0
    for _ in range(trials):
        first = random_tasks(rng, 1, 40, 30, 60, 3)
        state = run_incremental(first, eta_reg)
        n = int(rng.integers(50, 151))
        H = rng.normal(n, 40, 1.0)
        labels = rng.integers(0, 2, size=n)
        Y = np.zeros((n, 5))
        Y[np.arange(n), 3 + labels] = 1.0
        whole = state.copy().expand_classes(2).rls_update(H, Y)
        pieces = state.copy().expand_classes(2)
        cuts = np.sort(rng.integers(1, n, size=int(rng.integers(1, 5))))
        prev = 0
        for cut in list(cuts) + [n]:
            if cut > prev:
                pieces.rls_update(H[prev:cut], Y[prev:cut])
            prev = cut
        worst = max(worst, rel_fro(pieces.weight, whole.weight),
                    rel_fro(pieces.R, whole.R))
    ok = worst <= 1e-9
    return PropertyResult(
        "batch-split-invariance", ok,
        f"{trials} random partitions, worst rel err {worst:.3e} (tol 1e-9)",
    )


def check_order_equivalence(seed: int, trials: int = 10) -> PropertyResult:
    """Task order permutes columns of the final W but changes nothing else."""
    rng = SeededRng(seed, (4,))
    eta_reg = 1.0
    worst = 0.0
    for _ in range(trials):
        K = int(rng.integers(3, 6))
        widths = [int(rng.integers(1, 4)) for _ in range(K)]
        tasks = []
        for w in widths:
            n = int(rng.integers(10, 50))
            H = rng.normal(n, 32, 1.0)
            Y = np.zeros((n, w))
            Y[np.arange(n), rng.integers(0, w, size=n)] = 1.0
            tasks.append((H, Y))
        base = run_incremental(tasks, eta_reg)
        order = rng.permutation(K)
        permuted = run_incremental([tasks[i] for i in order], eta_reg)
        # column block of task t in each run's layout
        base_off = np.cumsum([0] + widths)
        perm_off = np.cumsum([0] + [widths[i] for i in order])
        col_map = np.empty(base_off[-1], dtype=int)
        for pos, t in enumerate(order):
            col_map[base_off[t]: base_off[t] + widths[t]] = np.arange(
                perm_off[pos], perm_off[pos] + widths[t]
            )
        worst = max(worst, rel_fro(permuted.weight[:, col_map], base.weight),
                    rel_fro(permuted.R, base.R))
    ok = worst <= 1e-9
    return PropertyResult(
        "task-order-equivalence", ok,
        f"{trials} permutations, worst rel err {worst:.3e} (tol 1e-9)",
    )


# ----------------------------------------------------------------------
# gradient checks (tiny encoder so every parameter entry is affordable)

def tiny_gradcheck_setup(seed: int):
    cfg = EncoderConfig(
        embed_dim=8, num_layers=2, num_heads=2, image_tokens=2, text_tokens=2,
        input_dim=4, prompt_layers=(0, 1), backbone_seed=seed,
    )
    encoder = FrozenEncoder(cfg)
    prompts = PromptModule(PoolConfig(pool_size=3, prompt_len=2), 8,
                           SeededRng(seed, (5,)))
    head = BpHead(8)
    head.expand(4)
    with torch.no_grad():
        head.weight += torch.from_numpy(SeededRng(seed, (6,)).normal(8, 4, 0.2))
    return encoder, prompts, head


def random_gradcheck_batch(rng: SeededRng, cfg: EncoderConfig, size: int = 4):
    samples, labels = [], []
    for i in range(size):
        img = rng.normal(cfg.image_tokens, cfg.input_dim, 1.0)
        txt = rng.normal(cfg.text_tokens, cfg.input_dim, 1.0)
        if i == 1:
            samples.append(ModalInput(np.zeros_like(img), txt,
                                      has_image=False, has_text=True))
        elif i == 2:
            samples.append(ModalInput(img, np.zeros_like(txt),
                                      has_image=True, has_text=False))
        else:
            samples.append(ModalInput(img, txt))
        labels.append(int(rng.integers(0, 4)))
    return samples, np.asarray(labels)


def gradient_group_errors(seed: int, batches: int = 5, h: float = 1e-5,
                          rec_weight: float = 0.01) -> dict[str, float]:
    """Worst relative group error of analytic vs. central-difference gradients."""
    encoder, prompts, head = tiny_gradcheck_setup(seed)
    groups = {
        "text_components": prompts.text_pool.components,
        "text_attention": prompts.text_pool.attention,
        "text_keys": prompts.text_pool.keys,
        "image_components": prompts.image_pool.components,
        "image_attention": prompts.image_pool.attention,
        "image_keys": prompts.image_pool.keys,
        "bp_head": head.weight,
    }
    rng = SeededRng(seed, (7,))
    worst = {name: 0.0 for name in groups}
    for _ in range(batches):
        samples, labels = random_gradcheck_batch(rng, encoder.config)

        def loss_value() -> float:
            with torch.no_grad():
                loss, _ = total_loss(encoder, prompts, head, samples, labels,
                                     rec_weight)
            return float(loss)

        for p in groups.values():
            p.grad = None
        loss, _ = total_loss(encoder, prompts, head, samples, labels, rec_weight)
        loss.backward()
        for name, p in groups.items():
            analytic = p.grad.detach().numpy().ravel().copy()
            flat = p.data.view(-1)
            fd = np.empty_like(analytic)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                fd[i] = (up - down) / (2.0 * h)
            denom = max(np.linalg.norm(analytic), 1e-30)
            worst[name] = max(worst[name],
                              float(np.linalg.norm(analytic - fd) / denom))
    return worst


def check_gradients(seed: int, batches: int = 5) -> PropertyResult:
    errors = gradient_group_errors(seed, batches=batches)
    worst = max(errors.values())
    ok = worst <= 1e-4
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errors.items())
    return PropertyResult(
        "loss-gradient-finite-difference", ok, f"{detail} (tol 1e-4)"
    )


# ----------------------------------------------------------------------

def check_metric_oracles() -> PropertyResult:
    cases = []
    m = AccuracyMatrix.from_rows([[0.9, 0.7], [0.8]])
    cases.append(abs(acc_metric(m) - 0.75) <= 1e-12)
    cases.append(abs(fg_metric(m) - 0.2) <= 1e-12)
    m = AccuracyMatrix.from_rows([[0.6, 0.6, 0.6], [0.6, 0.6], [0.6]])
    cases.append(abs(acc_metric(m) - 0.6) <= 1e-12)
    cases.append(abs(fg_metric(m) - 0.0) <= 1e-12)
    # monotone improvement: backward transfer makes forgetting negative
    m = AccuracyMatrix.from_rows([[0.5, 0.6, 0.7], [0.55, 0.6], [0.9]])
    cases.append(abs(acc_metric(m) - (0.7 + 0.6 + 0.9) / 3.0) <= 1e-12)
    cases.append(abs(fg_metric(m) - (-0.075)) <= 1e-12)
    ok = all(cases)
    return PropertyResult(
        "metric-hand-oracles", ok, f"{sum(cases)}/{len(cases)} hand values matched"
    )


def check_missingness_counts() -> PropertyResult:
    expected = {
        ("text", 0.9): (90, 0), ("image", 0.9): (0, 90), ("both", 0.9): (45, 45),
        ("both", 0.7): (35, 35), ("text", 0.7): (70, 0), ("both", 0.5): (25, 25),
        ("both", 0.3): (15, 15), ("both", 0.1): (5, 5), ("image", 0.1): (0, 10),
    }
    bad = [
        f"{mode}/{rate}" for (mode, rate), counts in expected.items()
        if missing_counts(100, rate, mode) != counts
    ]
    return PropertyResult(
        "missingness-protocol-counts", not bad,
        "all n=100 count tables match" if not bad else f"mismatch at {bad}",
    )


def run_all(seed: int, corrupt_update: bool = False) -> list[PropertyResult]:
    state_cls = _SignFlippedState if corrupt_update else AnalyticState
    return [
        check_theorem1(seed, state_cls=state_cls),
        check_woodbury_q(seed),
        check_batch_split(seed),
        check_order_equivalence(seed),
        check_gradients(seed),
        check_metric_oracles(),
        check_missingness_counts(),
    ]
