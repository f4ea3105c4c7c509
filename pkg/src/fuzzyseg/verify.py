"""Invariant and gradient check suite.

Each check is a pure function returning (ok, detail). The CLI `verify`
subcommand runs them all with pass/fail lines; the acceptance tests call
the same functions so the two views can never drift apart. Expected values
come from independent oracles (hand formulas, brute-force recomputation,
central differences), never from the code under test.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .losses import (
    compute_prototypes,
    contrastive_loss,
    prototype_selection,
    supervised_ce,
    total_loss,
    unsupervised_kl,
)
from .metrics import ConfusionMatrix, iou_per_class, mean_iou
from .model import SegNetConfig, forward, init_params, project_embeddings
from .pseudolabel import fuzzy_argmax, fuzzy_labels, normalized_entropy, pixel_weights
from .rebalance import class_weights
from .teacher_student import ParameterStore, complementary_channel_masks, ema_update
from .tensorkit import Tensor, finite_diff_grad_check, softmax

__all__ = [
    "check_fuzzy_suite",
    "check_entropy_suite",
    "check_rebalance_oracle",
    "check_gradient_gate",
    "check_kl_properties",
    "check_ema_contraction",
    "check_miou_oracle",
    "ALL_CHECKS",
    "run_all",
]

Check = Callable[[], tuple[bool, str]]


# -- 1: fuzzy label properties -------------------------------------------


def check_fuzzy_suite(n_maps: int = 1000, seed: int = 7) -> tuple[bool, str]:
    """Support, mass, idempotence and the hand case over random maps."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    for trial in range(n_maps):
        c = int(rng.integers(3, 9))
        k = int(rng.integers(1, c + 1))
        h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        probs = rng.dirichlet(np.ones(c), size=(h, w)).transpose(2, 0, 1)
        fuzzy = fuzzy_labels(probs, k)

        support = fuzzy > 0.0
        n_support = support.sum(axis=0)
        if np.any(n_support > k):
            return False, f"trial {trial}: support larger than k"
        # every supported value must be >= every unsupported value
        min_in = np.where(support, probs, np.inf).min(axis=0)
        max_out = np.where(support, -np.inf, probs).max(axis=0)
        if np.any(min_in < max_out - 1e-15):
            return False, f"trial {trial}: support is not a top-{k} set"
        if np.max(np.abs(fuzzy.sum(axis=0) - 1.0)) > 1e-9:
            return False, f"trial {trial}: mass deviates from 1"
        again = fuzzy_labels(fuzzy, k)
        if np.max(np.abs(again - fuzzy)) > 1e-12:
            return False, f"trial {trial}: not idempotent"

    hand = fuzzy_labels(np.array([0.5, 0.3, 0.2]).reshape(3, 1, 1), 2)[:, 0, 0]
    expected = np.array([0.5 / 0.8, 0.3 / 0.8, 0.0])
    if np.max(np.abs(hand - expected)) > 1e-12:
        return False, f"hand case mismatch: {hand} vs {expected}"
    return True, f"{n_maps} maps in {time.perf_counter() - t0:.1f}s"


# -- 2: entropy and pixel weights ----------------------------------------


def check_entropy_suite(n_dists: int = 100_000, seed: int = 11) -> tuple[bool, str]:
    t0 = time.perf_counter()
    for c in (2, 3, 5, 8):
        uniform = np.full((c, 1, 1), 1.0 / c)
        if abs(normalized_entropy(uniform)[0, 0] - 1.0) > 1e-12:
            return False, f"H(uniform) != 1 for C={c}"
        onehot = np.zeros((c, 1, 1))
        onehot[0] = 1.0
        if abs(normalized_entropy(onehot)[0, 0]) > 1e-12:
            return False, f"H(one-hot) != 0 for C={c}"

    half = normalized_entropy(np.array([0.5, 0.5, 0.0, 0.0]).reshape(4, 1, 1))[0, 0]
    if abs(half - 0.5) > 1e-12:
        return False, f"H([.5,.5,0,0]) = {half}, expected 0.5"

    rng = np.random.default_rng(seed)
    remaining = n_dists
    while remaining > 0:
        block = min(remaining, 10_000)
        c = int(rng.integers(2, 9))
        probs = rng.dirichlet(np.ones(c), size=block).T.reshape(c, block, 1)
        h = normalized_entropy(probs)
        if h.min() < 0.0 or h.max() > 1.0:
            return False, "entropy left [0, 1]"
        remaining -= block

    # threshold composition, exact
    h = rng.random((64, 64))
    tau = 0.7
    w = pixel_weights(h, tau)
    manual = np.where(h <= tau, 1.0 - h, 0.0)
    if not np.array_equal(w, manual):
        return False, "threshold composite rule differs from the direct formula"
    if pixel_weights(np.array([[0.8]]), 0.7)[0, 0] != 0.0:
        return False, "H=0.8, tau=0.7 should give weight 0"
    if abs(pixel_weights(np.array([[0.6]]), 0.7)[0, 0] - 0.4) > 1e-12:
        return False, "H=0.6, tau=0.7 should give weight 0.4"
    return True, f"{n_dists} distributions in {time.perf_counter() - t0:.1f}s"


# -- 3: rebalance against brute force ------------------------------------


def _median_by_hand(values: np.ndarray) -> float:
    ordered = sorted(float(v) for v in values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def check_rebalance_oracle(n_vectors: int = 1000, seed: int = 13) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    eps = 1e-6
    for trial in range(n_vectors):
        c = int(rng.integers(2, 11))
        freq = rng.integers(0, 1000, size=c)
        got = class_weights(freq, eps).weights
        med = _median_by_hand(freq)
        oracle = np.array([med / (float(f) + eps) for f in freq])
        if not np.array_equal(got, oracle):
            return False, f"trial {trial}: weights differ from brute force"
        # monotonicity: rarer class never gets a smaller weight
        order = np.argsort(freq)
        if np.any(np.diff(got[order]) > 0.0):
            return False, f"trial {trial}: weights not antitone in frequency"

    hand = class_weights(np.array([100, 10, 1]), eps).weights
    expected = np.array([10.0 / (100 + eps), 10.0 / (10 + eps), 10.0 / (1 + eps)])
    if np.max(np.abs(hand - expected) / expected) > 1e-5:
        return False, f"hand case mismatch: {hand}"
    zero = class_weights(np.array([0, 1000]), eps).weights
    if abs(zero[0] - 500.0 / eps) > 1e-3 or abs(zero[1] - 500.0 / (1000 + eps)) > 1e-9:
        return False, f"zero-frequency case mismatch: {zero}"
    capped = class_weights(np.array([0, 1000]), eps, max_weight=20.0).weights
    if capped[0] != 20.0:
        return False, "cap not applied to the zero-frequency class"
    return True, f"{n_vectors} vectors in {time.perf_counter() - t0:.1f}s"


# -- 4: gradient gate through the full network ---------------------------


def _build_instance(rng: np.random.Generator):
    """One random tiny instance; returns (store, with_param, losses, fd_margin).

    fd_margin is the smallest distance from any relu pre-activation to its
    kink, and from any selected embedding norm to the contrastive floor,
    measured at the base point. Central differences step 1e-5 off the base
    point, so instances with a tiny margin produce false finite-difference
    disagreements and get redrawn by the caller. Biases are randomized
    because zero biases park dead receptive fields exactly on the kink.
    """
    c = int(rng.integers(2, 5))
    cfg = SegNetConfig(n_classes=c, in_channels=3, base_width=4, depth=2, embed_dim=4)
    size = 8
    store = init_params(cfg, int(rng.integers(2 ** 31)), zero_classifier=False)
    for name, tensor in store.entries.items():
        if name.endswith(".bias"):
            tensor.data[...] = 0.1 * rng.standard_normal(tensor.data.shape)

    x_l = rng.random((1, 3, size, size))
    y_l = rng.integers(0, c, size=(1, size, size))
    y_l[0, 0, 0] = 255  # keep the ignore path on the graph

    # teacher-side constants: confident random distributions
    t_logits = 3.0 * rng.standard_normal((2, c, size, size))
    t_probs = softmax(Tensor(t_logits), axis=1).data
    fuzzy = np.stack([fuzzy_labels(t_probs[i], min(2, c)) for i in range(2)])
    weight = np.stack([pixel_weights(normalized_entropy(t_probs[i]), 1.0)
                       for i in range(2)])
    valid = np.ones((2, size, size), dtype=bool)
    class_w = class_weights(
        np.bincount(np.stack([fuzzy_argmax(fuzzy[i]) for i in range(2)]).ravel(),
                    minlength=c), max_weight=20.0).weights
    x_s = rng.random((2, 3, size, size))
    m0, m1 = complementary_channel_masks(1, cfg.encoder_width, 0.5, int(rng.integers(2 ** 31)))
    fmask = np.concatenate([m0, m1], axis=0)
    assign = np.stack([fuzzy_argmax(fuzzy[i]) for i in range(2)])
    sel = prototype_selection(weight, valid, 0.5)

    def with_param(name: str, x: Tensor) -> ParameterStore:
        entries = {n: (x if n == name else Tensor(t.data)) for n, t in store.entries.items()}
        return ParameterStore(entries=entries, role="student")

    def loss_s(params: ParameterStore) -> Tensor:
        logits, _ = forward(params, x_l, cfg)
        return supervised_ce(softmax(logits, axis=1), y_l)[0]

    def loss_u(params: ParameterStore) -> Tensor:
        logits, _ = forward(params, x_s, cfg, feature_mask=fmask)
        return unsupervised_kl(fuzzy, softmax(logits, axis=1), weight, valid, class_w)[0]

    # prototypes are recomputed per step from detached embeddings, so the
    # differentiable path holds them fixed at the base point
    _, feats0 = forward(store, x_s, cfg, feature_mask=fmask)
    emb0 = project_embeddings(store, feats0, cfg, (size, size))
    protos0 = compute_prototypes(emb0, assign, sel, c)

    def loss_c(params: ParameterStore) -> Tensor:
        _, feats = forward(params, x_s, cfg, feature_mask=fmask)
        emb = project_embeddings(params, feats, cfg, (size, size))
        return contrastive_loss(emb, assign, sel, protos0)[0]

    def loss_total_fn(params: ParameterStore) -> Tensor:
        return total_loss(loss_s(params), loss_u(params), loss_c(params), 0.5, 0.1)

    preacts: list[np.ndarray] = []
    forward(store, x_l, cfg, preact_log=preacts)
    _, feats_m = forward(store, x_s, cfg, feature_mask=fmask, preact_log=preacts)
    project_embeddings(store, feats_m, cfg, (size, size), preact_log=preacts)
    kink_margin = min(float(np.min(np.abs(p))) for p in preacts)
    norms = np.linalg.norm(emb0.data, axis=1)[sel]
    floor_margin = float(np.min(np.abs(norms - 1e-3))) if norms.size else np.inf
    fd_margin = min(kink_margin, floor_margin)

    named = {"loss_s": loss_s, "loss_u": loss_u, "loss_c": loss_c,
             "loss_total": loss_total_fn}
    return store, with_param, named, fd_margin


def _loss_functions(rng: np.random.Generator, min_margin: float = 3e-4):
    for _ in range(100):
        store, with_param, named, margin = _build_instance(rng)
        if margin > min_margin:
            return store, with_param, named
    raise RuntimeError("could not draw an instance clear of the relu kinks")


def check_gradient_gate(n_seeds: int = 10, tolerance: float = 1e-4,
                        seed: int = 17) -> tuple[bool, str]:
    """Central-difference check of every loss through the full tiny network."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(n_seeds):
        store, with_param, named = _loss_functions(rng)
        for loss_name, loss_fn in named.items():
            for pname, tensor in store.entries.items():
                err = finite_diff_grad_check(
                    lambda x, f=loss_fn, n=pname: f(with_param(n, x)),
                    tensor.data, step=1e-5)
                worst = max(worst, err)
                if err > tolerance:
                    return False, (f"seed {trial}, {loss_name}, {pname}: "
                                   f"rel err {err:.2e} > {tolerance:.0e}")
    return True, (f"{n_seeds} seeds, worst rel err {worst:.2e} "
                  f"in {time.perf_counter() - t0:.0f}s")


# -- 5: KL properties ----------------------------------------------------


def check_kl_properties(n_trials: int = 100, seed: int = 19) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for trial in range(n_trials):
        c = int(rng.integers(2, 7))
        h = w = int(rng.integers(2, 7))
        t_probs = rng.dirichlet(np.ones(c), size=(h, w)).transpose(2, 0, 1)
        k = int(rng.integers(1, c + 1))
        fuzzy = fuzzy_labels(t_probs, k)[None]
        student = rng.dirichlet(np.ones(c), size=(h, w)).transpose(2, 0, 1)[None]
        weight = rng.random((1, h, w))
        valid = rng.random((1, h, w)) < 0.8
        valid[0, 0, 0] = True
        freqs = np.bincount(fuzzy_argmax(fuzzy[0]).ravel(), minlength=c)
        class_w = class_weights(freqs).weights

        loss, _ = unsupervised_kl(fuzzy, Tensor(student), weight, valid, class_w)
        if loss.item() < -1e-9:
            return False, f"trial {trial}: L_u = {loss.item():.3e} < -1e-9"

        at_target, _ = unsupervised_kl(fuzzy, Tensor(fuzzy.copy()), weight, valid, class_w)
        if abs(at_target.item()) > 1e-9:
            return False, f"trial {trial}: L_u at the fuzzy target is {at_target.item():.3e}"

        # perturbing the student away from the target never helps
        mix = 0.999 * fuzzy + 0.001 * rng.dirichlet(np.ones(c), size=(h, w)).transpose(2, 0, 1)[None]
        perturbed, _ = unsupervised_kl(fuzzy, Tensor(mix), weight, valid, class_w)
        if perturbed.item() < at_target.item() - 1e-12:
            return False, f"trial {trial}: perturbation decreased the loss"

        # plain mean KL when K=C and every weight is 1
        full = fuzzy_labels(t_probs, c)[None]
        ones = np.ones((1, h, w))
        plain, _ = unsupervised_kl(full, Tensor(student), ones,
                                   np.ones((1, h, w), dtype=bool), np.ones(c))
        ratio = full[0] / np.maximum(student[0], 1e-12)
        manual = float(np.mean((full[0] * np.log(ratio)).sum(axis=0)))
        if abs(plain.item() - manual) > 1e-9:
            return False, f"trial {trial}: plain KL mismatch {plain.item()} vs {manual}"
    return True, f"{n_trials} trials"


# -- 6: EMA contraction --------------------------------------------------


def check_ema_contraction(n_steps: int = 100, alpha: float = 0.99,
                          seed: int = 23) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    shapes = [(4, 3, 3, 3), (4,), (8, 4)]
    teacher = ParameterStore({f"p{i}": Tensor(rng.standard_normal(s))
                              for i, s in enumerate(shapes)}, role="teacher")
    student = ParameterStore({f"p{i}": Tensor(rng.standard_normal(s))
                              for i, s in enumerate(shapes)}, role="student")
    start = {n: teacher.entries[n].data.copy() for n in teacher.entries}
    for step in range(1, n_steps + 1):
        ema_update(teacher, student, alpha)
        factor = alpha ** step
        for name in teacher.entries:
            expected = factor * (start[name] - student.entries[name].data) \
                + student.entries[name].data
            dev = np.max(np.abs(teacher.entries[name].data - expected))
            if dev > 1e-12:
                return False, f"step {step}: deviation {dev:.2e} from closed form"

    single_t = ParameterStore({"w": Tensor(np.array([1.0]))}, role="teacher")
    single_s = ParameterStore({"w": Tensor(np.array([0.0]))}, role="student")
    ema_update(single_t, single_s, 0.99)
    if abs(single_t.entries["w"].data[0] - 0.99) > 1e-15:
        return False, "hand case: expected exactly 0.99"
    return True, f"{n_steps} steps within 1e-12"


# -- 7: mIoU against brute force -----------------------------------------


def check_miou_oracle(n_maps: int = 100, seed: int = 29) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for trial in range(n_maps):
        c = int(rng.integers(2, 7))
        h = w = int(rng.integers(3, 12))
        truth = rng.integers(0, c, size=(h, w))
        pred = rng.integers(0, c, size=(h, w))
        truth[rng.random((h, w)) < 0.1] = 255  # sprinkle ignored pixels

        cm = ConfusionMatrix(c)
        cm.update(truth, pred, ignore_value=255)
        iou, present = iou_per_class(cm)

        keep = truth != 255
        oracle, oracle_present = [], []
        for cls in range(c):
            t = keep & (truth == cls)
            p = keep & (pred == cls)
            union = (t | p).sum()
            oracle_present.append(union > 0)
            oracle.append((t & p).sum() / union if union else np.nan)
        if not np.array_equal(present, np.array(oracle_present)):
            return False, f"trial {trial}: presence mask differs"
        got = iou[present]
        want = np.array(oracle)[present]
        if not np.array_equal(got, want):
            return False, f"trial {trial}: IoU differs from brute force"
        if present.any() and mean_iou(cm) != float(want.mean()):
            return False, f"trial {trial}: mean differs"

    cm = ConfusionMatrix(2)
    cm.counts[:] = [[3, 1], [2, 4]]
    iou, _ = iou_per_class(cm)
    if abs(iou[0] - 0.5) > 1e-12 or abs(iou[1] - 4.0 / 7.0) > 1e-12:
        return False, f"hand case IoU mismatch: {iou}"
    if abs(mean_iou(cm) - (0.5 + 4.0 / 7.0) / 2.0) > 1e-12:
        return False, "hand case mean mismatch"
    return True, f"{n_maps} maps"


ALL_CHECKS: list[tuple[str, Check]] = [
    ("fuzzy_suite", check_fuzzy_suite),
    ("entropy_suite", check_entropy_suite),
    ("rebalance_oracle", check_rebalance_oracle),
    ("gradient_gate", check_gradient_gate),
    ("kl_properties", check_kl_properties),
    ("ema_contraction", check_ema_contraction),
    ("miou_oracle", check_miou_oracle),
]


def run_all(verbose: bool = True) -> bool:
    """Run every check; prints one PASS/FAIL line each; True if all pass."""
    all_ok = True
    for name, check in ALL_CHECKS:
        ok, detail = check()
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
