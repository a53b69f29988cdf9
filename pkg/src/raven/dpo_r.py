"""Preference losses over supplied log-probabilities: Bradley-Terry reward
modelling, the theta-weighted ensemble reward, and DPO-R, a DPO variant whose
chosen/rejected coefficients come from the ensemble's preference probability.

Pairs store their two responses in slots 0 and 1 (the JSON ``[c, r]`` order);
in the file, ``weak_rewards`` holds one list of m rewards per response.
Which slot is treated as chosen is decided by the ensemble reward, so a pair
whose stored order disagrees with the ensemble is evaluated swapped.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SimplexWeights
from .optim import project_simplex, sgd_step_theta


class PreferenceFormatError(ValueError):
    """Malformed preference file; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def sigmoid(x: float) -> float:
    # exp(-softplus(-x)) never overflows
    return math.exp(-softplus(-x))


@dataclass(frozen=True)
class PreferencePair:
    id: str
    logp_policy_c: float
    logp_policy_r: float
    logp_ref_c: float
    logp_ref_r: float
    weak_rewards: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = (self.logp_policy_c, self.logp_policy_r, self.logp_ref_c, self.logp_ref_r)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pair {self.id}: non-finite log-probability")
        if any(v > 0 for v in vals):
            # length-normalised scores can legitimately exceed 0
            warnings.warn(f"pair {self.id}: positive log-probability", stacklevel=3)
        r = np.array(self.weak_rewards, dtype=np.float64)
        if r.ndim == 1 and r.size == 2:
            r = r[None, :]
        if r.ndim != 2 or r.shape[1] != 2 or r.shape[0] == 0:
            raise ValueError(f"pair {self.id}: weak_rewards must be m x 2, got shape {r.shape}")
        if not np.isfinite(r).all():
            raise ValueError(f"pair {self.id}: non-finite reward")
        r.setflags(write=False)
        object.__setattr__(self, "weak_rewards", r)

    @property
    def m(self) -> int:
        return self.weak_rewards.shape[0]

    def swapped(self) -> PreferencePair:
        return PreferencePair(self.id, self.logp_policy_r, self.logp_policy_c,
                              self.logp_ref_r, self.logp_ref_c, self.weak_rewards[:, ::-1])


@dataclass(frozen=True)
class BetaPair:
    beta_c: float
    beta_r: float

    def __post_init__(self):
        # open interval mathematically; a reward gap past ~37 rounds beta_c to 1.0
        if not (0 <= self.beta_c <= 1 and 0 <= self.beta_r <= 1):
            raise ValueError(f"betas must lie in [0, 1], got {self.beta_c}, {self.beta_r}")
        if abs(self.beta_c + self.beta_r - 1) > 1e-12:
            raise ValueError("beta_c + beta_r must equal 1")


@dataclass(frozen=True)
class Assignment:
    betas: BetaPair
    chosen: int
    tie: bool

    @property
    def rejected(self) -> int:
        return 1 - self.chosen


def reward_model_loss(r_c: float, r_r: float) -> float:
    """Bradley-Terry negative log-likelihood -log sigmoid(r_c - r_r)."""
    if not (math.isfinite(r_c) and math.isfinite(r_r)):
        raise ValueError("rewards must be finite")
    return softplus(-(r_c - r_r))


def _theta_vec(theta, m: int) -> np.ndarray:
    """Weights on the closed simplex; vertices such as (1, 0) are allowed here."""
    if theta is None:
        return SimplexWeights.uniform(m).theta
    t = np.asarray(getattr(theta, "theta", theta), dtype=np.float64).reshape(-1)
    if not np.isfinite(t).all() or (t < 0).any() or abs(t.sum() - 1) > 1e-9:
        raise ValueError(f"theta must lie on the simplex, got {t}")
    if t.size != m:
        raise ValueError(f"{t.size} weights for {m} weak reward models")
    return t


def ensemble_reward(weak_rewards, theta=None) -> tuple[float, float]:
    r = np.asarray(weak_rewards, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 2:
        raise ValueError(f"weak_rewards must be m x 2, got shape {r.shape}")
    out = _theta_vec(theta, r.shape[0]) @ r
    return float(out[0]), float(out[1])


def compute_betas(r_ens_1: float, r_ens_2: float) -> Assignment:
    """Chosen is the higher ensemble reward (slot 0 on a tie, flagged);
    beta_c is the Bradley-Terry probability that chosen beats rejected."""
    if not (math.isfinite(r_ens_1) and math.isfinite(r_ens_2)):
        raise ValueError("rewards must be finite")
    tie = r_ens_1 == r_ens_2
    chosen = 0 if r_ens_1 >= r_ens_2 else 1
    r_c, r_r = (r_ens_1, r_ens_2) if chosen == 0 else (r_ens_2, r_ens_1)
    beta_c = sigmoid(r_c - r_r)
    beta_r = sigmoid(r_r - r_c)
    return Assignment(BetaPair(beta_c, beta_r), chosen, tie)


@dataclass
class DPORGrad:
    loss: float
    d_policy_c: float
    d_policy_r: float
    d_ref_c: float
    d_ref_r: float


def dpo_r_loss(pair: PreferencePair, betas: BetaPair, grad: bool = False, chosen: int = 0):
    """-log sigmoid(beta_c * (pc - rc) - beta_r * (pr - rr)).

    ``chosen`` picks which stored slot plays y_c. With ``grad`` the result is a
    DPORGrad whose derivatives refer to the stored slots of ``pair``.
    """
    if chosen not in (0, 1):
        raise ValueError("chosen must be 0 or 1")
    p = pair if chosen == 0 else pair.swapped()
    a = p.logp_policy_c - p.logp_ref_c
    b = p.logp_policy_r - p.logp_ref_r
    u = betas.beta_c * a - betas.beta_r * b
    loss = softplus(-u)
    if not grad:
        return loss
    s = sigmoid(-u)
    d_pc, d_pr = -s * betas.beta_c, s * betas.beta_r
    if chosen == 1:
        d_pc, d_pr = d_pr, d_pc
    return DPORGrad(loss, d_pc, d_pr, -d_pc, -d_pr)


def dpo_loss(pair: PreferencePair, beta: float) -> float:
    """Standard DPO with a single temperature, slot 0 as chosen."""
    h = (pair.logp_policy_c - pair.logp_ref_c) - (pair.logp_policy_r - pair.logp_ref_r)
    return softplus(-beta * h)


def pair_loss_theta_grad(pair: PreferencePair, theta=None) -> tuple[float, np.ndarray, Assignment]:
    """DPO-R loss of one pair and its gradient with respect to theta.

    The chosen slot is held fixed at its current value; the gradient flows
    through beta_c = sigmoid(r_ens_c - r_ens_r) only.
    """
    t = _theta_vec(theta, pair.m)
    asg = compute_betas(*ensemble_reward(pair.weak_rewards, t))
    p = pair if asg.chosen == 0 else pair.swapped()
    a = p.logp_policy_c - p.logp_ref_c
    b = p.logp_policy_r - p.logp_ref_r
    bc, br = asg.betas.beta_c, asg.betas.beta_r
    u = bc * a - br * b
    dl_dbc = -sigmoid(-u) * (a + b)
    diff = p.weak_rewards[:, 0] - p.weak_rewards[:, 1]
    return softplus(-u), dl_dbc * bc * br * diff, asg


@dataclass
class DPORReport:
    theta: list[float]
    mean_loss: float
    pairs: list[dict]

    def to_dict(self) -> dict:
        return {"theta": self.theta, "mean_loss": self.mean_loss, "pairs": self.pairs}


def evaluate_pairs(pairs, theta=None) -> DPORReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no preference pairs")
    m = pairs[0].m
    if any(p.m != m for p in pairs):
        raise ValueError("pairs disagree on the number of weak reward models")
    t = _theta_vec(theta, m)
    rows = []
    for p in pairs:
        r1, r2 = ensemble_reward(p.weak_rewards, t)
        asg = compute_betas(r1, r2)
        rows.append({
            "id": p.id, "loss": dpo_r_loss(p, asg.betas, chosen=asg.chosen),
            "beta_c": asg.betas.beta_c, "beta_r": asg.betas.beta_r,
            "chosen": asg.chosen, "rejected": asg.rejected, "tie": asg.tie,
            "r_ens": [r1, r2],
        })
    mean = math.fsum(r["loss"] for r in rows) / len(rows)
    return DPORReport(t.tolist(), mean, rows)


def fit_theta(pairs, lr_w: float = 0.01, steps: int = 100, theta=None) -> tuple[SimplexWeights, list[float]]:
    """Projected gradient descent on theta for the mean DPO-R loss over ``pairs``.

    Returns the final weights and the mean loss seen before each step.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no preference pairs")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    w = project_simplex(_theta_vec(theta, pairs[0].m))
    history = []
    for _ in range(steps):
        total, g = 0.0, np.zeros(w.m)
        for p in pairs:
            loss, gp, _ = pair_loss_theta_grad(p, w)
            total += loss
            g += gp
        history.append(total / len(pairs))
        w = project_simplex(sgd_step_theta(w, g / len(pairs), lr_w))
    return w, history


def _parse_pair(obj, lineno: int) -> PreferencePair:
    if not isinstance(obj, dict):
        raise PreferenceFormatError("expected a JSON object", lineno)
    missing = {"id", "logp_policy", "logp_ref", "weak_rewards"} - obj.keys()
    if missing:
        raise PreferenceFormatError(f"missing keys {sorted(missing)}", lineno)
    try:
        pc, pr = (float(v) for v in obj["logp_policy"])
        rc, rr = (float(v) for v in obj["logp_ref"])
        # one list per response, each holding the m weak rewards
        rewards = np.asarray(obj["weak_rewards"], dtype=np.float64)
        if rewards.ndim != 2 or rewards.shape[0] != 2:
            raise ValueError(f"weak_rewards must be two lists of m rewards, got shape {rewards.shape}")
        rewards = rewards.T
        return PreferencePair(str(obj["id"]), pc, pr, rc, rr, rewards)
    except (TypeError, ValueError) as exc:
        raise PreferenceFormatError(str(exc), lineno) from None


def load_pairs(path) -> list[PreferencePair]:
    """Read JSON lines; blank lines are skipped, an empty file is an error."""
    pairs = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PreferenceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            pairs.append(_parse_pair(obj, lineno))
    if not pairs:
        raise PreferenceFormatError(f"{path} contains no preference pairs")
    m = pairs[0].m
    for p in pairs:
        if p.m != m:
            raise PreferenceFormatError(f"pair {p.id} has {p.m} reward models, expected {m}")
    return pairs
