"""Structured instance families and their JSON representation.

Files hold ``{"n", "m", "matrices", "name"?, "known_ncrank"?, "construction"?}``
with every complex entry written as an ``[re, im]`` pair, which round-trips
doubles exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .operator import MatrixTuple, as_tuple
from .sampling import complex_gaussian, rng_from


@dataclass
class Instance:
    tuple: MatrixTuple
    name: str | None = None
    known_ncrank: int | None = None
    construction: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tuple = as_tuple(self.tuple)
        k = self.known_ncrank
        if k is not None and not 0 <= int(k) <= self.tuple.n:
            raise InvalidInputError(f"known_ncrank={k} outside [0, {self.tuple.n}]")

    @property
    def n(self):
        return self.tuple.n

    @property
    def m(self):
        return self.tuple.m

    @property
    def known_corank(self):
        return None if self.known_ncrank is None else self.n - self.known_ncrank


def _unit(n, i, j):
    E = np.zeros((n, n), dtype=complex)
    E[i, j] = 1
    return E


def identity(n=2) -> Instance:
    _check_n(n)
    return Instance(MatrixTuple([np.eye(n)]), f"identity-{n}", n,
                    {"family": "identity", "n": n})


def diagonal_pair(n=2) -> Instance:
    """``(E_11, ..., E_nn)``; already doubly stochastic, full nc-rank."""
    _check_n(n)
    return Instance(MatrixTuple([_unit(n, i, i) for i in range(n)]), f"diagonal-pair-{n}", n,
                    {"family": "diagonal-pair", "n": n})


def zero_block(n, k, l, m=3, seed=0) -> Instance:
    """Generic tuple vanishing on the upper-left ``(n - l) x k`` block.

    ``U = span(e_1..e_k)`` is mapped into ``span(e_{n-l+1}..e_n)``, forcing
    corank ``>= k - l``; with Gaussian entries elsewhere equality holds
    generically.
    """
    _check_n(n)
    if not (0 <= l < k <= n) or m < 1:
        raise InvalidInputError(f"zero-block needs 0 <= l < k <= n and m >= 1, got "
                                f"n={n}, k={k}, l={l}, m={m}")
    A = complex_gaussian(rng_from(seed), (m, n, n))
    A[:, : n - l, :k] = 0
    return Instance(MatrixTuple(A), f"zero-block-{n}-{k}-{l}", n - (k - l),
                    {"family": "zero-block", "n": n, "k": k, "l": l, "m": m, "seed": seed})


def skew3() -> Instance:
    """``(E12 - E21, E13 - E31, E23 - E32)``: commutative rank 2, nc-rank 3."""
    A = [_unit(3, 0, 1) - _unit(3, 1, 0), _unit(3, 0, 2) - _unit(3, 2, 0),
         _unit(3, 1, 2) - _unit(3, 2, 1)]
    return Instance(MatrixTuple(A), "skew3", 3, {"family": "skew3"})


def random_full(n, m, seed=0) -> Instance:
    _check_n(n)
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    A = complex_gaussian(rng_from(seed), (m, n, n))
    return Instance(MatrixTuple(A), f"random-full-{n}-{m}-{seed}", None,
                    {"family": "random-full", "n": n, "m": m, "seed": seed})


def e1() -> Instance:
    return Instance(MatrixTuple([_unit(2, 0, 0)]), "E1", 1, {"family": "E1"})


def e4(seed=0) -> Instance:
    inst = zero_block(3, 2, 1, seed=seed)
    inst.name = "E4"
    return inst


def _check_n(n):
    if int(n) < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")


FAMILIES = {
    "identity": identity,
    "diagonal-pair": diagonal_pair,
    "zero-block": zero_block,
    "skew3": skew3,
    "random-full": random_full,
}


def generate(family, **params) -> Instance:
    try:
        fn = FAMILIES[family]
    except KeyError:
        raise InvalidInputError(f"unknown family {family!r}; "
                                f"choose from {sorted(FAMILIES)}") from None
    try:
        return fn(**params)
    except TypeError as err:
        raise InvalidInputError(f"bad parameters for {family}: {err}") from None


# ------------------------------------------------------------------------ JSON


def to_dict(inst: Instance) -> dict:
    A = inst.tuple.mats
    out = {"n": inst.n, "m": inst.m,
           "matrices": np.stack([A.real, A.imag], axis=-1).tolist()}
    if inst.name is not None:
        out["name"] = inst.name
    if inst.known_ncrank is not None:
        out["known_ncrank"] = int(inst.known_ncrank)
    if inst.construction:
        out["construction"] = inst.construction
    return out


def dumps(inst: Instance) -> str:
    return json.dumps(to_dict(inst))


def from_dict(d) -> Instance:
    if not isinstance(d, dict):
        raise InvalidInputError("instance must be a JSON object")
    for key in ("n", "m", "matrices"):
        if key not in d:
            raise InvalidInputError(f"instance is missing field {key!r}")
    n, m = d["n"], d["m"]
    if not isinstance(n, int) or not isinstance(m, int) or n < 1 or m < 1:
        raise InvalidInputError("n and m must be positive integers")
    try:
        raw = np.asarray(d["matrices"], dtype=float)
    except (TypeError, ValueError):
        raise InvalidInputError("matrices must be nested numeric [re, im] pairs") from None
    if raw.shape != (m, n, n, 2):
        raise InvalidInputError(f"matrices have shape {raw.shape}, expected {(m, n, n, 2)}")
    A = raw[..., 0] + 1j * raw[..., 1]
    return Instance(MatrixTuple(A), d.get("name"), d.get("known_ncrank"),
                    d.get("construction") or {})


def loads(text: str) -> Instance:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise InvalidInputError(f"invalid JSON at line {err.lineno}, column {err.colno}: "
                                f"{err.msg}") from None
    return from_dict(d)


def load(path) -> Instance:
    with open(path) as fp:
        return loads(fp.read())


def save(inst: Instance, path):
    with open(path, "w") as fp:
        fp.write(dumps(inst) + "\n")
