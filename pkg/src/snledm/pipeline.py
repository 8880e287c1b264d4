"""End-to-end runs: reduction, formulation, solve, and extraction in one place.

The solver works in a clique-permuted ordering internally; everything this
module returns is mapped back to the instance's original sensor ordering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .locate import LocalizationResult, localize
from .model import Instance, PartialEdm, build_partial_edm
from .reduce import (
    CliqueInconsistencyError,
    CliqueSpec,
    clique_face,
    clique_submatrix,
    compose_face,
    find_sensor_cliques,
    permute_for_cliques,
)
from .relax import Formulation
from .solve import SolveResult, SolverConfig, solve


@dataclass
class PreparedProblem:
    formulation: Formulation
    pe_original: PartialEdm
    order: np.ndarray            # original sensor index at each permuted slot
    cliques: list                # CliqueSpec in permuted indexing


@dataclass
class SolvedInstance:
    instance: Instance
    prepared: PreparedProblem
    result: SolveResult
    ybar: np.ndarray             # full Gram matrix, original ordering


def resolve_cliques(pe: PartialEdm, inst: Instance, mode, r):
    """Turn a clique selection mode into validated clique specs.

    ``mode`` is "none", "auto" (greedy search), "file" (the instance's
    explicit clique lists), or an iterable of node lists.  Cliques whose
    distance data is not realizable in dimension r are skipped with a
    warning rather than aborting the solve.
    """
    min_size = r + 2
    if mode == "none":
        specs = []
    elif mode == "auto":
        specs = find_sensor_cliques(pe, min_size)
    elif mode == "file":
        specs = [CliqueSpec(nodes=tuple(c), kind="sensor") for c in inst.cliques]
    else:
        specs = [CliqueSpec(nodes=tuple(c), kind="sensor") for c in mode]
    usable = []
    for spec in specs:
        if len(spec.nodes) < min_size:
            warnings.warn(f"ignoring clique {spec.nodes}: smaller than r + 2")
            continue
        try:
            clique_face(clique_submatrix(pe, spec.nodes), r)
        except CliqueInconsistencyError as exc:
            warnings.warn(f"ignoring clique {spec.nodes}: {exc}")
            continue
        usable.append(spec)
    return usable


def prepare(inst: Instance, kind="quadratic", cliques="none") -> PreparedProblem:
    """Build the reduced formulation for an instance."""
    pe = build_partial_edm(inst)
    specs = resolve_cliques(pe, inst, cliques, inst.r)
    pe_perm, order, specs_perm = permute_for_cliques(pe, specs)
    faces = [clique_face(clique_submatrix(pe_perm, s.nodes), inst.r)
             for s in specs_perm]
    n_free = inst.n - sum(len(s.nodes) for s in specs_perm)
    face = compose_face(n_free, faces, inst.a)
    formulation = Formulation(kind, pe_perm, face)
    return PreparedProblem(formulation=formulation, pe_original=pe,
                           order=order, cliques=specs_perm)


def unpermute_gram(ybar_perm, order, n, m):
    """Undo the clique permutation on a full Gram matrix."""
    full = np.concatenate([np.asarray(order), np.arange(n, n + m)])
    out = np.empty_like(ybar_perm)
    out[np.ix_(full, full)] = ybar_perm
    return out


def solve_instance(inst: Instance, kind="quadratic", cliques="none",
                   config: SolverConfig | None = None) -> SolvedInstance:
    prepared = prepare(inst, kind=kind, cliques=cliques)
    result = solve(prepared.formulation, config)
    ybar_perm = prepared.formulation.ybar(result.point.x, result.point.y)
    ybar = unpermute_gram(ybar_perm, prepared.order, inst.n, inst.m)
    return SolvedInstance(instance=inst, prepared=prepared,
                          result=result, ybar=ybar)


def localize_solution(solved: SolvedInstance, method=2) -> LocalizationResult:
    inst = solved.instance
    return localize(solved.ybar, inst.a, inst.r, solved.prepared.pe_original,
                    x_true=inst.x_true, method=method)
