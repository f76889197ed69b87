"""Turn a validated configuration into per-seed run records."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine, lqr, mdp, testbeds
from .config import TESTBED_REGIMES, ExperimentConfig
from .errors import ConfigError
from .schedules import burn_in_index


@dataclass
class SeedOutcome:
    seed: int
    records: list
    error: Optional[Exception] = None   # Aborted or NonFinite

    @property
    def ok(self) -> bool:
        return self.error is None


class Experiment:
    """Prepared problem for a config; ``run_seed`` is safe to call from threads."""

    def __init__(self, cfg: ExperimentConfig, backend: Optional[str] = None):
        self.cfg = cfg
        self.backend = backend
        p = cfg.problem
        ptype = cfg.problem_type
        try:
            if ptype == "lqr":
                self.inst = lqr.LqrInstance.from_dict(p["instance"])
                self.dare = lqr.solve_dare(self.inst)
                self.form = p.get("critic_form", "bellman")
                self.init_K = p.get("init_K")
            elif ptype == "mdp":
                self.mdp = mdp.TabularMdp.from_dict(p["mdp"])
                self.theta0 = p.get("theta0")
                self.problem = mdp.make_ac_problem(self.mdp)
            else:
                kw = dict(p.get("testbed", {}))
                self.theta_value = float(kw.pop("theta0", 0.5))
                self.spec = testbeds.make_testbed_spec(TESTBED_REGIMES[ptype], **kw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"problem: {exc}") from None

    @property
    def burn_in(self) -> int:
        if self.cfg.burn_in is not None:
            return int(self.cfg.burn_in)
        return burn_in_index(self.cfg.schedule, self.cfg.n_iters)

    def run_seed(self, seed: int) -> SeedOutcome:
        from .errors import Aborted, NonFinite

        try:
            return SeedOutcome(seed, self._records(seed))
        except Aborted as exc:
            return SeedOutcome(seed, list(exc.records), exc)
        except NonFinite as exc:
            return SeedOutcome(seed, [], exc)

    def _records(self, seed: int) -> list:
        cfg = self.cfg
        ptype = cfg.problem_type
        if ptype == "lqr":
            return lqr.run_lqr_ac(self.inst, cfg.schedule, cfg.n_iters, seed,
                                  init_K=self.init_K, safeguard=cfg.safeguard,
                                  eval_stride=cfg.eval_stride, form=self.form,
                                  backend=self.backend, dare=self.dare)
        if ptype == "mdp":
            rng = np.random.default_rng(seed)
            init = mdp.initial_state(self.mdp, self.theta0, rng)
            return engine.run(self.problem, cfg.schedule, init, cfg.n_iters,
                              mdp.gradient_monitor(self.mdp), rng,
                              eval_stride=cfg.eval_stride)
        theta0 = np.full(self.spec.d, self.theta_value)
        batch = testbeds.simulate(self.spec, cfg.schedule, cfg.n_iters, [seed], theta0=theta0,
                                  stride=cfg.eval_stride, backend=self.backend)
        return batch.records(0, cfg.schedule)
