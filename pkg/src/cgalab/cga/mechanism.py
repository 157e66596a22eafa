"""Trained CGA as a mechanism handle: greedy Generator allocation + PaymentNet prices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Allocation, AuctionInstance, Outcome
from ..oracle import Mechanism
from ..worldsim import WorldModel
from .model import AuctionBatch, CGAModel, payment_inputs
from .regret import mechanism_ctr
from .training import Variant


@dataclass
class BatchOutcome:
    allocs: np.ndarray        # (B, k)
    payments: np.ndarray      # (B, k) per click
    ctrs: np.ndarray          # (B, k) true CTR when a world is attached, else mechanism CTR
    model_ctrs: np.ndarray    # (B, k) Evaluator (or alpha) CTR the mechanism itself sees
    Z: np.ndarray             # (B, k) chosen-ad probabilities

    def outcome(self, b: int) -> Outcome:
        return Outcome(Allocation(self.allocs[b]), self.payments[b], self.ctrs[b])


class CGAMechanism(Mechanism):
    def __init__(self, model: CGAModel, variant: Variant = Variant(), world: Optional[WorldModel] = None,
                 name: str = "cga"):
        self.model, self.variant, self.world, self.name = model, variant, world, name

    def run_batch(self, batch: AuctionBatch) -> BatchOutcome:
        m, v = self.model, self.variant
        phi = batch.phi(use_virtual_value=v.use_virtual_value)
        trace = m.generator(batch.X, batch.U, batch.bids, phi, pctr=batch.pctr)
        A = trace.allocs
        theta = mechanism_ctr(m, batch.X, batch.U, batch.bids, batch.pctr, A, v.use_evaluator)
        pi = payment_inputs(trace.H, A, batch.bids, trace.Z, theta)
        win_bids = np.take_along_axis(batch.bids, A, axis=1)
        payments = m.payment(pi, win_bids.reshape(-1)).data.reshape(A.shape)
        ctrs = theta if self.world is None else self.world.ctr_batch(batch.X, batch.U, A)
        return BatchOutcome(A, payments, ctrs, theta, trace.Z)

    def run(self, inst: AuctionInstance) -> Outcome:
        return self.run_batch(AuctionBatch.from_instances([inst.mechanism_view()])).outcome(0)
