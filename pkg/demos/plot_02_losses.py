"""
Transport cost and sparsity
===========================

The regularizer adds the transport cost of the plan to a sparsity term that
rewards rows concentrated on one target.  The gradient reaches the source
embeddings through every Sinkhorn iteration.
"""

import numpy as np

from otreg import Tape, backward, build_cost, ot_loss, sinkhorn

###############################################################################
# Closed forms first: one-hot rows cost nothing in sparsity, uniform rows over
# four targets cost 1 - 1/2.

print(ot_loss(np.eye(4) / 4, 1 - np.eye(4)).floats())
print(ot_loss(np.full((4, 4), 1 / 16), 1 - np.eye(4)).floats())

###############################################################################
# Now a tracked run.  Five noisy copies of three targets are aligned and the
# gradient of L_OT with respect to the sources is read off the tape.

rng = np.random.default_rng(0)
targets = rng.normal(size=(3, 8))
sources = targets[[0, 0, 1, 2, 2]] + 0.3 * rng.normal(size=(5, 8))

tape = Tape()
s = tape.param(sources, "sources")
cost = build_cost(s, targets)
plan = sinkhorn(cost)
loss = ot_loss(plan, cost)
grads = backward(loss.l_ot)
print({k: round(v, 4) for k, v in loss.floats().items()})
print("plan rows peak at targets", plan.value.argmax(axis=1))

###############################################################################
# A small step against the gradient lowers the loss.

stepped = sources - 0.5 * grads["sources"]
cost2 = build_cost(stepped, targets)
print("after one step:", round(ot_loss(sinkhorn(cost2), cost2).floats()["l_ot"], 4))
