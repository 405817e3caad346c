#!/usr/bin/env python3
"""Dynamic routing up close, plus the parameter budgets of every variant.

Builds a four-vote toy where one class capsule receives aligned votes and
the other scattered ones, and shows the couplings concentrating on the
aligned capsule over the iterations.  Then prints exact parameter counts
for full weights vs shared weights and full vs reduced decoder, and checks
the sharing equivalence on a real forward pass.
"""

import numpy as np

from capstrain.model import (
    CapsNetConfig,
    config_for_scale,
    count_parameters,
    decoder_parameters,
    dynamic_routing,
    expand_shared_weights,
    forward_encoder,
    make_model,
)
from capstrain.tensor import Tensor

print("=== routing by agreement on a toy ===")
rng = np.random.default_rng(0)
u_hat = np.zeros((1, 4, 1, 2, 4))
u_hat[0, :, 0, 0, :] = np.tile([0.8, 0.1, -0.2, 0.5], (4, 1))  # aligned votes for capsule 0
u_hat[0, :, 0, 1, :] = rng.uniform(-1, 1, size=(4, 4))  # scattered votes for capsule 1
bias = Tensor(np.zeros((1, 2, 4, 1)))

for iterations in (1, 2, 3):
    v = dynamic_routing(Tensor(u_hat), bias, iterations).data
    norms = np.linalg.norm(v[0], axis=-1)
    print(f"  {iterations} iteration(s): capsule norms = {np.round(norms, 4)}")
print("  the capsule with agreeing votes strengthens while the other fades")

print("\n=== parameter budgets (28x28 input, 10 classes) ===")
variants = [
    ("full weights, full decoder", CapsNetConfig()),
    ("shared weights, full decoder", CapsNetConfig(weight_sharing=True)),
    ("full weights, reduced decoder", CapsNetConfig(reduced_decoder=True)),
    ("shared weights, reduced decoder", CapsNetConfig(weight_sharing=True, reduced_decoder=True)),
]
base = count_parameters(CapsNetConfig())
for name, cfg in variants:
    total = count_parameters(cfg)
    print(f"  {name:<32} {total:>10,}  ({(base - total) / base:.1%} fewer than baseline)")
print(f"  decoder alone: full {decoder_parameters(CapsNetConfig()):,}, "
      f"reduced {decoder_parameters(CapsNetConfig(reduced_decoder=True)):,}")

print("\n=== weight-sharing equivalence ===")
shared = make_model(config_for_scale("desk", weight_sharing=True), seed=3)
full = expand_shared_weights(shared)
images = Tensor(rng.uniform(0, 1, size=(2, 1, 28, 28)).astype(np.float32))
gap = np.abs(forward_encoder(full, images).data - forward_encoder(shared, images).data).max()
print(f"  tiled full-weight model differs from the shared one by at most {gap:.2e} on a random batch")
