"""
Checking backpropagation with finite differences
================================================

Both architectures are shrunk to a 12x12 input so every parameter can be
perturbed in a few seconds.
"""

# %%
from scenechar.experiment import gradient_check, reduced_spec

for arch in ("A", "B"):
    res = gradient_check(reduced_spec(arch), seed=0, eps=1e-5)
    print(f"architecture {arch}: {res.checked} entries checked, {res.skipped} skipped at kinks")
    for name, err in res.max_rel_error.items():
        print(f"  {name:16s} {err:.2e}")
    print("  passed:", res.passed(1e-4))
