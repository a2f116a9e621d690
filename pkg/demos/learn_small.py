"""
Learning a residual over FF
===========================

A small end-to-end run: 40 blocksworld problems, optimal cost-to-go labels,
then a Gaussian and a Truncated Gaussian model trained on the same rows.
The truncated model is bounded below by h^max, so its point estimate never
falls under an admissible bound.
"""

import tempfile

from tgplan.experiment import load_config, run_all

out = tempfile.mkdtemp(prefix="tgplan-demo-")
cfg = load_config(
    None,
    {
        "out": out,
        "domain": {"name": "blocksworld", "n_instances": 40, "min_blocks": 3, "max_blocks": 6, "n_plan": 10},
        "train": {"steps": 2000},
        "seeds": [0],
        "grid": {"sigma": ["learned"], "residual": ["ff"], "bound": ["hmax"]},
    },
)
reports = run_all(cfg)

ev = reports["eval"]
print("ff baseline MSE:", round(ev["ff_mse"], 3))
for dist in ("gaussian", "truncated"):
    m = ev["cells"][dist]["learned"]["ff"]["hmax"]["mean"]
    print(f"{dist:9s} test NLL {m['best_nll']['nll']:.3f}  MSE {m['best_mse']['mse']:.3f}")

plan = reports["plan"]
print("GBFS+ff mean evaluations:", plan["ff"]["mean_evaluations"])
for label, slot in plan["cells"]["learned"]["ff"]["hmax"].items():
    print(f"GBFS+{label:6s} mean evaluations: {slot['mean_evaluations']}")
print("artifacts in", out)
