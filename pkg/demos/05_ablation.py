"""
Four-way ablation on synthetic scenes
=====================================

Relations toward humans follow depth order 90% of the time.  Frequency
baselines cannot see depth, the boosted model without depth sees only box
geometry, and the full model sees both.  Takes about a minute.
"""

import tempfile

from relpipe.evaluation import report_csv
from relpipe.pipeline import Dataset, PipelineConfig, run_ablation
from relpipe.synthetic import SynthSpec, family_spec_list, generate

root = tempfile.mkdtemp(prefix="relpipe_demo_")
spec = SynthSpec(seed=7, n_scenes=500, n_val_scenes=200, rho=0.9, noise=0.08,
                 human_depth_range=(1.0, 6.0),
                 families=family_spec_list([2, 3, 0, 1, 2, 3], [3] * 6, 10, mass=0.7))
generate(spec, root)
print("dataset written to", root)

cfg = PipelineConfig.from_json({
    "version": 1,
    "dataset": {"root": root},
    "clustering": {"seed": 0, "k_range": [2, 6]},
    "prediction": {"seed": 0},
})
result = run_ablation(cfg, Dataset(cfg.dataset_root, cfg.vocab_path))

stage = result.cluster
print("groups:", stage.model.k, "routing:", stage.model.routing)
print(report_csv(result.reports, cfg.evaluation))

# IoU 0.75 is low for every row: jittered detection boxes often miss that bar
gb, gbd = result.reports["gb"].average, result.reports["gb_depth"].average
print(f"depth adds {gbd - gb:+.3f} average accuracy")
