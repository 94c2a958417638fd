"""
Ablations and paired t-tests
============================

Each variant is trained on the same seeds, so per-seed test errors can be
paired. Here the comparison is the full objective against training without
the semantic matching term.
"""
from trml.dataset import SyntheticConfig, build_missingness_plan, generate_synthetic
from trml.evaluation import evaluate, paired_ttest
from trml.trainer import TrainConfig, train

syn = SyntheticConfig(n_train=400, n_valid=100, n_test=200)
ds = generate_synthetic(syn)
seeds = range(4)

mae = {}
for variant in ("none", "no_sml_text", "no_sml"):
    mae[variant] = []
    for seed in seeds:
        cfg = TrainConfig(synthetic=syn, seed=seed, ablation=variant, epochs=10, lr=1e-3)
        plan = build_missingness_plan(ds, cfg.setting, cfg.victim, cfg.p, seed)
        params, _ = train(cfg, ds, plan)
        mae[variant].append(evaluate(params, ds, plan, "test").mae)
    print(variant, ["%.4f" % m for m in mae[variant]])

for variant in ("no_sml_text", "no_sml"):
    tt = paired_ttest(mae["none"], mae[variant])
    print(f"full vs {variant}: mean diff {tt.mean_diff:+.4f}, t={tt.t:.3f}, df={tt.df}, p={tt.p_two_tailed:.4f}")

# the same test is available on any two CSV columns via `trml ttest a.csv b.csv --column abs_error`
