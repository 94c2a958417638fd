"""
Training with a missing modality
================================

Setting A keeps text for a fraction p of training samples and removes it
from every test sample. Missing text is replaced by a virtual text vector
generated from the visual representation.
"""
from trml.dataset import SyntheticConfig, build_missingness_plan, generate_synthetic
from trml.evaluation import evaluate
from trml.trainer import TrainConfig, train

syn = SyntheticConfig(n_train=400, n_valid=100, n_test=200, seed=1)
ds = generate_synthetic(syn)

for setting, p in (("A", 0.1), ("A", 0.7), ("B", 0.5)):
    cfg = TrainConfig(synthetic=syn, setting=setting, victim="text", p=p, epochs=15, lr=1e-3, seed=0)
    plan = build_missingness_plan(ds, setting, "text", p, cfg.seed)
    params, log = train(cfg, ds, plan)
    rep = evaluate(params, ds, plan, "test")
    print(f"setting {setting} p={p}: text present in {plan.present_in(ds, 'train')}/{ds.split_size('train')} "
          f"train and {plan.present_in(ds, 'test')}/{ds.split_size('test')} test samples")
    print(f"   best epoch {log.best_epoch}, tau {params.tau:.4f}, {rep.summary()}")
