import numpy as np
import pytest

from rstrack.datagen import (
    DatasetConfig,
    MovingObjectSupport,
    SubspaceChangeSpec,
    coeff_model_for_condition_number,
    gen_dataset,
)
from rstrack.sparse_recovery import ProjCsParams
from rstrack.tracker import Tracker, TrackerParams, init_batch


def small_config(n=120, t_max=2300, t_train=200, r=3, f=4.0,
                 change_times=(400, 1500), theta_deg=30.0):
    changes = tuple(
        SubspaceChangeSpec(t_j=t, theta_j=np.deg2rad(theta_deg) * (1 + 0.01 * i))
        for i, t in enumerate(change_times)
    )
    return DatasetConfig(
        n=n, t_max=t_max, t_train=t_train, r=r,
        coeff=coeff_model_for_condition_number(r, f),
        changes=changes,
        support=MovingObjectSupport(s=max(1, n // 10), c0=0.2, tau=50),
        train_support=MovingObjectSupport(s=max(1, n // 20), c0=0.05, tau=50),
    )


def small_tracker_params(cfg, alpha=150, K=4, store_offline=True):
    lam_minus = cfg.coeff.lambda_minus
    return TrackerParams(
        r=cfg.r, alpha=alpha, K=K,
        lambda_thresh=0.01 * lam_minus,
        t_train=cfg.t_train,
        cs=ProjCsParams(xi=cfg.x_min / 15.0, omega_supp=cfg.x_min / 2.0,
                        solver_tol=1e-6),
        store_offline=store_offline,
    )


def run_small_pipeline(seed=0, **kw):
    cfg = small_config(**{k: v for k, v in kw.items()
                          if k in ("n", "t_max", "t_train", "r", "f",
                                   "change_times", "theta_deg")})
    Y, truth = gen_dataset(cfg, seed=seed)
    params = small_tracker_params(
        cfg, **{k: v for k, v in kw.items() if k in ("alpha", "K", "store_offline")}
    )
    p0 = init_batch(Y[:, :cfg.t_train], cfg.r)
    tracker = Tracker(p0, params)
    estimates = tracker.run(Y)
    return cfg, Y, truth, tracker, estimates


@pytest.fixture(scope="session")
def small_run():
    return run_small_pipeline(seed=0)
