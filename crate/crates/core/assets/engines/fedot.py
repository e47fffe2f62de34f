### BEGIN FROZEN: engine ###
# Engine: FEDOT. Requires the fedot package in the interpreter.
# Only fit() and predict() below may call the framework.
import numpy as np
from fedot.api.main import Fedot

TASK_TYPE = @@TASK_TYPE@@
TIME_BUDGET = @@TIME_BUDGET@@
ENGINE_PARAMS = @@ENGINE_PARAMS@@


def fit(X, y):
    model = Fedot(
        problem="classification" if TASK_TYPE == "binary" else "regression",
        metric="roc_auc" if TASK_TYPE == "binary" else "r2",
        timeout=TIME_BUDGET / 60.0,
        preset=ENGINE_PARAMS.get("preset", "best_quality"),
        n_jobs=int(ENGINE_PARAMS.get("n_jobs", -1)),
        seed=SEED,
    )
    model.fit(features=X, target=y)
    return model


def predict(model, X):
    if TASK_TYPE == "binary":
        proba = np.asarray(model.predict_proba(features=X), dtype=float)
        return proba.reshape(len(X), -1)[:, -1].tolist()
    return np.asarray(model.predict(features=X), dtype=float).reshape(-1).tolist()
### END FROZEN: engine ###
