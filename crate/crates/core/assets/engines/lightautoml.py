### BEGIN FROZEN: engine ###
# Engine: LightAutoML. Requires the lightautoml package in the interpreter.
# Only fit() and predict() below may call the framework.
import numpy as np
from lightautoml.automl.presets.tabular_presets import TabularAutoML
from lightautoml.tasks import Task

TASK_TYPE = @@TASK_TYPE@@
TIME_BUDGET = @@TIME_BUDGET@@
ENGINE_PARAMS = @@ENGINE_PARAMS@@


def fit(X, y):
    frame = X.copy()
    frame[TARGET] = y.values
    metric = "auc" if TASK_TYPE == "binary" else "r2"
    automl = TabularAutoML(
        task=Task(TASK_TYPE, metric=metric),
        timeout=TIME_BUDGET,
        cpu_limit=int(ENGINE_PARAMS.get("cpu_limit", 4)),
        reader_params={"random_state": SEED, "n_jobs": int(ENGINE_PARAMS.get("cpu_limit", 4))},
    )
    roles = {"target": TARGET}
    if ID_COLUMN is not None and ID_COLUMN in frame.columns:
        roles["drop"] = [ID_COLUMN]
    automl.fit_predict(frame, roles=roles, verbose=0)
    return automl


def predict(model, X):
    return np.asarray(model.predict(X).data[:, 0], dtype=float).tolist()
### END FROZEN: engine ###
