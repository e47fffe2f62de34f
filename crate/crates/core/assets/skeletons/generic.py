### BEGIN FROZEN: setup ###
# Autogenerated scaffold. Code between FROZEN markers is regenerated on restart.
import csv
import json
import math
import os
import pickle
import random
import sys

SEED = @@SEED@@
DATASET_PATH = @@DATASET_PATH@@
SPLIT_PATH = @@SPLIT_PATH@@
TEST_PATH = @@TEST_PATH@@
TARGET = @@TARGET@@
ID_COLUMN = @@ID_COLUMN@@
METRIC = @@METRIC@@
# What predict() must return: "label" (class labels), "probability"
# (probability of the positive class, the larger label) or "value" (numbers).
PREDICTION_KIND = @@PREDICTION_KIND@@
SUBMISSION_PATH = @@SUBMISSION_PATH@@
MODEL_PATH = "model_artifact"
VAL_FEATURES_PATH = "val_features.csv"
VAL_PREDICTIONS_PATH = "val_predictions.csv"

random.seed(SEED)
try:
    import numpy

    numpy.random.seed(SEED)
except ImportError:
    pass
### END FROZEN: setup ###

### BEGIN USER CODE: preprocessing ###
def preprocess(df):
    """Return the model input for a feature frame (the target is already removed).

    Keep this function stateless: it is applied separately to the training
    rows, the validation rows and new data. Anything learned from data
    belongs to the model returned by fit().
    """
    return df
### END USER CODE: preprocessing ###

@@MODEL_REGION@@

### BEGIN FROZEN: metrics ###
# Metric definitions shared with the validator.
def _number(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def _label(value):
    text = str(value).strip()
    number = _number(text)
    if number is not None and math.isfinite(number) and number == int(number) and abs(number) < 9e15:
        return str(int(number))
    return text


def _label_order(key):
    number = _number(key)
    if number is None:
        return (1, 0.0, key)
    return (0, number, "")


def positive_label(values):
    keys = sorted({_label(v) for v in values}, key=_label_order)
    return keys[-1]


def _auc(truth, scores):
    n_pos = sum(1 for t in truth if t)
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("validation labels contain a single class")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = sum(r for r, t in zip(ranks, truth) if t)
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_metric(name, y_true, y_pred):
    if len(y_true) != len(y_pred):
        raise ValueError("%d labels but %d predictions" % (len(y_true), len(y_pred)))
    if not y_true:
        raise ValueError("no validation rows")
    n = float(len(y_true))
    if name == "accuracy":
        return sum(1 for t, p in zip(y_true, y_pred) if _label(t) == _label(p)) / n
    if name == "f1":
        pos = positive_label(y_true)
        tp = sum(1 for t, p in zip(y_true, y_pred) if _label(t) == pos and _label(p) == pos)
        fp = sum(1 for t, p in zip(y_true, y_pred) if _label(t) != pos and _label(p) == pos)
        fn = sum(1 for t, p in zip(y_true, y_pred) if _label(t) == pos and _label(p) != pos)
        return 0.0 if 2 * tp + fp + fn == 0 else 2.0 * tp / (2 * tp + fp + fn)
    if name in ("auc", "logloss"):
        pos = positive_label(y_true)
        truth = [_label(t) == pos for t in y_true]
        scores = [float(p) for p in y_pred]
        if name == "auc":
            return _auc(truth, scores)
        eps = 1e-15
        total = 0.0
        for t, p in zip(truth, scores):
            p = min(max(p, eps), 1.0 - eps)
            total += -math.log(p) if t else -math.log(1.0 - p)
        return total / n
    t = [float(v) for v in y_true]
    p = [float(v) for v in y_pred]
    if name == "mae":
        return sum(abs(a - b) for a, b in zip(t, p)) / n
    if name == "rmse":
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(t, p)) / n)
    if name == "rmsle":
        return math.sqrt(sum((math.log1p(a) - math.log1p(b)) ** 2 for a, b in zip(t, p)) / n)
    if name == "r2-score":
        mean = sum(t) / n
        ss_tot = sum((a - mean) ** 2 for a in t)
        ss_res = sum((a - b) ** 2 for a, b in zip(t, p))
        if ss_tot == 0.0:
            return 1.0 if ss_res == 0.0 else 0.0
        return 1.0 - ss_res / ss_tot
    raise ValueError("unknown metric %s" % name)
### END FROZEN: metrics ###

### BEGIN FROZEN: io ###
# Prediction files: one row per input row, floats written with full precision.
def _cell(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_predictions(path, ids, predictions):
    predictions = list(predictions)
    if len(predictions) != len(ids):
        raise ValueError("predict() returned %d values for %d rows" % (len(predictions), len(ids)))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if ID_COLUMN is None:
            writer.writerow([TARGET])
            writer.writerows([_cell(p)] for p in predictions)
        else:
            writer.writerow([ID_COLUMN, TARGET])
            writer.writerows([_cell(i), _cell(p)] for i, p in zip(ids, predictions))


def read_predictions(path):
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return [row[-1] for row in rows[1:]]


def run_inference(model_path, input_path, output_path):
    # Loads the saved model and writes predictions for a feature table.
    import pandas as pd

    with open(model_path, "rb") as handle:
        model = pickle.load(handle)
    frame = pd.read_csv(input_path)
    if TARGET in frame.columns:
        frame = frame.drop(columns=[TARGET])
    if ID_COLUMN is not None and ID_COLUMN in frame.columns:
        ids = frame[ID_COLUMN].tolist()
    else:
        ids = list(range(len(frame)))
    write_predictions(output_path, ids, predict(model, preprocess(frame)))
### END FROZEN: io ###

### BEGIN FROZEN: main ###
# Train on the fixed 8:2 split, validate, report the metric, write the submission.
def main():
    import pandas as pd

    data = pd.read_csv(DATASET_PATH)
    with open(SPLIT_PATH) as handle:
        split = json.load(handle)
    train = data.iloc[split["train"]].reset_index(drop=True)
    valid = data.iloc[split["val"]].reset_index(drop=True)
    print("train rows: %d, validation rows: %d" % (len(train), len(valid)))

    model = fit(preprocess(train.drop(columns=[TARGET])), train[TARGET])
    with open(MODEL_PATH, "wb") as handle:
        pickle.dump(model, handle)

    valid.drop(columns=[TARGET]).to_csv(VAL_FEATURES_PATH, index=False)
    run_inference(MODEL_PATH, VAL_FEATURES_PATH, VAL_PREDICTIONS_PATH)
    score = compute_metric(METRIC, valid[TARGET].tolist(), read_predictions(VAL_PREDICTIONS_PATH))
    print("LADS_METRIC %s=%.12f" % (METRIC, score))

    source = TEST_PATH if TEST_PATH is not None else VAL_FEATURES_PATH
    run_inference(MODEL_PATH, source, SUBMISSION_PATH)
    print("submission written to %s" % SUBMISSION_PATH)


if __name__ == "__main__":
    # Run as an importable module so pickled models resolve to this file.
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    __import__(os.path.splitext(os.path.basename(__file__))[0]).main()
### END FROZEN: main ###
