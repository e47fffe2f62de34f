### BEGIN FROZEN: engine ###
# Engine: stub. A deterministic single-feature model used when no AutoML
# framework is installed. Binary tasks score rows with the most separating
# numeric feature; regression tasks fit a one-feature least-squares line.
TASK_TYPE = @@TASK_TYPE@@
TIME_BUDGET = @@TIME_BUDGET@@
ENGINE_PARAMS = @@ENGINE_PARAMS@@


class StubModel:
    def __init__(self, feature, center, scale, sign, intercept, slope, constant):
        self.feature = feature
        self.center = center
        self.scale = scale
        self.sign = sign
        self.intercept = intercept
        self.slope = slope
        self.constant = constant


def _numeric_columns(X):
    columns = {}
    for name in X.columns:
        if name == ID_COLUMN:
            continue
        values = [_number(v) for v in X[name].tolist()]
        present = [v for v in values if v is not None and math.isfinite(v)]
        if not present or len(present) < len(values) / 2:
            continue
        mean = sum(present) / len(present)
        columns[name] = [v if v is not None and math.isfinite(v) else mean for v in values]
    return columns


def _fill(model, X):
    if model.feature is None or model.feature not in X.columns:
        return None
    values = [_number(v) for v in X[model.feature].tolist()]
    return [v if v is not None and math.isfinite(v) else model.center for v in values]


def fit(X, y):
    columns = _numeric_columns(X)
    if TASK_TYPE == "binary":
        pos = positive_label(y.tolist())
        truth = [_label(v) == pos for v in y.tolist()]
        best = None
        for name, values in columns.items():
            try:
                auc = _auc(truth, values)
            except ValueError:
                continue
            if best is None or abs(auc - 0.5) > abs(best[1] - 0.5):
                best = (name, auc)
        prevalence = sum(truth) / float(len(truth))
        if best is None:
            return StubModel(None, 0.0, 1.0, 1.0, 0.0, 0.0, prevalence)
        values = columns[best[0]]
        center = sum(values) / len(values)
        scale = math.sqrt(sum((v - center) ** 2 for v in values) / len(values)) or 1.0
        sign = 1.0 if best[1] >= 0.5 else -1.0
        return StubModel(best[0], center, scale, sign, 0.0, 0.0, prevalence)
    target = [float(v) for v in y.tolist()]
    mean_y = sum(target) / len(target)
    best = None
    for name, values in columns.items():
        mean_x = sum(values) / len(values)
        sxx = sum((v - mean_x) ** 2 for v in values)
        if sxx == 0.0:
            continue
        sxy = sum((v - mean_x) * (t - mean_y) for v, t in zip(values, target))
        slope = sxy / sxx
        sse = sum((t - (mean_y + slope * (v - mean_x))) ** 2 for v, t in zip(values, target))
        if best is None or sse < best[0]:
            best = (sse, name, mean_x, slope)
    if best is None:
        return StubModel(None, 0.0, 1.0, 1.0, mean_y, 0.0, mean_y)
    _, name, mean_x, slope = best
    return StubModel(name, mean_x, 1.0, 1.0, mean_y - slope * mean_x, slope, mean_y)


def predict(model, X):
    values = _fill(model, X)
    if values is None:
        return [model.constant] * len(X)
    if TASK_TYPE == "binary":
        return [1.0 / (1.0 + math.exp(-max(min(model.sign * (v - model.center) / model.scale, 50.0), -50.0))) for v in values]
    return [model.intercept + model.slope * v for v in values]
### END FROZEN: engine ###
