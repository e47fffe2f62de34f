### BEGIN USER CODE: modeling ###
def fit(X, y):
    """Train a model on the preprocessed training features X and target y and return it."""
    raise NotImplementedError("fit() is not implemented yet")


def predict(model, X):
    """Return one prediction per row of X, in the form named by PREDICTION_KIND."""
    raise NotImplementedError("predict() is not implemented yet")
### END USER CODE: modeling ###
