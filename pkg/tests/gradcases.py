"""Small gradient-check cases for every differentiable layer, shared by the
unit and acceptance tests."""
import numpy as np

from cgalab.cga.model import CGAConfig, PaymentNet
from cgalab.neural import BiLSTM, GRUCell, MLP, MultiHeadAttention, ParamStore, max_relative_error
from cgalab.neural import ops as T

TOL = 1e-4


def _projected(out, rng):
    # a random linear functional of the output, so no gradient cancels by symmetry
    R = rng.normal(size=out.shape)
    return T.sum(T.mul(out, R))


def case_mlp(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    mlp = MLP(store, "m", [3, 4, 2], ["relu", "sigmoid"], rng)
    x = rng.normal(size=(5, 3))
    R = rng.normal(size=(5, 2))
    return store, lambda: T.sum(T.mul(mlp(x), R))


def case_attention(seed, positional="none"):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    att = MultiHeadAttention(store, "att", 4, 2, rng, positional=positional)
    x = rng.normal(size=(2, 3, 4))
    R = rng.normal(size=(2, 3, 4))
    return store, lambda: T.sum(T.mul(att(x), R))


def case_gru(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    cell = GRUCell(store, "gru", 3, 4, rng)
    s0 = rng.normal(size=(2, 4))
    xs = rng.normal(size=(3, 2, 3))
    R = rng.normal(size=(2, 4))

    def loss():
        s = s0
        for x in xs:
            s = cell(s, x)
        return T.sum(T.mul(s, R))
    return store, loss


def case_bilstm(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    lstm = BiLSTM(store, "bi", 3, 3, rng)
    x = rng.normal(size=(2, 4, 3))
    Rf, Rb = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))

    def loss():
        hf, hb = lstm(x)
        return T.add(T.sum(T.mul(hf, Rf)), T.sum(T.mul(hb, Rb)))
    return store, loss


def case_payment(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    cfg = CGAConfig(n=3, k=2, d=4, heads=2)
    net = PaymentNet(store, cfg, rng)
    feats = rng.normal(size=(6, cfg.d + cfg.k))
    bids = rng.random(6)
    R = rng.normal(size=6)
    return store, lambda: T.sum(T.mul(T.mul(net.rate_from_features(feats), bids), R))


CASES = {
    "mlp": case_mlp,
    "attention": case_attention,
    "attention-pe": lambda s: case_attention(s, "sinusoidal"),
    "gru": case_gru,
    "bilstm": case_bilstm,
    "paymentnet": case_payment,
}


def worst_error(name, seed):
    store, loss = CASES[name](seed)
    names = [n for n in store if store[n].requires_grad]
    return max_relative_error(loss, store, names)
