import numpy as np
import pytest

from skillkt import tensor as T
from skillkt.errors import ConfigError, ShapeError
from skillkt.gradcheck import finite_difference_grad, max_rel_error
from skillkt.tensor import Tape, Tensor, apply_primitive, backward


@pytest.fixture
def f64():
    with T.using_dtype(np.float64):
        yield


def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    assert np.allclose(out.data, a)


def test_sigmoid_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_add_rejects_non_suffix_broadcast():
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 1))))


def test_suffix_broadcast_add_and_unbroadcast_grad(f64):
    bias = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    x = Tensor(np.zeros((3, 4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.add(x, bias))
    gx, gb = backward(tape, loss, [x, bias])
    assert gx.shape == (3, 4, 2) and np.all(gx == 1.0)
    assert gb.shape == (2,) and np.all(gb == 12.0)


def test_dropout_probability_validation():
    with pytest.raises(ConfigError):
        T.dropout(Tensor(np.ones(4)), 1.0, rng=0)
    with pytest.raises(ConfigError):
        T.dropout(Tensor(np.ones(4)), -0.1, rng=0)


def test_dropout_deterministic_given_seed():
    x = Tensor(np.ones((5, 7)))
    a = T.dropout(x, 0.4, rng=123).data
    b = T.dropout(x, 0.4, rng=123).data
    assert np.array_equal(a, b)
    scaled = set(np.unique(a).tolist())
    assert scaled <= {0.0, pytest.approx(1 / 0.6)} or np.allclose(
        sorted(scaled), [0.0, 1 / 0.6])


def test_tape_records_only_when_grad_required():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.ones(3))
    with Tape() as tape:
        T.add(x, c)
        T.add(c, c)
    assert len(tape) == 1


def test_no_tape_forward_is_fine():
    out = T.mul(Tensor([2.0]), Tensor([3.0]))
    assert out.data[0] == 6.0


def test_backward_sum_of_squares(f64):
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(w, w))
    (g,) = backward(tape, loss, [w])
    assert np.allclose(g, [2.0, 4.0])


def test_backward_constant_loss_gives_zero_grad(f64):
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(Tensor([3.0]), Tensor([4.0])))
    (g,) = backward(tape, loss, [w])
    assert np.all(g == 0.0) and g.shape == (2,)


def test_backward_rejects_non_scalar_loss():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = T.mul(w, w)
    with pytest.raises(ShapeError, match="scalar"):
        backward(tape, out, [w])


def test_backward_visits_each_entry_once(f64):
    x = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        h = T.mul(x, x)
        h = T.add(h, x)
        h = T.sigmoid(h)
        loss = T.reduce_sum(h)
    backward(tape, loss, [x])
    assert len(tape) == 4
    assert tape.last_backward_visits == 4


def test_random_composition_matches_finite_differences(f64):
    rng = np.random.default_rng(5)
    w1 = rng.normal(size=(4, 5))
    w2 = rng.normal(size=(5, 3))
    labels = (rng.random((2, 3)) < 0.5).astype(float)
    x0 = rng.normal(size=(2, 4))

    def run(x_data):
        x = Tensor(x_data, requires_grad=True)
        with Tape() as tape:
            h = T.relu(T.matmul(x, Tensor(w1)))
            h = T.matmul(h, Tensor(w2))
            loss = T.bce(T.sigmoid(h), labels)
        return x, tape, loss

    x, tape, loss = run(x0)
    (analytic,) = backward(tape, loss, [x])
    fd = finite_difference_grad(lambda v: run(v.reshape(2, 4))[2].item(),
                                x0.ravel(), h=1e-4).reshape(2, 4)
    assert max_rel_error(fd, analytic, floor=1e-6) < 1e-6


def test_forward_bit_deterministic():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(6, 6)))
    b = Tensor(rng.normal(size=(6, 6)))
    first = T.layer_norm(T.matmul(a, b), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    second = T.layer_norm(T.matmul(a, b), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    assert np.array_equal(first, second)


def test_softmax_rows_sum_to_one_and_masked_exactly_zero():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 6)))
    mask = np.zeros((4, 6))
    mask[:, 4:] = -np.inf
    out = T.softmax(x, mask=mask).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(out[:, 4:] == 0.0)


def test_softmax_fully_masked_row_is_zero_not_nan():
    x = Tensor(np.ones((2, 3)))
    mask = np.full((2, 3), -np.inf)
    out = T.softmax(x, mask=mask).data
    assert np.all(out == 0.0)


def test_bce_hand_value():
    pred = Tensor(np.array([0.8, 0.3]))
    out = T.bce(pred, np.array([1.0, 0.0]))
    expected = -(np.log(0.8) + np.log(0.7)) / 2
    assert out.item() == pytest.approx(expected, rel=1e-6)


def test_bce_all_masked_is_zero():
    pred = Tensor(np.array([0.8, 0.3]))
    out = T.bce(pred, np.array([1.0, 0.0]), mask=np.zeros(2))
    assert out.item() == 0.0


def test_concat_roundtrip_grad(f64):
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        joined = T.concat([a, b], axis=-1)
        loss = T.reduce_sum(T.mul(joined, joined))
    ga, gb = backward(tape, loss, [a, b])
    assert ga.shape == (2, 3) and gb.shape == (2, 2)
    assert np.all(ga == 2.0) and np.all(gb == 2.0)


def test_gather_out_of_range():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(ShapeError, match="gather"):
        T.gather(table, np.array([0, 4]))


def test_apply_primitive_dispatch_and_unknown():
    a = Tensor(np.eye(2))
    direct = T.matmul(a, a)
    dispatched = apply_primitive("matmul", a, a)
    assert np.array_equal(direct.data, dispatched.data)
    with pytest.raises(ConfigError, match="unknown primitive"):
        apply_primitive("convolve", a)


def test_set_default_dtype_validation():
    with pytest.raises(ConfigError):
        T.set_default_dtype(np.int32)


# ---------------------------------------------------------------------------
# per-primitive gradient checks against the finite-difference oracle


def _gradcheck_cases(rng):
    """(name, builder) pairs; builder returns (params, forward_fn).

    forward_fn rebuilds the computation from the given leaf tensors so the
    finite-difference oracle can re-evaluate it as a black box.
    """
    def rmat(*shape):
        return rng.normal(size=shape)

    b, l, d = (int(rng.integers(1, 3)), int(rng.integers(2, 5)),
               int(rng.integers(2, 5)))
    labels = (rng.random((b, l)) < 0.5).astype(float)
    mask = np.ones((b, l)))
    cases = {}
    cases["matmul"] = ([rmat(b, l, d), rmat(d, l)],
                       lambda xs: T.matmul(xs[0], xs[1]))
    cases["add"] = ([rmat(b, l, d), rmat(d)], lambda xs: T.add(xs[0], xs[1]))
    cases["sub"] = ([rmat(b, l, d), rmat(l, d)], lambda xs: T.sub(xs[0], xs[1]))
    cases["mul"] = ([rmat(b, l, d), rmat(d)], lambda xs: T.mul(xs[0], xs[1]))
    cases["scale"] = ([rmat(l, d)], lambda xs: T.scale(xs[0], 0.37))
    cases["sigmoid"] = ([rmat(b, l)], lambda xs: T.sigmoid(xs[0]))
    cases["relu"] = ([rmat(l, d) + np.where(rmat(l, d) > 0, 0.5, -0.5)],
                     lambda xs: T.relu(xs[0]))
    smask = np.zeros((l, l))
    smask[np.triu_indices(l, k=1)] = -np.inf
    cases["softmax"] = ([rmat(b, l, l)], lambda xs: T.softmax(xs[0], mask=smask))
    cases["layer_norm"] = ([rmat(b, l, d), rmat(d) * 0.1 + 1.0, rmat(d) * 0.1],
                           lambda xs: T.layer_norm(xs[0], xs[1], xs[2]))
    ids = rng.integers(0, 4, size=(b, l))
    cases["gather"] = ([rmat(4, d)], lambda xs: T.gather(xs[0], ids))
    cases["dropout"] = ([rmat(b, l, d)], lambda xs: T.dropout(xs[0], 0.3, rng=1234))
    cases["mean_square"] = ([rmat(b, d)], lambda xs: xs[0])
    cases["bce"] = ([rng.random((b, l)) * 0.8 + 0.1],
                    lambda xs: T.bce(xs[0], labels, mask=mask))
    cases["concat"] = ([rmat(b, d), rmat(b, d + 1)],
                       lambda xs: T.concat(xs, axis=-1))
    cases["transpose"] = ([rmat(b, l, d)], lambda xs: T.transpose(xs[0]))
    cases["reshape"] = ([rmat(b, l, d)], lambda xs: T.reshape(xs[0], (b, l * d)))
    return cases


_PRIMITIVE_NAMES = ["matmul", "add", "sub", "mul", "scale", "sigmoid", "relu",
                    "softmax", "layer_norm", "gather", "dropout", "mean_square",
                    "bce", "concat", "transpose", "reshape"]


def _scalarize(out):
    # squares keep the output sensitive to sign; mean_square doubles as the
    # reduction under test for its own case
    return T.mean_square(out) if out.data.ndim else out


def _run_primitive_gradcheck(name, dtype, tol):
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng([hash(name) % (2 ** 31), trial])
        arrays, fn = _gradcheck_cases(rng)[name]

        def evaluate(flat_values, analytic_dtype):
            with T.using_dtype(analytic_dtype):
                leaves = []
                at = 0
                for arr in arrays:
                    chunk = flat_values[at:at + arr.size].reshape(arr.shape)
                    leaves.append(Tensor(chunk, requires_grad=True))
                    at += arr.size
                with Tape() as tape:
                    loss = _scalarize(fn(leaves))
                return leaves, tape, loss

        flat = np.concatenate([a.ravel() for a in arrays])
        leaves, tape, loss = evaluate(flat.astype(dtype), dtype)
        grads = backward(tape, loss, leaves)
        analytic = np.concatenate([g.ravel() for g in grads])
        fd = finite_difference_grad(
            lambda v: evaluate(v, np.float64)[2].item(), flat, h=1e-5)
        worst = max(worst, max_rel_error(fd, analytic,
                                         floor=1e-6 if dtype == np.float64 else 1e-3))
    assert worst < tol, f"{name}: worst relative error {worst}"


@pytest.mark.parametrize("name", _PRIMITIVE_NAMES)
def test_primitive_gradients_64bit(name):
    _run_primitive_gradcheck(name, np.float64, 1e-6)


@pytest.mark.parametrize("name", _PRIMITIVE_NAMES)
def test_primitive_gradients_32bit(name):
    _run_primitive_gradcheck(name, np.float32, 1e-3)
