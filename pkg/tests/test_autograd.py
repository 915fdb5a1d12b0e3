import numpy as np
import pytest

from tspn import autograd as ag
from tspn.autograd import Adam, ParamSet, ShapeError, Tensor, grad_check


def params(rng, **shapes):
    return ParamSet({k: Tensor(rng.normal(size=s), requires_grad=True, name=k)
                     for k, s in shapes.items()})


class TestForward:
    def test_sigmoid_zero(self):
        assert ag.sigmoid(Tensor(0.0)).item() == 0.5

    def test_hadamard(self):
        assert ag.hadamard(Tensor([1, 2, 3]), Tensor([0, 1, 2])).values.tolist() == [0, 2, 6]

    def test_bce_half(self):
        assert ag.bce(Tensor(0.5), 1.0).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_bce_clamped(self):
        assert np.isfinite(ag.bce(Tensor([0.0, 1.0]), [1.0, 0.0]).values).all()

    def test_shape_errors_name_operands(self):
        with pytest.raises(ShapeError, match="W"):
            ag.linear(Tensor(np.ones((3, 2)), name="W"), Tensor(np.ones(4)))
        with pytest.raises(ShapeError):
            ag.hadamard(Tensor(np.ones(2)), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2, 2)))


class TestBackward:
    def test_mean(self):
        x = Tensor(np.ones(4), requires_grad=True)
        ag.backward(ag.mean(x))
        assert x.grad.tolist() == [0.25] * 4

    def test_sigmoid_slope(self):
        w = Tensor(0.0, requires_grad=True)
        ag.backward(ag.sigmoid(ag.scale(w, 1.0)))
        assert w.grad == pytest.approx(0.25)

    def test_shared_node_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = ag.hadamard(x, x)
        ag.backward(ag.mean(ag.add(y, y)))
        assert x.grad.tolist() == [8.0]

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            ag.backward(Tensor(np.ones(2), requires_grad=True))

    @pytest.mark.parametrize("name, f, shapes", [
        ("linear", lambda p: ag.mean(ag.linear(p["w"], p["x"], p["b"])),
         {"w": (4, 3), "x": (5, 4), "b": (3,)}),
        ("linear-vector", lambda p: ag.mean(ag.sigmoid(ag.linear(p["w"], p["x"]))),
         {"w": (4, 3), "x": (4,)}),
        ("concat", lambda p: ag.mean(ag.hadamard(ag.concat([p["a"], p["b"]]), p["c"])),
         {"a": (3, 2), "b": (3, 4), "c": (3, 6)}),
        ("bias_add", lambda p: ag.mean(ag.sigmoid(ag.bias_add(p["x"], p["b"]))),
         {"x": (3, 4), "b": (4,)}),
        ("bce", lambda p: ag.mean(ag.bce(ag.sigmoid(p["x"]), np.eye(3)[:, :2])),
         {"x": (3, 2)}),
        ("rows", lambda p: ag.mean(ag.sigmoid(ag.rows(p["x"], [0, 2, 2]))), {"x": (4, 3)}),
        ("reshape", lambda p: ag.mean(ag.hadamard(ag.reshape(p["x"], (6,)), p["y"])),
         {"x": (2, 3), "y": (6,)}),
        ("outer_rows", lambda p: ag.mean(ag.sigmoid(ag.outer_rows(p["a"], p["b"]))),
         {"a": (3, 2), "b": (3, 4)}),
        ("two-layer", lambda p: ag.mean(ag.bce(ag.sigmoid(ag.linear(
            p["w2"], ag.sigmoid(ag.linear(p["w1"], p["x"], p["b1"])))), np.ones((5, 1)))),
         {"w1": (4, 6), "b1": (6,), "w2": (6, 1), "x": (5, 4)}),
    ])
    def test_finite_differences(self, name, f, shapes):
        rep = grad_check(f, params(np.random.default_rng(1), **shapes))
        assert rep.passed, (name, rep.max_rel_error)


class TestGradCheck:
    def test_quadratic(self):
        p = ParamSet({"w": Tensor([3.0], requires_grad=True)})
        f = lambda q: ag.mean(ag.hadamard(q["w"], q["w"]))
        p.zero_grad()
        ag.backward(f(p))
        assert p["w"].grad[0] == 6.0
        assert grad_check(f, p).max_rel_error["w"] < 1e-8

    def test_constant(self):
        p = ParamSet({"w": Tensor([1.0, 2.0], requires_grad=True)})
        rep = grad_check(lambda q: ag.mean(Tensor([5.0])), p)
        assert rep.worst == 0.0

    def test_detects_wrong_gradient(self):
        def bad_square(x):
            def fn(g):
                x.grad += g * x.values          # should be 2 * x
            return ag._node(x.values ** 2, (x,), fn)
        p = ParamSet({"w": Tensor([1.5], requires_grad=True)})
        assert not grad_check(lambda q: ag.mean(bad_square(q["w"])), p).passed


class TestAdam:
    def test_zero_grad_is_fixed_point(self):
        p = ParamSet({"w": Tensor([1.0, -2.0], requires_grad=True)})
        Adam(p).step()
        assert p["w"].values.tolist() == [1.0, -2.0]

    def test_first_step_is_lr(self):
        p = ParamSet({"w": Tensor([0.0], requires_grad=True)})
        p["w"].grad = np.array([1.0])
        Adam(p, lr=0.001).step()
        assert p["w"].values[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_identical_params_identical_updates(self):
        p = ParamSet({"a": Tensor([0.3], requires_grad=True), "b": Tensor([0.3], requires_grad=True)})
        opt = Adam(p, lr=0.1)
        for g in (0.5, -1.0, 2.0):
            p["a"].grad = np.array([g])
            p["b"].grad = np.array([g])
            opt.step()
        assert p["a"].values[0] == p["b"].values[0]


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        p = params(np.random.default_rng(0), w=(3, 4), b=(4,))
        ag.save_checkpoint(p, tmp_path / "c.json", {"note": "x"})
        q, meta = ag.load_checkpoint(tmp_path / "c.json", p.shapes())
        assert p.equal(q) and meta == {"note": "x"}
        ag.save_checkpoint(q, tmp_path / "d.json", {"note": "x"})
        assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()

    def test_shape_mismatch(self, tmp_path):
        p = params(np.random.default_rng(0), w=(3, 4))
        ag.save_checkpoint(p, tmp_path / "c.json")
        with pytest.raises(ShapeError):
            ag.load_checkpoint(tmp_path / "c.json", {"w": (4, 3)})

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "c.json").write_text('{"a": 1}')
        with pytest.raises(ValueError):
            ag.load_checkpoint(tmp_path / "c.json")
