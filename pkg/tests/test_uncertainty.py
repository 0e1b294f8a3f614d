"""The registry's closed-form constants must never under-report.

Every family is probed numerically: envelope inequalities on broad random
state clouds, Lipschitz constants on random pairs, and tightness checks
where the closed form is known to be achieved (so a future "fix" that
inflates or deflates a constant gets caught from both sides).
"""

import numpy as np
import pytest

from covsteer.uncertainty import (DIFFUSION_FAMILIES, DRIFT_FAMILIES,
                                  STATE_NORM_LIPSCHITZ, build_uncertainty,
                                  make_diffusion, make_drift)


def _state_cloud(rng, n, count=4000, scale=30.0):
    # mix of near-origin and far-field states so both envelope regimes bite
    small = rng.normal(size=(count // 2, n))
    large = rng.normal(size=(count // 2, n)) * scale
    return np.vstack([small, large])


def _drift_cases(rng, m, n):
    return [
        ("zero", {}),
        ("constant", {"value": rng.normal(size=m)}),
        ("saturated_linear", {"gain": rng.normal(size=(m, n)),
                              "limit": 0.7}),
        ("saturated_linear", {"gain": 3.0 * rng.normal(size=(m, n)),
                              "limit": rng.uniform(0.2, 2.0, size=m)}),
        ("sinusoidal", {"amplitude": rng.uniform(0.1, 1.0, size=m),
                        "frequency": rng.normal(size=(m, n)),
                        "phase": rng.uniform(-3, 3, size=m)}),
    ]


def _diffusion_cases(rng, m, n_w):
    return [
        ("zero", {}),
        ("constant", {"coefficient": rng.normal(size=(m, n_w))}),
        ("state_norm", {"coefficient": 0.5 * rng.normal(size=(m, n_w))}),
    ]


class TestEnvelopes:
    @pytest.mark.parametrize("case_idx", range(5))
    def test_drift_envelope_holds_on_random_states(self, case_idx):
        rng = np.random.default_rng(100 + case_idx)
        m, n = 3, 4
        family, params = _drift_cases(rng, m, n)[case_idx]
        h_mu, delta, _ = make_drift(family, params, m, n)
        x = _state_cloud(rng, n)
        lhs = np.sum(h_mu(x) ** 2, axis=-1)
        rhs = delta ** 2 * (1.0 + np.sum(x * x, axis=-1))
        assert np.all(lhs <= rhs * (1.0 + 1e-12))

    @pytest.mark.parametrize("case_idx", range(3))
    def test_diffusion_envelope_holds_on_random_states(self, case_idx):
        rng = np.random.default_rng(200 + case_idx)
        m, n_w, n = 3, 2, 4
        family, params = _diffusion_cases(rng, m, n_w)[case_idx]
        h_sigma, delta, _ = make_diffusion(family, params, m, n_w, n)
        x = _state_cloud(rng, n)
        lhs = np.sum(h_sigma(x) ** 2, axis=(-2, -1))
        rhs = delta ** 2 * np.sqrt(1.0 + np.sum(x * x, axis=-1))
        assert np.all(lhs <= rhs * (1.0 + 1e-12))

    def test_constant_drift_envelope_tight_at_origin(self):
        h_mu, delta, _ = make_drift("constant", {"value": [3.0, -4.0]}, 2, 3)
        assert delta == 5.0
        x0 = np.zeros(3)
        assert np.linalg.norm(h_mu(x0)) == pytest.approx(delta)

    def test_state_norm_envelope_is_an_identity(self):
        # for this family the envelope holds with equality at every state
        rng = np.random.default_rng(7)
        coef = rng.normal(size=(2, 3))
        h_sigma, delta, _ = make_diffusion("state_norm",
                                           {"coefficient": coef}, 2, 3, 4)
        x = rng.normal(size=(50, 4)) * 5.0
        lhs = np.sum(h_sigma(x) ** 2, axis=(-2, -1))
        rhs = delta ** 2 * np.sqrt(1.0 + np.sum(x * x, axis=-1))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_sinusoidal_envelope_achieved_at_peak(self):
        amp = np.array([0.5, 1.2])
        freq = np.array([[1.0, 0.0], [0.0, 2.0]])
        phase = np.array([np.pi / 2, np.pi / 2])  # sin(...)=1 at x=0
        h_mu, delta, _ = make_drift(
            "sinusoidal",
            {"amplitude": amp, "frequency": freq, "phase": phase}, 2, 2)
        assert np.linalg.norm(h_mu(np.zeros(2))) == pytest.approx(delta)


class TestLipschitz:
    def _empirical_ratio(self, func, rng, n, pairs=3000, spread=20.0):
        x = rng.normal(size=(pairs, n)) * rng.uniform(0.1, spread,
                                                      size=(pairs, 1))
        y = x + rng.normal(size=(pairs, n)) * rng.uniform(
            1e-4, 2.0, size=(pairs, 1))
        fx, fy = func(x), func(y)
        num = np.sqrt(np.sum((fx - fy).reshape(pairs, -1) ** 2, axis=-1))
        den = np.linalg.norm(x - y, axis=-1)
        return num / den

    @pytest.mark.parametrize("case_idx", range(5))
    def test_drift_lipschitz_bounds_difference_quotients(self, case_idx):
        rng = np.random.default_rng(300 + case_idx)
        m, n = 3, 4
        family, params = _drift_cases(rng, m, n)[case_idx]
        h_mu, _, lip = make_drift(family, params, m, n)
        ratios = self._empirical_ratio(h_mu, rng, n)
        assert np.all(ratios <= lip * (1.0 + 1e-9) + 1e-12)

    @pytest.mark.parametrize("case_idx", range(3))
    def test_diffusion_lipschitz_bounds_difference_quotients(self, case_idx):
        rng = np.random.default_rng(400 + case_idx)
        m, n_w, n = 3, 2, 4
        family, params = _diffusion_cases(rng, m, n_w)[case_idx]
        h_sigma, _, lip = make_diffusion(family, params, m, n_w, n)
        ratios = self._empirical_ratio(h_sigma, rng, n)
        assert np.all(ratios <= lip * (1.0 + 1e-9) + 1e-12)

    def test_state_norm_lipschitz_constant_is_tight(self):
        # the scalar factor (1+||x||^2)^{1/4} has steepest slope at ||x||=sqrt(2);
        # finite differences along that shell must approach the closed form
        coef = np.array([[2.0, 0.0], [0.0, 1.0]])
        fro = np.linalg.norm(coef)
        h_sigma, _, lip = make_diffusion("state_norm",
                                         {"coefficient": coef}, 2, 2, 3)
        assert lip == pytest.approx(fro * STATE_NORM_LIPSCHITZ)

        r = np.sqrt(2.0)
        x = np.array([r, 0.0, 0.0])
        y = np.array([r + 1e-6, 0.0, 0.0])
        ratio = (np.linalg.norm(h_sigma(x) - h_sigma(y))
                 / np.linalg.norm(x - y))
        assert ratio == pytest.approx(lip, rel=1e-5)

        # and nowhere does the slope exceed it (dense radial sweep)
        radii = np.linspace(0.0, 8.0, 2001)
        slope = radii / (2.0 * (1.0 + radii ** 2) ** 0.75)
        assert slope.max() <= STATE_NORM_LIPSCHITZ + 1e-12

    def test_sinusoidal_lipschitz_achieved_for_single_channel(self):
        h_mu, _, lip = make_drift(
            "sinusoidal",
            {"amplitude": [1.5], "frequency": [[3.0, 4.0]], "phase": [0.0]},
            1, 2)
        assert lip == pytest.approx(1.5 * 5.0)
        step = 1e-7 * np.array([3.0, 4.0]) / 5.0
        ratio = (np.linalg.norm(h_mu(step) - h_mu(np.zeros(2)))
                 / np.linalg.norm(step))
        assert ratio == pytest.approx(lip, rel=1e-6)

    def test_saturated_linear_matches_clip_formula(self):
        gain = np.array([[1.0, -2.0], [0.5, 0.5]])
        h_mu, delta, lip = make_drift("saturated_linear",
                                      {"gain": gain, "limit": 0.4}, 2, 2)
        x = np.array([[10.0, -10.0], [0.01, 0.0]])
        expect = np.clip(x @ gain.T, -0.4, 0.4)
        np.testing.assert_allclose(h_mu(x), expect)
        assert delta == pytest.approx(
            min(np.linalg.svd(gain, compute_uv=False)[0],
                np.sqrt(2) * 0.4))
        assert lip == pytest.approx(np.linalg.svd(gain, compute_uv=False)[0])


class TestRegistryContract:
    def test_build_uncertainty_wires_functions_and_bounds(self):
        rng = np.random.default_rng(5)
        m, n, n_w = 2, 3, 2
        freq = rng.normal(size=(m, n))
        funcs, bounds = build_uncertainty(
            {"family": "sinusoidal", "amplitude": [0.3, 0.4],
             "frequency": freq.tolist(), "phase": [0.0, 1.0]},
            {"family": "state_norm",
             "coefficient": [[0.1, 0.0], [0.0, 0.2]]},
            m, n, n_w)
        assert bounds.delta_mu == pytest.approx(0.5)
        assert bounds.delta_sigma == pytest.approx(np.sqrt(0.05))
        x = rng.normal(size=(6, n))
        assert funcs.h_mu(x).shape == (6, m)
        assert funcs.h_sigma(x).shape == (6, m, n_w)

    def test_zero_families_match_zero_functions(self):
        funcs, bounds = build_uncertainty({"family": "zero"},
                                          {"family": "zero"}, 2, 3, 2)
        x = np.ones((4, 3))
        assert np.all(funcs.h_mu(x) == 0.0)
        assert np.all(funcs.h_sigma(x) == 0.0)
        assert bounds.delta_mu == 0.0 and bounds.l_sigma == 0.0

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError, match="unknown drift family"):
            make_drift("cubic", {}, 2, 2)
        with pytest.raises(ValueError, match="unknown diffusion family"):
            make_diffusion("jump", {}, 2, 2, 2)

    def test_missing_and_extra_parameters_rejected(self):
        with pytest.raises(ValueError, match="needs parameter 'value'"):
            make_drift("constant", {}, 2, 2)
        with pytest.raises(ValueError, match="unknown parameters"):
            make_drift("constant", {"value": [0.0, 0.0], "bias": 1}, 2, 2)
        with pytest.raises(ValueError, match="shape"):
            make_diffusion("constant", {"coefficient": [[1.0]]}, 2, 2, 2)
        with pytest.raises(ValueError, match="family"):
            build_uncertainty({}, {"family": "zero"}, 2, 2, 2)

    def test_limit_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            make_drift("saturated_linear",
                       {"gain": [[1.0, 0.0]], "limit": 0.0}, 1, 2)

    def test_family_name_tuples_are_stable(self):
        assert DRIFT_FAMILIES == ("zero", "constant", "saturated_linear",
                                  "sinusoidal")
        assert DIFFUSION_FAMILIES == ("zero", "constant", "state_norm")
