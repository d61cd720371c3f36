import numpy as np
import pytest
from scipy import stats

from pbrfit import sampling as sp
from pbrfit.vecmath import V3, reflect


def uniform_hemisphere(n, seed=0):
    r = sp.RngStream(seed, 7)
    u1 = r.uniform(n)
    u2 = r.uniform(n)
    z = u1
    s = np.sqrt(1.0 - z * z)
    phi = 2.0 * np.pi * u2
    return V3(s * np.cos(phi), s * np.sin(phi), z)


class TestRngStream:
    def test_reproducible(self):
        a = sp.RngStream(123, 5).uniform(1000)
        b = sp.RngStream(123, 5).uniform(1000)
        assert np.array_equal(a, b)

    def test_distinct_sequences_decorrelated(self):
        n = 100_000
        a = sp.RngStream(9, 0).uniform(n)
        b = sp.RngStream(9, 1).uniform(n)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_uniformity(self):
        u = sp.RngStream(4, 2).uniform(200_000)
        counts, _ = np.histogram(u, bins=64, range=(0, 1))
        assert stats.chisquare(counts).pvalue > 0.01

    def test_scalar_draws_match_vector_draws(self):
        r1 = sp.RngStream(1, 3)
        xs = [r1.uniform() for _ in range(8)]
        r2 = sp.RngStream(1, 3)
        assert np.allclose(xs, r2.uniform(8))


class TestCosineHemisphere:
    def test_zero_u_gives_pole(self):
        d, pdf = sp.sample_cosine_hemisphere(np.array(0.0), np.array(0.0))
        assert abs(d.z - 1.0) < 1e-12
        assert np.allclose(pdf, 1.0 / np.pi)

    def test_all_above_horizon_and_pdf_roundtrip(self):
        r = sp.RngStream(0, 0)
        d, pdf = sp.sample_cosine_hemisphere(r.uniform(10_000), r.uniform(10_000))
        assert np.all(d.z >= 0)
        again = sp.cosine_hemisphere_pdf(d.z)
        assert np.max(np.abs(again - pdf) / pdf) < 1e-6

    def test_pdf_integrates_to_one(self):
        d = uniform_hemisphere(1_000_000)
        mean_pdf = np.mean(sp.cosine_hemisphere_pdf(d.z))
        assert abs(mean_pdf * 2.0 * np.pi - 1.0) < 0.01

    def test_histogram_matches_analytic(self):
        r = sp.RngStream(11, 0)
        n = 1_000_000
        d, _ = sp.sample_cosine_hemisphere(r.uniform(n), r.uniform(n))
        theta = np.arccos(np.clip(d.z, -1, 1))
        edges = np.linspace(0, np.pi / 2, 65)
        counts, _ = np.histogram(theta, bins=edges)
        expected = n * (np.sin(edges[1:]) ** 2 - np.sin(edges[:-1]) ** 2)
        assert stats.chisquare(counts, expected).pvalue > 0.01


def vndf_density_grid(view, alpha, theta_edges, phi_edges, sub=4):
    """Integrate the analytic visible-normal density over (theta, phi) bins."""
    probs = np.zeros((len(theta_edges) - 1, len(phi_edges) - 1))
    for i in range(len(theta_edges) - 1):
        t = np.linspace(theta_edges[i], theta_edges[i + 1], sub + 1)
        tm = 0.5 * (t[:-1] + t[1:])
        dt = t[1] - t[0]
        for j in range(len(phi_edges) - 1):
            p = np.linspace(phi_edges[j], phi_edges[j + 1], sub + 1)
            pm = 0.5 * (p[:-1] + p[1:])
            dp = p[1] - p[0]
            tt, pp = np.meshgrid(tm, pm, indexing="ij")
            h = V3(np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt))
            dens = sp.ggx_vndf_pdf(view, h, alpha) * np.sin(tt)
            probs[i, j] = np.sum(dens) * dt * dp
    return probs


class TestGgxVndf:
    def test_near_smooth_limit(self):
        view = V3(np.array(0.0), np.array(0.0), np.array(1.0))
        for u1 in np.linspace(0, 0.999, 7):
            for u2 in np.linspace(0, 0.999, 7):
                h = sp.sample_ggx_vndf(view, 1e-4, np.array(u1), np.array(u2))
                d = np.sqrt(h.x ** 2 + h.y ** 2 + (h.z - 1.0) ** 2)
                assert d < 0.02

    def test_normal_incidence_d_value(self):
        assert np.isclose(sp.ggx_d(0.5, 1.0), 1.0 / (np.pi * 0.25), rtol=1e-12)

    def test_rejects_below_horizon_view(self):
        with pytest.raises(sp.DegenerateViewError):
            sp.sample_ggx_vndf(V3(np.array(0.6), np.array(0.0), np.array(-0.2)),
                               0.3, np.array(0.5), np.array(0.5))

    def test_pdf_integrates_to_one(self):
        view = V3(np.array(np.sin(0.7)), np.array(0.0), np.array(np.cos(0.7)))
        d = uniform_hemisphere(1_000_000, seed=3)
        mean_pdf = np.mean(sp.ggx_vndf_pdf(view, d, 0.4))
        assert abs(mean_pdf * 2.0 * np.pi - 1.0) < 0.01

    def test_histogram_matches_analytic_density(self):
        alpha = 0.3
        ang = np.pi / 4
        view = V3(np.array(np.sin(ang)), np.array(0.0), np.array(np.cos(ang)))
        n = 1_000_000
        r = sp.RngStream(21, 0)
        h = sp.sample_ggx_vndf(view, alpha, r.uniform(n), r.uniform(n))
        theta = np.arccos(np.clip(h.z, -1, 1))
        edges = np.linspace(0, np.pi / 2, 65)
        counts, _ = np.histogram(theta, bins=edges)
        probs = vndf_density_grid(view, alpha, edges, np.linspace(0, 2 * np.pi, 33)).sum(axis=1)
        expected = n * probs / probs.sum()
        keep = expected > 5
        if (~keep).any():
            counts = np.append(counts[keep], counts[~keep].sum())
            expected = np.append(expected[keep], expected[~keep].sum())
        assert stats.chisquare(counts, expected * counts.sum() / expected.sum()).pvalue > 0.01

    def test_matches_rejection_oracle(self):
        alpha = 0.35
        ang = 0.9
        view = V3(np.array(np.sin(ang)), np.array(0.0), np.array(np.cos(ang)))
        n = 200_000
        r = sp.RngStream(5, 0)
        h_cap = sp.sample_ggx_vndf(view, alpha, r.uniform(n), r.uniform(n))

        # rejection oracle: uniform hemisphere proposals accepted with prob D_vis / M
        rr = sp.RngStream(6, 0)
        accepted = []
        bound = None
        while sum(len(a) for a in accepted) < n:
            m = 400_000
            prop = uniform_hemisphere(m, seed=int(rr.uniform() * 2 ** 31))
            dens = sp.ggx_vndf_pdf(view, prop, alpha)
            if bound is None:
                bound = dens.max() * 1.5
            keep = rr.uniform(m) < dens / bound
            accepted.append(np.stack([prop.x[keep], prop.y[keep], prop.z[keep]], -1))
        ref = np.concatenate(accepted)[:n]

        t_edges = np.linspace(0, np.pi / 2, 65)
        p_edges = np.linspace(0, 2 * np.pi, 65)

        def hist2(x, y, z):
            t = np.arccos(np.clip(z, -1, 1))
            p = np.mod(np.arctan2(y, x), 2 * np.pi)
            return np.histogram2d(t, p, bins=[t_edges, p_edges])[0].ravel()

        a = hist2(h_cap.x, h_cap.y, h_cap.z)
        b = hist2(ref[:, 0], ref[:, 1], ref[:, 2])
        both = a + b
        keep = both >= 10
        a2 = np.append(a[keep], a[~keep].sum())
        b2 = np.append(b[keep], b[~keep].sum())
        tot = a2 + b2
        ok = tot > 0
        stat = np.sum((a2[ok] - b2[ok]) ** 2 / tot[ok])
        p = stats.chi2.sf(stat, df=ok.sum() - 1)
        assert p > 0.01


class TestAntithetic:
    def test_pole_half_vector_is_fixed_point(self):
        view = V3(np.array(0.3), np.array(0.1), np.array(0.94)).normalized()
        wi = reflect(view, V3(np.array(0.0), np.array(0.0), np.array(1.0)))
        pair = sp.make_antithetic(view, wi, 1.0, lambda d: 1.0)
        assert np.allclose(pair.antithetic.values(), pair.primary.values(), atol=1e-12)

    def test_azimuth_rotated_by_pi_same_theta(self):
        view = V3(np.array(0.2), np.array(-0.3), np.array(0.93)).normalized()
        theta_h, phi_h = 0.4, 0.3
        h = V3(np.array(np.sin(theta_h) * np.cos(phi_h)),
               np.array(np.sin(theta_h) * np.sin(phi_h)),
               np.array(np.cos(theta_h)))
        wi = reflect(view, h)
        pair = sp.make_antithetic(view, wi, 1.0, lambda d: 2.0)
        h2 = (view + pair.antithetic).normalized()
        assert np.isclose(h2.z, h.z, atol=1e-10)
        phi2 = np.mod(np.arctan2(h2.y, h2.x), 2 * np.pi)
        assert np.isclose(phi2, np.mod(phi_h + np.pi, 2 * np.pi), atol=1e-10)
        assert pair.antithetic_pdf == 2.0
