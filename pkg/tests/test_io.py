import json

import numpy as np
import pytest

from nested_hmm.em import EmConfig, fit, pairwise_loglik
from nested_hmm.errors import ConfigError, DataError
from nested_hmm.inference import sandwich, select_grid
from nested_hmm.io import (
    RunConfig,
    load_fit,
    load_panel,
    parse_config_text,
    read_grid,
    save_fit,
    write_grid,
    write_latent,
    write_panel,
)
from nested_hmm.model import ModelSpec
from nested_hmm.simulate import CovariateGenerator, SimDesign, simulate

from _oracles import random_theta

GOOD = """cluster_id,unit_id,t,y,region,age
A,1,1,0,1.5,30
A,1,2,1,2.5,31
A,1,3,1,3.5,32
A,2,1,1,1.5,40
A,2,2,0,2.5,41
A,2,3,0,3.5,42
B,1,1,0,0,50
B,1,2,0,0,51
B,1,3,1,0,52
B,2,3,1,0,22
B,2,1,1,0,20
B,2,2,1,0,21
"""


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_happy_path(tmp_path):
    data = load_panel(_write(tmp_path, GOOD), cluster_covariates=["region"])
    assert data.n_clusters == 2 and data.T == 3 and data.n_units == 4
    assert data.cluster_covariate_names == ("region",) and data.unit_covariate_names == ("age",)
    # unsorted rows are sorted by occasion
    np.testing.assert_array_equal(data.clusters[1].units[1].unit_covariates[:, 0], [20, 21, 22])
    np.testing.assert_array_equal(data.clusters[0].cluster_covariates[:, 0], [1.5, 2.5, 3.5])


def test_cluster_covariate_must_agree_within_cluster_occasion(tmp_path):
    bad = GOOD.replace("A,2,2,0,2.5,41", "A,2,2,0,9.0,41")
    with pytest.raises(DataError) as err:
        load_panel(_write(tmp_path, bad), cluster_covariates=["region"])
    d = err.value.details
    assert (d["cluster"], d["t"], d["column"]) == ("A", 2, "region")
    assert d["line"] == 6


def test_gap_in_occasions(tmp_path):
    bad = GOOD.replace("A,1,2,1,2.5,31\n", "")
    with pytest.raises(DataError, match="not contiguous"):
        load_panel(_write(tmp_path, bad), cluster_covariates=["region"])


@pytest.mark.parametrize(
    "old, new, match",
    [
        ("cluster_id,unit_id,t,y", "cluster,unit_id,t,y", "line 1"),
        ("A,1,2,1,2.5,31", "A,1,2,yes,2.5,31", "line 3"),
        ("A,1,2,1,2.5,31", "A,1,2,1,2.5,", "line 3: missing"),
        ("A,1,2,1,2.5,31", "A,1,2.5,1,2.5,31", "line 3"),
        ("A,1,3,1,3.5,32", "A,1,2,1,3.5,32", "line 4: duplicate"),
        ("A,1,2,1,2.5,31", "A,1,2,1,2.5", "line 3: expected 6 fields"),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, old, new, match):
    with pytest.raises(DataError, match=match):
        load_panel(_write(tmp_path, GOOD.replace(old, new)), cluster_covariates=["region"])


def test_unknown_cluster_covariate(tmp_path):
    with pytest.raises(DataError, match="not in header"):
        load_panel(_write(tmp_path, GOOD), cluster_covariates=["nope"])


def _sim(seed=0, H=8):
    spec = ModelSpec(k1=2, k2=2, cluster_transition="tridiagonal", unit_covariates=("x",), cluster_covariates=("g",))
    theta = random_theta(np.random.default_rng(seed), spec, scale=0.4)
    design = SimDesign(H, (1, 4), 4, spec, theta, {"x": CovariateGenerator("uniform", 0, 1)}, {"g": CovariateGenerator("binary", 0.5)}, seed=seed)
    return spec, theta, *simulate(design)


def test_write_then_load_round_trip(tmp_path):
    spec, theta, data, latent = _sim()
    path = tmp_path / "sim.csv"
    write_panel(data, path)
    back = load_panel(path, spec)
    assert back.n_units == data.n_units
    assert pairwise_loglik(back, spec, theta) == pairwise_loglik(data, spec, theta)
    write_latent(latent, data, tmp_path / "latent.csv")
    header = (tmp_path / "latent.csv").read_text().splitlines()[0]
    assert header == "cluster_id,unit_id,t,cluster_state,unit_state"
    assert "state" not in path.read_text().splitlines()[0]


def test_config_parsing():
    values = parse_config_text("k1 = 3  # cluster states\n\nfamily=gaussian\nunit_covariate.x = uniform:0:1\n")
    assert values == {"k1": "3", "family": "gaussian", "unit_covariate.x": "uniform:0:1"}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("k3 = 1")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("k1 = 1\nk1 = 2")
    with pytest.raises(ConfigError, match="expected"):
        parse_config_text("just words")


def test_run_config_builds_design(tmp_path):
    cfg_path = _write(tmp_path, """
k1 = 3
k2 = 2
cluster_transition = tridiagonal
unit_transition = unconstrained
unit_covariates = skill
intercept = -1
alpha = 0, 0.5, 2
beta = 0, 1
delta = 0.3
lambda = 0.2, 0.5, 0.3
pi = 0.4, 0.6
rho_cluster = 0.087
Pi = 0.9, 0.1; 0.2, 0.8
H = 4
cluster_size_min = 2
cluster_size_max = 3
T = 5
unit_covariate.skill = binary:0.5
""", "run.cfg")
    cfg = RunConfig.from_file(cfg_path, {"seed": 7, "threads": None})
    design = cfg.sim_design()
    assert design.seed == 7 and design.H == 4 and design.cluster_size == (2, 3)
    assert design.theta.Lambda[0, 1] == 0.087
    np.testing.assert_array_equal(design.theta.Pi, [[0.9, 0.1], [0.2, 0.8]])
    assert cfg.em_config().random_seed == 7
    with pytest.raises(ConfigError):
        RunConfig.from_file(cfg_path, {"bogus": 1})


def test_fit_json_round_trip(tmp_path):
    spec, _, data, _ = _sim(seed=3, H=30)
    result = fit(data, spec, EmConfig(n_random_starts=1, max_iterations=80))
    report = sandwich(data, spec, result.theta_hat, ploglik=result.ploglik)
    path = tmp_path / "fit.json"
    save_fit(path, result, report, {"k1": "2"})
    spec2, theta2, raw = load_fit(path)
    assert spec2 == spec
    for name in ("lambda_", "Lambda", "pi", "Pi", "alpha", "beta", "gamma", "delta"):
        np.testing.assert_allclose(getattr(theta2, name), getattr(result.theta_hat, name), rtol=0, atol=1e-12)
    assert abs(pairwise_loglik(data, spec2, theta2) - raw["ploglik"]) < 1e-9
    assert raw["inference"]["table"][0]["parameter"] == "intercept"
    assert len(raw["starts"]) == 2 and all("trace" in s for s in raw["starts"])
    # re-serializing the loaded document reproduces the file
    assert json.dumps(raw, indent=2) + "\n" == path.read_text()


def test_grid_file_layout(tmp_path):
    spec, _, data, _ = _sim(seed=4, H=10)
    grid = select_grid(data, [1, 2], [1, 2, 3], spec, EmConfig(n_random_starts=0, max_iterations=30))
    path = tmp_path / "grid.csv"
    write_grid(grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k1\\k2,1,2,3"
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2"]
    assert path.read_text().count("*") == 1
    k1, k2, vals, best = read_grid(path)
    assert (k1, k2, best) == ([1, 2], [1, 2, 3], grid.best)
    np.testing.assert_allclose(vals, grid.clic_table(), atol=5e-4)
